"""ADPCM with linear and nonlinear (MLP) prediction."""
