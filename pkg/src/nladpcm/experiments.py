"""Grid sweeps over codec configurations and pivoting of the results.

A grid file is plain ``key = v1, v2, ...`` text, one key per line, ``#``
comments allowed::

    schemes = backward-ld
    nq = 2, 3, 4, 5
    frame_len = 50, 100, 200
    order = 10
    lambda = 1, 0.92
    corpus = speech/test

Axes only expand for schemes that use them (``lambda`` for backward-ld,
``update_period`` for backward-nl, ``allocation``/``clip_fraction``/
``quantizer``/``weight_mode`` for forward-nl), so a grid's cardinality is
the sum over schemes of the product of that scheme's axes.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .codec import CodecConfig, Scheme, WeightMode, decode, encode, train_forward_frame
from .metrics import (DEFAULT_SEGMENT_LEN, framewise_prediction_gain, overall_bitrate,
                      prediction_gain, segsnr)
from .mlp import MlpPredictor, TrainConfig, collect_histograms, pool_parameters
from .quantizer import (BitAllocation, QuantizerKind, WeightQuantizerBank, design_bank)
from .signal_io import PcmSignal, frames, load_corpus

COLUMNS = ("scheme", "nq", "frame_len", "order", "lambda", "update_period", "allocation",
           "clip_fraction", "quantizer", "weight_mode", "gp_db", "segsnr_db", "bitrate_bps",
           "wall_seconds", "error")

QUANTIZER_NAMES = {"uniform": QuantizerKind.UNIFORM,
                   "equal-occupancy": QuantizerKind.EQUAL_OCCUPANCY}
QUANTIZER_LABELS = {v: k for k, v in QUANTIZER_NAMES.items()}


class GridError(ValueError):
    pass


def fmt(v: float) -> str:
    """Six significant digits; infinities spelled out."""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def _range_or_list(text: str) -> list[str]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ".." in item and not item.replace("..", "").replace(".", "").isalpha():
            lo, hi = item.split("..")
            if lo.strip().lstrip("-").isdigit() and hi.strip().lstrip("-").isdigit():
                out.extend(str(v) for v in range(int(lo), int(hi) + 1))
                continue
        out.append(item)
    return out


@dataclass
class ExperimentGrid:
    schemes: list[Scheme] = field(default_factory=lambda: [Scheme.BACKWARD_LD])
    nq: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    frame_len: list[int] = field(default_factory=lambda: [200])
    order: list[int] = field(default_factory=lambda: [10])
    lambdas: list[float] = field(default_factory=lambda: [1.0])
    update_period: list[int | None] = field(default_factory=lambda: [None])
    allocation: list[BitAllocation] = field(default_factory=lambda: [BitAllocation()])
    clip_fraction: list[float] = field(default_factory=lambda: [0.0])
    quantizer: list[QuantizerKind] = field(
        default_factory=lambda: [QuantizerKind.EQUAL_OCCUPANCY])
    weight_mode: list[WeightMode] = field(default_factory=lambda: [WeightMode.QUANTIZED])
    corpus: list[str] = field(default_factory=list)
    train_corpus: list[str] = field(default_factory=list)
    codebooks: str | None = None
    output: str | None = None
    seed: int = 0
    sample_rate_hz: int = 8000
    segment_len: int = DEFAULT_SEGMENT_LEN
    gp_mode: str = "global"
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def parse(cls, text: str, base_dir: str = ".") -> "ExperimentGrid":
        g = cls()
        train_kw = {}
        allocations: list[BitAllocation] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GridError(f"line {lineno}: expected 'key = values'")
            key, _, value = line.partition("=")
            key = key.strip().lower().replace("-", "_")
            vals = _range_or_list(value)
            try:
                if key in ("schemes", "scheme"):
                    g.schemes = [Scheme.parse(v) for v in vals]
                elif key == "nq":
                    g.nq = [int(v) for v in vals]
                elif key in ("frame_len", "frame_lens", "longframe"):
                    g.frame_len = [int(v) for v in vals]
                elif key in ("order", "orders"):
                    g.order = [int(v) for v in vals]
                elif key in ("lambda", "lambdas"):
                    g.lambdas = [float(v) for v in vals]
                elif key in ("update_period", "update_periods", "nl_update_period"):
                    g.update_period = [None if v.lower() in ("frame", "none") else int(v)
                                       for v in vals]
                elif key in ("allocation", "allocations"):
                    allocations.extend(BitAllocation.parse(v) for v in vals)
                elif key in ("bits_per_param", "weight_bits"):
                    allocations.extend(BitAllocation.uniform(int(v)) for v in vals)
                elif key == "allocation_range":
                    # full factorial over each group's bit range
                    bits = [int(v) for v in vals]
                    allocations.extend(BitAllocation(*c) for c in itertools.product(bits, repeat=4))
                elif key in ("clip_fraction", "clip_fractions"):
                    g.clip_fraction = [float(v) for v in vals]
                elif key in ("quantizer", "quantizers"):
                    g.quantizer = [QUANTIZER_NAMES[v.lower()] for v in vals]
                elif key in ("weight_mode", "weight_modes"):
                    g.weight_mode = [WeightMode(v.lower()) for v in vals]
                elif key == "corpus":
                    g.corpus = [os.path.join(base_dir, v) for v in vals]
                elif key == "train_corpus":
                    g.train_corpus = [os.path.join(base_dir, v) for v in vals]
                elif key == "codebooks":
                    g.codebooks = os.path.join(base_dir, vals[0])
                elif key == "output":
                    g.output = os.path.join(base_dir, vals[0])
                elif key == "seed":
                    g.seed = int(vals[0])
                elif key == "sample_rate":
                    g.sample_rate_hz = int(vals[0])
                elif key == "segment_len":
                    g.segment_len = int(vals[0])
                elif key == "gp":
                    if vals[0] not in ("global", "framewise"):
                        raise GridError("gp must be 'global' or 'framewise'")
                    g.gp_mode = vals[0]
                elif key == "epochs":
                    train_kw["epochs"] = int(vals[0])
                elif key == "learn_rate":
                    train_kw["learn_rate"] = float(vals[0])
                elif key == "init_scale":
                    train_kw["init_scale"] = float(vals[0])
                else:
                    raise GridError(f"line {lineno}: unknown key {key!r}")
            except (KeyError, ValueError) as exc:
                if isinstance(exc, GridError):
                    raise
                raise GridError(f"line {lineno}: {exc}") from exc
        if allocations:
            g.allocation = allocations
        g.train = TrainConfig(seed=g.seed, **train_kw)
        return g

    @classmethod
    def load(cls, path: str) -> "ExperimentGrid":
        with open(path) as fh:
            return cls.parse(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))

    def points(self) -> list["GridPoint"]:
        out = []
        for scheme in self.schemes:
            for nq, fl in itertools.product(self.nq, self.frame_len):
                if scheme is Scheme.BACKWARD_LMS:
                    extra = [dict(order=o) for o in self.order]
                elif scheme is Scheme.BACKWARD_LD:
                    extra = [dict(order=o, lam=lam)
                             for o, lam in itertools.product(self.order, self.lambdas)]
                elif scheme is Scheme.BACKWARD_NL:
                    extra = [dict(nl_update_period=p) for p in self.update_period]
                else:
                    extra = []
                    for a, qk, wm in itertools.product(self.allocation, self.quantizer,
                                                       self.weight_mode):
                        clips = self.clip_fraction if qk is QuantizerKind.UNIFORM else [None]
                        extra.extend(dict(allocation=a, _quantizer=qk, _clip=c, _mode=wm)
                                     for c in clips)
                for kw in extra:
                    out.append(GridPoint(scheme=scheme, nq=nq, frame_len=fl, **kw))
        return out


@dataclass(frozen=True)
class GridPoint:
    scheme: Scheme
    nq: int
    frame_len: int
    order: int = 10
    lam: float = 1.0
    nl_update_period: int | None = None
    allocation: BitAllocation = BitAllocation()
    _quantizer: QuantizerKind | None = None
    _clip: float | None = None
    _mode: WeightMode = WeightMode.QUANTIZED

    def config(self, grid: ExperimentGrid) -> CodecConfig:
        return CodecConfig(scheme=self.scheme, nq=self.nq, frame_len=self.frame_len,
                           order=self.order, lam=self.lam,
                           nl_update_period=self.nl_update_period, allocation=self.allocation,
                           train=grid.train, sample_rate_hz=grid.sample_rate_hz)

    def row_prefix(self, config: CodecConfig | None) -> dict:
        s = self.scheme
        return {
            "scheme": s.label,
            "nq": str(self.nq),
            "frame_len": str(self.frame_len),
            "order": str(self.order) if not s.is_nonlinear else "",
            "lambda": fmt(config.lam if config else self.lam) if s is Scheme.BACKWARD_LD else "",
            "update_period": (str(config.nl_update_period if config else self.nl_update_period)
                              if s is Scheme.BACKWARD_NL else ""),
            "allocation": str(self.allocation) if s is Scheme.FORWARD_NL else "",
            "clip_fraction": fmt(self._clip) if self._clip is not None else "",
            "quantizer": QUANTIZER_LABELS[self._quantizer] if self._quantizer is not None else "",
            "weight_mode": self._mode.value if s is Scheme.FORWARD_NL else "",
        }


# per-process caches; sweep workers each fill their own
_corpus_cache: dict = {}
_nets_cache: dict = {}


def _corpus(paths: Sequence[str], rate: int) -> PcmSignal:
    key = (tuple(paths), rate)
    if key not in _corpus_cache:
        _corpus_cache[key] = load_corpus(paths, rate)
    return _corpus_cache[key]


def frame_nets(config: CodecConfig, signal: PcmSignal, key=None) -> list[MlpPredictor]:
    """The ForwardNl encoder's unquantized per-frame nets for ``signal``."""
    ck = (key, config.frame_len, config.train)
    if key is not None and ck in _nets_cache:
        return _nets_cache[ck]
    x = signal.samples
    nets = [train_forward_frame(config, x, f.start_index, f.stop_index, i)
            for i, f in enumerate(frames(signal, config.frame_len))]
    if key is not None:
        _nets_cache[ck] = nets
    return nets


def _bank_for(point: GridPoint, config: CodecConfig, grid: ExperimentGrid
              ) -> WeightQuantizerBank:
    if grid.train_corpus:
        train = _corpus(grid.train_corpus, grid.sample_rate_hz)
        pools = pool_parameters(frame_nets(config, train, key=("train", tuple(grid.train_corpus))))
        return design_bank(pools, config.allocation, point._quantizer, point._clip or 0.0)
    if grid.codebooks:
        return load_bank(grid.codebooks, config.allocation, point._quantizer)
    raise GridError("forward-nl points need train_corpus or codebooks")


def run_point(point: GridPoint, grid: ExperimentGrid, timing: bool = False) -> dict:
    t0 = time.perf_counter()
    row = point.row_prefix(None)
    row.update({c: "" for c in COLUMNS if c not in row})
    try:
        config = point.config(grid)
        row.update(point.row_prefix(config))
        signal = _corpus(grid.corpus, grid.sample_rate_hz)
        bank, nets = None, None
        if point.scheme is Scheme.FORWARD_NL:
            bank = _bank_for(point, config, grid)
            nets = frame_nets(config, signal, key=("test", tuple(grid.corpus)))
        result = encode(config, signal, bank, weight_mode=point._mode, nets=nets)
        if point._mode is WeightMode.UNQUANTIZED:
            recon = result.reconstruction
        else:
            recon = decode(result.bitstream, bank)
        errors = result.diagnostics.prediction_errors
        if grid.gp_mode == "framewise":
            gp = framewise_prediction_gain(signal, errors, config.frame_len)
        else:
            gp = prediction_gain(signal, errors)
        row["gp_db"] = fmt(gp)
        row["segsnr_db"] = fmt(segsnr(signal, recon, grid.segment_len)[0])
        row["bitrate_bps"] = fmt(overall_bitrate(config))
    except Exception as exc:  # recorded per point; the sweep carries on
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    if timing:
        row["wall_seconds"] = f"{time.perf_counter() - t0:.3f}"
    return row


def _run_point_star(args):
    return run_point(*args)


def sweep(grid: ExperimentGrid, workers: int = 1, timing: bool = False) -> list[dict]:
    """Run every grid point; rows come back in grid order."""
    points = grid.points()
    if workers <= 1:
        return [run_point(p, grid, timing) for p in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point_star, [(p, grid, timing) for p in points]))


def write_rows(rows: Iterable[dict], path_or_file, columns: Sequence[str] = COLUMNS) -> None:
    def _write(fh):
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_file)


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in COLUMNS if c not in reader.fieldnames]
        if missing:
            raise GridError(f"results CSV lacks columns: {', '.join(missing)}")
        return list(reader)


# ---------------------------------------------------------------------------
# Codebook training
# ---------------------------------------------------------------------------

def codebook_filename(kind: QuantizerKind, bits: int) -> str:
    return f"{QUANTIZER_LABELS[QuantizerKind(kind)]}-{bits}.nlwq"


def load_bank(path: str, allocation: BitAllocation,
              kind: QuantizerKind = QuantizerKind.EQUAL_OCCUPANCY) -> WeightQuantizerBank:
    """Load a bank file, or assemble one for ``allocation`` from a directory."""
    if os.path.isdir(path):
        needed = sorted(set(allocation.as_tuple()))
        banks = {b: WeightQuantizerBank.load(os.path.join(path, codebook_filename(kind, b)))
                 for b in needed}
        return WeightQuantizerBank.combine(banks, allocation)
    return WeightQuantizerBank.load(path)


def train_codebooks(corpus: PcmSignal, frame_len: int, bits: Sequence[int], out_dir: str,
                    train: TrainConfig = TrainConfig(), clip_fraction: float = 0.0,
                    bins: int = 50) -> dict:
    """Pool per-frame forward nets over ``corpus`` and design codebooks.

    Writes ``histograms.csv`` plus one bank file per (family, bits). Returns
    the written paths.
    """
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    config = CodecConfig(scheme=Scheme.FORWARD_NL, nq=2, frame_len=frame_len, train=train,
                         sample_rate_hz=corpus.sample_rate_hz)
    nets = frame_nets(config, corpus)
    os.makedirs(out_dir, exist_ok=True)
    hist = collect_histograms(nets, bins=bins)
    hist_path = os.path.join(out_dir, "histograms.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "bin_lo", "bin_hi", "count"])
        for kind, d in hist.items():
            for lo, hi, c in zip(d.edges[:-1], d.edges[1:], d.counts):
                w.writerow([kind.name.lower(), fmt(float(lo)), fmt(float(hi)), int(c)])
    pools = pool_parameters(nets)
    written = {"histograms": hist_path, "banks": []}
    for b in bits:
        alloc = BitAllocation.uniform(b)
        # equal-occupancy first: its distinct-value precondition is the binding one
        for kind in (QuantizerKind.EQUAL_OCCUPANCY, QuantizerKind.UNIFORM):
            bank = design_bank(pools, alloc, kind, clip_fraction)
            p = os.path.join(out_dir, codebook_filename(kind, b))
            bank.save(p)
            written["banks"].append(p)
    return written


# ---------------------------------------------------------------------------
# Report pivots
# ---------------------------------------------------------------------------

def _ok(rows):
    return [r for r in rows if not r.get("error")]


def _num(s: str) -> float:
    return float(s) if s not in ("", None) else float("nan")


def pivot_table1(rows) -> list[dict]:
    """Sample-adaptive LMS rows: one row per (order, frame_len, nq)."""
    out = [{"order": r["order"], "frame_len": r["frame_len"], "nq": r["nq"],
            "gp_db": r["gp_db"], "segsnr_db": r["segsnr_db"]}
           for r in _ok(rows) if r["scheme"] == Scheme.BACKWARD_LMS.label]
    return sorted(out, key=lambda r: (int(r["order"]), int(r["frame_len"]), int(r["nq"])))


def pivot_table23(rows) -> tuple[list[dict], list[str]]:
    """Block-adaptive LD rows: (order, nq, frame_len) by lambda."""
    ld = [r for r in _ok(rows) if r["scheme"] == Scheme.BACKWARD_LD.label]
    lambdas = sorted({r["lambda"] for r in ld}, key=lambda v: -_num(v))
    cells: dict = {}
    for r in ld:
        key = (r["order"], r["nq"], r["frame_len"])
        cell = cells.setdefault(key, {"order": r["order"], "nq": r["nq"],
                                      "frame_len": r["frame_len"]})
        cell[f"gp_db@lambda={r['lambda']}"] = r["gp_db"]
        cell[f"segsnr_db@lambda={r['lambda']}"] = r["segsnr_db"]
    cols = ["order", "nq", "frame_len"]
    for lam in lambdas:
        cols += [f"gp_db@lambda={lam}", f"segsnr_db@lambda={lam}"]
    out = sorted(cells.values(), key=lambda c: (int(c["order"]), int(c["nq"]),
                                                int(c["frame_len"])))
    return out, cols


def pivot_fig8(rows) -> list[dict]:
    out = [{"scheme": r["scheme"], "bitrate_bps": r["bitrate_bps"], "segsnr_db": r["segsnr_db"],
            "nq": r["nq"], "frame_len": r["frame_len"], "allocation": r["allocation"]}
           for r in _ok(rows)]
    return sorted(out, key=lambda r: (_num(r["bitrate_bps"]), r["scheme"]))


def _axis_key(v: str):
    """Numeric sort key for axis cells such as '6-6-6-6', '0.001' or ''."""
    try:
        return tuple(float(p) for p in v.split("-")) if v else ()
    except ValueError:
        return (v,)


def pivot_by(rows, scheme: Scheme, axis: str) -> tuple[list[dict], list[str]]:
    """Plot-ready series of (axis value, gp, segsnr) for one scheme."""
    cols = ["nq", "frame_len", axis, "quantizer", "weight_mode", "gp_db", "segsnr_db"]
    out = [{c: r[c] for c in cols} for r in _ok(rows) if r["scheme"] == scheme.label]
    out.sort(key=lambda r: (int(r["nq"]), int(r["frame_len"]), r["quantizer"],
                            r["weight_mode"], _axis_key(r[axis])))
    return out, cols


REPORT_FILES = ("table1.csv", "table23.csv", "fig1_2_update_period.csv", "fig5_clip.csv",
                "fig6_7_allocation.csv", "fig8_rate_distortion.csv")


def report(rows: list[dict], out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    t1 = pivot_table1(rows)
    t23, t23_cols = pivot_table23(rows)
    period, period_cols = pivot_by(rows, Scheme.BACKWARD_NL, "update_period")
    clip, clip_cols = pivot_by(rows, Scheme.FORWARD_NL, "clip_fraction")
    alloc, alloc_cols = pivot_by(rows, Scheme.FORWARD_NL, "allocation")
    series = {
        "table1.csv": (t1, ["order", "frame_len", "nq", "gp_db", "segsnr_db"]),
        "table23.csv": (t23, t23_cols),
        "fig1_2_update_period.csv": (period, period_cols),
        "fig5_clip.csv": ([r for r in clip if r["clip_fraction"]], clip_cols),
        "fig6_7_allocation.csv": (alloc, alloc_cols),
        "fig8_rate_distortion.csv": (pivot_fig8(rows), ["scheme", "bitrate_bps", "segsnr_db",
                                                        "nq", "frame_len", "allocation"]),
    }
    written = {}
    for name, (data, cols) in series.items():
        path = os.path.join(out_dir, name)
        write_rows(data, path, cols)
        written[name] = path
    return written
