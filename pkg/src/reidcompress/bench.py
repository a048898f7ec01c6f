"""Compression-ratio sweep: train every (method, dim, quantized) cell and score it."""

import time
from dataclasses import dataclass, fields

from . import model as M
from .dataset import generate_synthetic, split_identities, split_query_gallery
from .errors import ConfigurationError
from .retrieval import evaluate_config
from .store import size_report
from .training import TrainConfig, iterative_prune_train, train

METHODS = ("full", "slice", "lowrank", "prune")
CSV_HEADER = "method,dim,quantized,ratio,mAP,rank1,rank5,epochs,seconds"


@dataclass(frozen=True)
class SweepConfig:
    ids: int = 200
    views: int = 10
    feature_dim: int = 48
    intrinsic_dim: int = 8
    noise: float = 0.05
    seed: int = 0
    hidden: int = 128
    embed_dim: int = 96
    epochs: int = 40
    lr: float = 0.05
    margin: float = 0.3
    batch_size: int = 32
    methods: tuple = ("slice", "lowrank", "prune")
    # 96 * 32 bits over these sizes gives 1.33, 1.6, 2, 4, 12, 24 (x4 more with int8)
    dims: tuple = (72, 60, 48, 24, 8, 4)
    quantization: str = "both"  # off | on | both
    prune_rounds: int = 5
    retrain_fraction: float = 0.2
    train_fraction: float = 0.5
    queries_per_identity: int = 2
    timing: bool = False

    def __post_init__(self):
        if not self.methods:
            raise ConfigurationError("methods must not be empty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigurationError(f"unknown methods: {sorted(bad)}")
        if any(not 1 <= d <= self.embed_dim for d in self.dims):
            raise ConfigurationError(f"dims must lie in [1, {self.embed_dim}]")
        if self.quantization not in ("off", "on", "both"):
            raise ConfigurationError("quantization must be off, on or both")

    @property
    def quant_flags(self):
        return {"off": (False,), "on": (True,), "both": (False, True)}[self.quantization]

    def train_config(self, mode=None, qat=False):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.lr,
                           triplet_margin=self.margin, seed=self.seed,
                           mode=mode or M.CompressionMode.full(), qat=qat,
                           retrain_fraction=self.retrain_fraction, prune_rounds=self.prune_rounds,
                           hidden=self.hidden, embed_dim=self.embed_dim)


@dataclass(frozen=True)
class SweepRow:
    method: str
    compressed_dim: int
    quantized: bool
    ratio: float
    mAP: float
    rank1: float
    rank5: float
    train_epochs_total: int
    wall_time: float


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys may use - or _."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _convert(name, typ, value):
    if isinstance(value, str):
        if typ is bool:
            low = value.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ConfigurationError(f"{name}: not a boolean: {value!r}")
            return low in ("1", "true", "yes", "on")
        if typ is tuple:
            items = [v.strip() for v in value.split(",") if v.strip()]
            return tuple(int(v) for v in items) if name == "dims" else tuple(items)
        return typ(value)
    return tuple(value) if typ is tuple else value


def sweep_config_from(mapping):
    types = {f.name: type(f.default) for f in fields(SweepConfig)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in types:
            raise ConfigurationError(f"unknown sweep setting {key!r}")
        try:
            kwargs[key] = _convert(key, types[key], value)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from exc
    return SweepConfig(**kwargs)


def prepare_data(cfg):
    ds = generate_synthetic(cfg.ids, cfg.views, cfg.feature_dim, cfg.intrinsic_dim,
                            cfg.noise, cfg.seed)
    train_ds, test_ds = split_identities(ds, cfg.train_fraction, cfg.seed)
    split = split_query_gallery(test_ds, cfg.queries_per_identity, cfg.seed)
    return train_ds, test_ds, split


def _cells(cfg):
    for q in cfg.quant_flags:
        yield "full", cfg.embed_dim, q
    for method in cfg.methods:
        if method == "full":
            continue
        for d in cfg.dims:
            for q in cfg.quant_flags:
                yield method, d, q


def run_sweep(cfg, progress=None):
    """One SweepRow per (method, dim, quantized) cell, baseline first, in a fixed order.

    Every cell trains from the same seed, so e.g. ``slice`` at the full width
    reproduces the baseline exactly.
    """
    train_ds, test_ds, split = prepare_data(cfg)
    baseline = {}

    def full_model(q):
        if q not in baseline:
            t0 = time.perf_counter()
            tm = train(train_ds, cfg.train_config(qat=q))
            baseline[q] = (tm, time.perf_counter() - t0)
        return baseline[q]

    rows = []
    for method, d, q in _cells(cfg):
        try:
            start = time.perf_counter()
            extra = 0.0
            if method == "full":
                tm = full_model(q)[0]
            elif method == "prune":
                # the full-width run is shared; its cost is charged to each prune cell
                base, extra = full_model(q)
                if d == cfg.embed_dim:
                    tm = base
                else:
                    tm = iterative_prune_train(train_ds, cfg.train_config(qat=q), d, pretrained=base)
            else:
                mode = M.CompressionMode.slice(d) if method == "slice" else M.CompressionMode.lowrank(d)
                tm = train(train_ds, cfg.train_config(mode, qat=q))
            rep = evaluate_config(tm, split, test_ds, quantize_storage=q)
            seconds = time.perf_counter() - start + extra
        except Exception as exc:
            raise RuntimeError(
                f"sweep cell (method={method}, dim={d}, quantized={q}) failed: {exc}") from exc
        ratio = size_report(cfg.embed_dim, 32, d, 8 if q else 32).ratio
        row = SweepRow(method, d, q, ratio, rep.mAP, rep.rank1, rep.rank5, tm.epochs_run, seconds)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def format_row(row, timing=False):
    secs = f"{row.wall_time:.3f}" if timing else ""
    return (f"{row.method},{row.compressed_dim},{int(row.quantized)},{row.ratio:.4f},"
            f"{row.mAP:.6f},{row.rank1:.6f},{row.rank5:.6f},{row.train_epochs_total},{secs}")


def emit_csv(rows, path, timing=False):
    """Write the sweep table; ``seconds`` stays blank unless ``timing`` is set."""
    if not rows:
        raise ValueError("no rows to write")
    text = CSV_HEADER + "\n" + "".join(format_row(r, timing) + "\n" for r in rows)
    data = text.encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def emit_plot_data(rows, path):
    """gnuplot-style blocks, one per (method, quantized): ``ratio mAP`` pairs sorted by ratio."""
    if not rows:
        raise ValueError("no rows to write")
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.quantized), []).append(r)
    blocks = []
    for (method, q), members in groups.items():
        lines = [f"# method={method} quantized={int(q)}", "# ratio mAP"]
        lines += [f"{r.ratio:.4f} {r.mAP:.6f}" for r in sorted(members, key=lambda r: r.ratio)]
        blocks.append("\n".join(lines))
    data = ("\n\n\n".join(blocks) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)

