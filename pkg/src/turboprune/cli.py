"""Command-line surface: train -> prune -> eval -> export -> bench pipelines.

Configuration is a flat JSON file mirroring RunConfig; every knob can be
overridden by a flag. Exit codes: 0 success, 2 config error, 3 data/format
error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import struct
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mrf, nn, sparse, turbo, vbi
from ._accel import BACKEND
from .errors import ConfigError, DivergenceError, FormatError
from .prior import GammaHyper, HierarchicalPrior, MrfParams, read_pgm, sample_support, write_pgm

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

TRACE_HEADER = "iter,max_msg_delta,neg_elbo_surrogate,sparsity,accuracy"
BENCH_HEADER = "format,wall_ns_median,madds,index_ints"


@dataclass
class RunConfig:
    seed: int = 0
    sizes: tuple[int, ...] = (2, 32, 32, 2)
    task: str = "classification"
    dataset: dict = field(
        default_factory=lambda: {
            "name": "blobs",
            "train": 5000,
            "test": 1000,
            "separation": 4.0,
            "noise": 1.0,
        }
    )
    a: float = 1.0
    b: float = 1.0
    a_bar: float = 1.0
    b_bar: float = 1e-3
    p01_row: float = 0.05
    p10_row: float = 0.05
    p01_col: float = 0.05
    p10_col: float = 0.05
    lr: float = 0.01
    batch_size: int = 64
    train_epochs: int = 30
    i_max: int = 15
    tol_turbo: float = 1e-3
    tol_a: float = 1e-4
    bcd_rounds: int = 10
    epochs_per_round: int = 3
    sigma_init: float = 0.1
    threshold: float = 0.5
    fine_tune_epochs: int = 15
    min_side: int = 3
    spmp_max_iters: int = 50
    spmp_damping: float = 0.3
    spmp_tol: float = 1e-6
    noise_var: float = 1.0
    dump_masks: bool = False

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        for name in ("tol_turbo", "tol_a", "spmp_tol", "lr", "noise_var", "sigma_init"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("p01_row", "p10_row", "p01_col", "p10_col"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.min_side < 1:
            raise ConfigError("min_side must be >= 1")
        if self.i_max < 1 or self.bcd_rounds < 1:
            raise ConfigError("i_max and bcd_rounds must be >= 1")
        if self.train_epochs < 0 or self.fine_tune_epochs < 0 or self.epochs_per_round < 0:
            raise ConfigError("epoch counts must be >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def network(self) -> nn.NetworkDef:
        return nn.NetworkDef(sizes=self.sizes, task=self.task)

    def model(self) -> nn.LikelihoodModel:
        return nn.LikelihoodModel(kind=self.task, noise_var=self.noise_var)

    def hier_prior(self) -> HierarchicalPrior:
        net = self.network()
        hyper = GammaHyper(a=self.a, b=self.b, a_bar=self.a_bar, b_bar=self.b_bar)
        params = MrfParams(
            p01_row=self.p01_row,
            p10_row=self.p10_row,
            p01_col=self.p01_col,
            p10_col=self.p10_col,
        )
        return HierarchicalPrior(
            layers=tuple((hyper, params) for _ in net.weight_dims),
            dims=tuple(net.weight_dims),
        )

    def turbo_config(self) -> turbo.TurboConfig:
        return turbo.TurboConfig(
            max_iterations=self.i_max,
            tol=self.tol_turbo,
            threshold=self.threshold,
            spmp_max_iters=self.spmp_max_iters,
            spmp_damping=self.spmp_damping,
            spmp_tol=self.spmp_tol,
            module_a=vbi.ModuleAConfig(
                lr=self.lr,
                batch_size=self.batch_size,
                epochs_per_round=self.epochs_per_round,
                max_rounds=self.bcd_rounds,
                tol=self.tol_a,
                sigma_init=self.sigma_init,
            ),
        )


@dataclass
class MetricsRow:
    accuracy_pct: float
    nonzero_pct: float
    pruned_structure: list[int]
    flops_reduction_pct: float
    runtime_seconds: float

    def __post_init__(self):
        for name in ("accuracy_pct", "nonzero_pct", "flops_reduction_pct"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ConfigError(f"{name} must lie in [0, 100], got {value}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def make_blobs(n_train: int, n_test: int, separation: float, noise: float, seed: int):
    """Two 2-D Gaussian classes centered at +-separation/2 on both axes,
    balanced labels, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    labels = rng.permutation(np.arange(total) % 2).astype(np.int64)
    centers = np.array([[-separation / 2.0, -separation / 2.0], [separation / 2.0, separation / 2.0]])
    x = centers[labels] + noise * rng.normal(size=(total, 2))
    train = nn.Dataset(x[:n_train], labels[:n_train])
    test = nn.Dataset(x[n_train:], labels[n_train:])
    return train, test


def load_idx(images_path, labels_path) -> nn.Dataset:
    """Parse an IDX image/label pair (big-endian, u8 pixels scaled to [0, 1])."""

    def read_exact(fh, count, path):
        buf = fh.read(count)
        if len(buf) != count:
            raise FormatError(f"{path}: truncated file")
        return buf

    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad IDX image magic {magic:#010x}")
        pixels = np.frombuffer(read_exact(fh, count * rows * cols, images_path), dtype=np.uint8)
        if fh.read(1):
            raise FormatError(f"{images_path}: trailing bytes")
    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad IDX label magic {magic:#010x}")
        labels = np.frombuffer(read_exact(fh, n_labels, labels_path), dtype=np.uint8)
        if fh.read(1):
            raise FormatError(f"{labels_path}: trailing bytes")
    if count != n_labels:
        raise FormatError(f"{images_path}: {count} images vs {n_labels} labels")
    x = pixels.reshape(count, rows * cols).astype(float) / 255.0
    return nn.Dataset(x, labels.astype(np.int64))


def load_datasets(cfg: RunConfig):
    spec = dict(cfg.dataset)
    name = spec.pop("name", None)
    if name == "blobs":
        return make_blobs(
            n_train=int(spec.get("train", 5000)),
            n_test=int(spec.get("test", 1000)),
            separation=float(spec.get("separation", 4.0)),
            noise=float(spec.get("noise", 1.0)),
            seed=int(spec.get("seed", cfg.seed)),
        )
    if name == "idx":
        train = load_idx(spec["train_images"], spec["train_labels"])
        test = (
            load_idx(spec["test_images"], spec["test_labels"])
            if "test_images" in spec
            else train
        )
        return train, test
    raise ConfigError(f"unknown dataset name {name!r}; expected 'blobs' or 'idx'")


def _write_csv(path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _nonzero_fraction(weights: nn.MlpWeights) -> float:
    total = sum(w.size for w in weights.mats)
    nnz = sum(int(np.count_nonzero(w)) for w in weights.mats)
    return nnz / total


def evaluate(net: nn.NetworkDef, weights: nn.MlpWeights, test: nn.Dataset, runtime: float) -> MetricsRow:
    if net.task != "classification":
        raise ConfigError("evaluation metrics are defined for classification tasks")
    masks = [(w != 0).astype(np.uint8) for w in weights.mats]
    flops = turbo.flops_count(net, masks)
    return MetricsRow(
        accuracy_pct=100.0 * nn.accuracy(net, weights, test),
        nonzero_pct=100.0 * _nonzero_fraction(weights),
        pruned_structure=flops.structure,
        flops_reduction_pct=flops.reduction_pct,
        runtime_seconds=runtime,
    )


def forward_blocksparse(net: nn.NetworkDef, bsms: list, biases: list, x: np.ndarray) -> np.ndarray:
    """Forward pass whose matrix products run through the block-skipping
    multiply (each layer matrix transposed so the stored blocks drive it)."""
    h = np.asarray(x, dtype=float)
    last = net.n_layers - 1
    for l, (bsm, bias) in enumerate(zip(bsms, biases)):
        h = sparse.spmm(sparse.transpose(bsm), h.T).T + bias
        if l < last:
            h = np.maximum(h, 0.0)
    return h


# --- subcommands ---


def cmd_train(args) -> int:
    cfg = _load_config(args)
    net = cfg.network()
    model = cfg.model()
    train, test = load_datasets(cfg)
    rng = np.random.default_rng(cfg.seed)
    weights = nn.init_weights(net, rng)
    weights = nn.sgd_train(net, weights, train, model, cfg.train_epochs, cfg.lr, cfg.batch_size, rng)
    nn.save_weights(args.out, weights)
    if net.task == "classification":
        print(f"train accuracy: {100.0 * nn.accuracy(net, weights, train):.2f}%")
        print(f"test accuracy:  {100.0 * nn.accuracy(net, weights, test):.2f}%")
    print(f"saved weights to {args.out}")
    return 0


def _dump_iteration_masks(out_dir: Path, threshold: float):
    def hook(state: turbo.TurboState):
        for layer, bern in enumerate(state.posterior.bern):
            mask = (bern.pi >= threshold).astype(np.uint8)
            write_pgm(out_dir / f"iter{state.iteration:02d}.layer{layer}.mask.pgm", mask)
            marginal = np.rint(255.0 * state.pi[layer]).astype(np.int64)
            write_pgm(
                out_dir / f"iter{state.iteration:02d}.layer{layer}.support.pgm",
                marginal,
                maxval=255,
            )

    return hook


def cmd_prune(args) -> int:
    cfg = _load_config(args)
    net = cfg.network()
    model = cfg.model()
    train, test = load_datasets(cfg)
    weights = nn.load_weights(args.weights)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    hook = _dump_iteration_masks(out_dir, cfg.threshold) if cfg.dump_masks else None
    started = time.perf_counter()
    try:
        state, result = turbo.turbo_run(
            net,
            weights,
            train,
            cfg.hier_prior(),
            cfg.turbo_config(),
            model,
            seed=cfg.seed,
            eval_data=test,
            on_iteration=hook,
        )
    except DivergenceError:
        _write_csv(out_dir / "trace.csv", TRACE_HEADER, [])
        raise

    rng = np.random.default_rng(cfg.seed + 1)
    tuned = turbo.fine_tune(
        net, result.weights, result.masks, train, model, cfg.fine_tune_epochs, cfg.lr, cfg.batch_size, rng
    )
    runtime = time.perf_counter() - started

    _write_csv(
        out_dir / "trace.csv",
        TRACE_HEADER,
        [
            (r["iter"], r["max_msg_delta"], r["neg_elbo_surrogate"], r["sparsity"], r["accuracy"])
            for r in state.trace
        ],
    )
    nn.save_weights(out_dir / "pruned.tvbi", tuned)
    vbi.save_posterior(out_dir / "posterior.tvbi", state.posterior)
    for layer, mask in enumerate(result.masks):
        write_pgm(out_dir / f"mask.layer{layer}.pgm", mask)
    metrics = evaluate(net, tuned, test, runtime) if net.task == "classification" else None
    payload = {
        "converged": state.converged,
        "iterations": state.iteration,
        "spmp_converged": state.spmp_converged,
        "sparsity_pct": 100.0 * result.sparsity,
        "pruned_structure": result.neuron_counts,
        "flops_reduction_pct": result.flops.reduction_pct,
    }
    if metrics is not None:
        payload["metrics"] = json.loads(metrics.to_json())
    (out_dir / "prune_result.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if not state.spmp_converged:
        print("note: a support smoothing pass hit its iteration cap; proceeding with last messages")
    print(f"pruned model: {payload['sparsity_pct']:.2f}% nonzero, structure {result.neuron_counts}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    net = cfg.network()
    _, test = load_datasets(cfg)
    started = time.perf_counter()
    weights = nn.load_weights(args.weights)
    if args.tvbs:
        bsms = [sparse.load_tvbs(p) for p in args.tvbs]
        if len(bsms) != net.n_layers:
            raise ConfigError(f"{len(bsms)} block files for {net.n_layers} layers")
        out = forward_blocksparse(net, bsms, weights.biases, test.x)
        acc = float(np.mean(np.argmax(out, axis=1) == np.asarray(test.y, dtype=int)))
        weights = nn.MlpWeights([sparse.decode(b) for b in bsms], weights.biases)
        metrics = evaluate(net, weights, test, time.perf_counter() - started)
        metrics.accuracy_pct = 100.0 * acc
    else:
        metrics = evaluate(net, weights, test, time.perf_counter() - started)
    print(metrics.to_json())
    if args.out:
        Path(args.out).write_text(metrics.to_json() + "\n")
    return 0


def cmd_export(args) -> int:
    weights = nn.load_weights(args.weights)
    masks = [read_pgm(p) for p in args.masks]
    if len(masks) != len(weights.mats):
        raise ConfigError(f"{len(masks)} masks for {len(weights.mats)} layers")
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for layer, (mat, mask) in enumerate(zip(weights.mats, masks)):
        if mask.shape != mat.shape:
            raise ConfigError(f"mask {mask.shape} does not match layer {mat.shape}")
        bsm = sparse.encode(mat, mask, args.min_side)
        path = f"{prefix}.layer{layer}.tvbs"
        sparse.save_tvbs(path, bsm)
        cost_b = sparse.storage_cost(bsm)
        cost_c = sparse.storage_cost(sparse.coo_from_dense(mat, mask))
        print(
            f"layer {layer}: {bsm.n_blocks} blocks, {bsm.n_residual} residual; "
            f"index ints {cost_b.index_ints} vs COO {cost_c.index_ints} -> {path}"
        )
    return 0


def cmd_bench(args) -> int:
    bsm = sparse.load_tvbs(args.tvbs)
    dense = sparse.decode(bsm)
    coo = sparse.coo_from_dense(dense)
    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(bsm.dims[1], args.cols))
    rows = sparse.bench(bsm, coo, dense, x, repeats=args.repeats)
    _write_csv(
        args.out,
        BENCH_HEADER,
        [(r.fmt, r.wall_ns_median, r.madds, r.index_ints) for r in rows],
    )
    print(f"benchmarked {args.tvbs} on backend {BACKEND!r} -> {args.out}")
    for r in rows:
        print(f"  {r.fmt:6s} wall_ns={r.wall_ns_median} madds={r.madds} index_ints={r.index_ints}")
    return 0


def cmd_sample_prior(args) -> int:
    params = MrfParams(
        p01_row=args.p01_row, p10_row=args.p10_row, p01_col=args.p01_col, p10_col=args.p10_col
    )
    grid = sample_support(params, (args.rows, args.cols), args.seed, args.sweeps)
    write_pgm(args.out, grid)
    print(f"sampled {args.rows}x{args.cols} support (density {grid.mean():.3f}) -> {args.out}")
    return 0


# --- argument plumbing ---


_CONFIG_OVERRIDES = (
    ("seed", int, "seed"),
    ("lr", float, "lr"),
    ("batch", int, "batch_size"),
    ("imax", int, "i_max"),
    ("threshold", float, "threshold"),
    ("min_side", int, "min_side"),
    ("p01_row", float, "p01_row"),
    ("p10_row", float, "p10_row"),
    ("p01_col", float, "p01_col"),
    ("p10_col", float, "p10_col"),
)


def _add_config_flags(sub):
    sub.add_argument("--config", help="JSON config file (RunConfig keys)")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--batch", type=int)
    sub.add_argument("--imax", type=int)
    sub.add_argument("--threshold", type=float)
    sub.add_argument("--min-side", dest="min_side", type=int)
    sub.add_argument("--p01-row", dest="p01_row", type=float)
    sub.add_argument("--p10-row", dest="p10_row", type=float)
    sub.add_argument("--p01-col", dest="p01_col", type=float)
    sub.add_argument("--p10-col", dest="p10_col", type=float)
    sub.add_argument("--dump-masks", dest="dump_masks", action="store_true", default=None)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    updates = {}
    for flag, _, key in _CONFIG_OVERRIDES:
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "dump_masks", None):
        updates["dump_masks"] = True
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turboprune",
        description="Train, prune, and export block-structured sparse networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the dense baseline")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output weights file (.tvbi)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("prune", help="run the pruning loop on trained weights")
    _add_config_flags(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("eval", help="evaluate dense or block-sparse weights")
    _add_config_flags(p)
    p.add_argument("--weights", required=True, help="weights file (also supplies biases)")
    p.add_argument("--tvbs", nargs="*", default=None, help="per-layer .tvbs files")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export", help="encode pruned layers into .tvbs files")
    p.add_argument("--weights", required=True)
    p.add_argument("--masks", nargs="+", required=True, help="per-layer mask PGMs")
    p.add_argument("--min-side", dest="min_side", type=int, default=3)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("bench", help="time dense vs COO vs block multiplies")
    p.add_argument("--tvbs", required=True)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sample-prior", help="Gibbs-sample a support grid to PGM")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--p01-row", dest="p01_row", type=float, default=0.05)
    p.add_argument("--p10-row", dest="p10_row", type=float, default=0.05)
    p.add_argument("--p01-col", dest="p01_col", type=float, default=0.05)
    p.add_argument("--p10-col", dest="p10_col", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample_prior)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
