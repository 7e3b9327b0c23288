"""Command-line entry point: analyze, train, bench, inspect.

Exit codes: 0 success, 2 config error, 3 data/IO error, 4 numeric
invariant violation. Every output file is written atomically (temp file
plus rename), so a failing command leaves no partial artifacts.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import tempfile
import time
from dataclasses import fields

import numpy as np

from . import analysis
from .bintensor import (
    binary_conv2d_counts,
    binary_gemm_counts,
    ConvGeometry,
    naive_conv2d,
    naive_gemm,
    pack,
)
from .datasets import (
    DataFormatError,
    LabeledDataset,
    load_cifar10_bin,
    load_mnist_idx,
    synthetic_blobs,
)
from .engine import (
    CheckpointError,
    TrainConfig,
    build_network,
    load_checkpoint,
    policy_from_config,
    save_checkpoint,
    train,
)
from .laplace import fit, quantile_analytic


class ConfigError(Exception):
    exit_code = 2


class DataError(Exception):
    exit_code = 3


class NumericError(Exception):
    exit_code = 4


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    except OSError as exc:
        raise DataError(f"cannot write to {directory}: {exc}") from exc
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(rows: list[list], header: list[str]) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Config file handling: INI sections mirroring TrainConfig, flags override.

_CONFIG_SECTIONS = {
    "train": {"arch": str, "epochs": int, "batch_size": int, "lr0": float,
              "momentum": float, "weight_decay": float, "seed": int,
              "ste_scope": str},
    "recu": {"tau_start": float, "tau_end": float, "constant_tau": float,
             "quantile_mode": str, "alpha_mode": str},
    "standardize": {"b_star": float, "sigma_about": str, "enabled": bool},
    "data": {"dataset": str, "data_dir": str, "train_limit": int,
             "val_limit": int},
    "output": {"out_dir": str},
}


def load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            schema = _CONFIG_SECTIONS[section]
            if key not in schema:
                raise ConfigError(f"unknown config key [{section}].{key}")
            caster = schema[key]
            try:
                if caster is bool:
                    values[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    values[key] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"invalid value for [{section}].{key}: "
                                  f"{raw!r} ({exc})") from exc
    return values


def resolve_train_config(args) -> TrainConfig:
    values: dict = {}
    if args.config:
        values.update(load_config_file(args.config))
    std_enabled = values.pop("enabled", True)

    overrides = {
        "epochs": args.epochs, "batch_size": args.batch_size, "lr0": args.lr,
        "seed": args.seed, "arch": args.arch, "tau_start": args.tau_start,
        "tau_end": args.tau_end, "b_star": args.b_star,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if not std_enabled:
        values["b_star"] = None

    ablation = args.ablation or "none"
    if ablation == "no-recu":
        values["constant_tau"] = 1.0
        values["b_star"] = None
    elif ablation.startswith("fixed-tau="):
        try:
            values["constant_tau"] = float(ablation.split("=", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"invalid --ablation value {ablation!r}") from exc
    elif ablation == "sign-only-ste":
        values["ste_scope"] = "sign_only"
    elif ablation != "none":
        raise ConfigError(f"unknown ablation {ablation!r}")

    values = {k: v for k, v in values.items()
              if k in {f.name for f in fields(TrainConfig)}}
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_dataset(args, values_limit_train=None, values_limit_val=None):
    data_dir = args.data_dir or "data"
    name = args.dataset or "mnist"
    if name == "mnist":
        base = os.path.join(data_dir, "mnist")
        try:
            train_ds = load_mnist_idx(os.path.join(base, "train-images-idx3-ubyte.gz"),
                                      os.path.join(base, "train-labels-idx1-ubyte.gz"),
                                      split="train")
            val_ds = load_mnist_idx(os.path.join(base, "val-images-idx3-ubyte.gz"),
                                    os.path.join(base, "val-labels-idx1-ubyte.gz"),
                                    split="val")
        except (OSError, DataFormatError) as exc:
            raise DataError(f"failed to load mnist from {base}: {exc}") from exc
    elif name == "cifar10":
        base = os.path.join(data_dir, "cifar-10-batches-bin")
        batches = [os.path.join(base, f"data_batch_{i}.bin") for i in range(1, 6)]
        try:
            train_ds = load_cifar10_bin(batches, split="train")
            val_ds = load_cifar10_bin(os.path.join(base, "test_batch.bin"),
                                      split="val")
        except (OSError, DataFormatError) as exc:
            raise DataError(f"failed to load cifar10 from {base}: {exc}") from exc
    elif name == "synthetic":
        train_ds = synthetic_blobs(2000, 10, seed=args.seed or 0, split="train")
        val_ds = synthetic_blobs(500, 10, seed=(args.seed or 0) + 1, split="val")
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    if args.train_limit:
        train_ds = train_ds.subset(args.train_limit)
    if args.val_limit:
        val_ds = val_ds.subset(args.val_limit)
    return train_ds, val_ds


# ---------------------------------------------------------------------------
# Subcommands

def _parse_grid(spec: str) -> list[float]:
    """Comma list ("0.6,0.8") or linspace ("0.51:1.0:50")."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid spec must be start:stop:count, got {spec!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"invalid grid spec {spec!r}") from exc
        return [float(v) for v in np.linspace(start, stop, count)]
    try:
        return [float(v) for v in spec.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"invalid grid spec {spec!r}") from exc


def cmd_analyze(args) -> int:
    b_grid = _parse_grid(args.b_grid)
    tau_grid = _parse_grid(args.tau_grid)
    try:
        points = analysis.sweep(b_grid, tau_grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tau_star = analysis.find_tau_star()

    os.makedirs(args.out, exist_ok=True)
    qe_rows = [[p.tau, p.b, p.q_tau, p.alpha, p.qe, p.qe_oracle] for p in points]
    ent_rows = [[p.tau, p.b, p.entropy, p.entropy_oracle] for p in points]
    _atomic_write_text(os.path.join(args.out, "qe_curve.csv"),
                       _csv(qe_rows, ["tau", "b", "q_tau", "alpha",
                                      "qe_closed", "qe_oracle"]))
    _atomic_write_text(os.path.join(args.out, "entropy_surface.csv"),
                       _csv(ent_rows, ["tau", "b", "entropy_closed",
                                       "entropy_oracle"]))
    _atomic_write_text(os.path.join(args.out, "tau_star.txt"), f"{tau_star!r}\n")
    print(f"analyze: {len(points)} grid points, tau* = {tau_star:.6f}, "
          f"outputs in {args.out}")
    return 0


_METRICS_HEADER = ["epoch", "lr", "tau", "train_loss", "train_acc", "val_acc",
                   "mean_sign_flip_rate"]
_DIAG_HEADER = (["epoch", "layer", "sign_flip_rate", "tail_fraction"]
                + [f"bucket_{i}" for i in range(10)])


def metrics_csv(rows) -> str:
    return _csv([[r.epoch, r.lr, r.tau, r.train_loss, r.train_acc, r.val_acc,
                  r.mean_sign_flip_rate] for r in rows], _METRICS_HEADER)


def diagnostics_csv(rows) -> str:
    table = [[d.epoch, d.layer_id, d.sign_flip_rate, d.tail_fraction,
              *(float(v) for v in d.bucket_flip_rates)] for d in rows]
    return _csv(table, _DIAG_HEADER)


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    train_ds, val_ds = _load_dataset(args)
    if args.resume:
        try:
            net, cfg_saved, start_epoch, buffers = load_checkpoint(args.resume)
        except (OSError, CheckpointError) as exc:
            raise DataError(f"cannot resume from {args.resume}: {exc}") from exc
        if args.epochs is not None:
            cfg = TrainConfig(**{**cfg_saved.__dict__, "epochs": args.epochs})
        else:
            cfg = cfg_saved
    else:
        net = build_network(cfg.arch, policy_from_config(cfg), cfg.seed,
                            **_arch_kwargs_for(cfg.arch, train_ds))
        start_epoch, buffers = 0, {}

    result = train(net, train_ds, val_ds, cfg, start_epoch=start_epoch,
                   buffers=buffers)

    os.makedirs(args.out, exist_ok=True)
    _atomic_write_text(os.path.join(args.out, "metrics.csv"),
                       metrics_csv(result.metrics))
    _atomic_write_text(os.path.join(args.out, "diagnostics.csv"),
                       diagnostics_csv(result.diagnostics))
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ckpt, result.net, cfg, result.epoch_next, result.buffers)
    last = result.metrics[-1].val_acc if result.metrics else math.nan
    print(f"train: {cfg.arch} epochs {start_epoch}..{cfg.epochs} "
          f"final val_acc {last:.4f}, outputs in {args.out}")
    return 0


def _arch_kwargs_for(arch: str, train_ds: LabeledDataset) -> dict:
    shape = train_ds.images.shape
    if arch == "mlp-small":
        return {"in_features": int(np.prod(shape[1:])),
                "classes": train_ds.n_classes}
    if arch == "convnet-small":
        return {"in_channels": shape[1], "image_hw": shape[2],
                "classes": train_ds.n_classes}
    if arch == "resnet20-toy":
        return {"in_channels": shape[1], "image_hw": shape[2],
                "classes": train_ds.n_classes}
    return {}


def _bench_correctness_gate(rng) -> None:
    for _ in range(25):
        m, k, n = (int(rng.integers(1, 40)) for _ in range(3))
        a = rng.choice([-1.0, 1.0], size=(m, k))
        b = rng.choice([-1.0, 1.0], size=(k, n))
        counts = binary_gemm_counts(pack(a), pack(b))
        if not np.array_equal(counts.astype(np.float64), naive_gemm(a, b)):
            raise NumericError("binary_gemm disagrees with the float oracle")
    for _ in range(10):
        geom = ConvGeometry(int(rng.integers(1, 4)), int(rng.integers(1, 5)),
                            3, 3, int(rng.integers(1, 3)), int(rng.integers(0, 2)),
                            int(rng.integers(6, 12)), int(rng.integers(6, 12)))
        x = rng.choice([-1.0, 1.0], size=(2, geom.in_channels, geom.input_h,
                                          geom.input_w))
        w = rng.choice([-1.0, 1.0], size=(geom.out_channels, geom.in_channels,
                                          3, 3))
        counts = binary_conv2d_counts(pack(w), pack(x), geom)
        oracle = naive_conv2d(x, w, geom.stride, geom.padding)
        if not np.array_equal(counts.astype(np.float64), oracle):
            raise NumericError("binary_conv2d disagrees with the float oracle")


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    _bench_correctness_gate(rng)

    rows = []
    for size in (int(s) for s in args.sizes.split(",") if s):
        a = rng.choice([-1.0, 1.0], size=(size, size)).astype(np.float32)
        b = rng.choice([-1.0, 1.0], size=(size, size)).astype(np.float32)
        ap, bp = pack(a), pack(b)
        t_bit = _best_time(lambda: binary_gemm_counts(ap, bp), args.repeats)
        t_float = _best_time(lambda: naive_gemm(a, b), args.repeats)
        rows.append(["gemm", size, t_bit, t_float, t_float / t_bit])
        print(f"gemm {size}^3: bit {t_bit * 1e3:.1f} ms, naive float "
              f"{t_float * 1e3:.1f} ms, speedup {t_float / t_bit:.1f}x")

    geom = ConvGeometry(32, 32, 3, 3, 1, 1, 16, 16)
    x = rng.choice([-1.0, 1.0], size=(4, 32, 16, 16)).astype(np.float32)
    w = rng.choice([-1.0, 1.0], size=(32, 32, 3, 3)).astype(np.float32)
    xp, wp = pack(x), pack(w)
    t_bit = _best_time(lambda: binary_conv2d_counts(wp, xp, geom), args.repeats)
    t_float = _best_time(lambda: naive_conv2d(x, w, 1, 1), args.repeats)
    rows.append(["conv2d", 16, t_bit, t_float, t_float / t_bit])
    print(f"conv2d 32x32c 16x16: bit {t_bit * 1e3:.1f} ms, naive float "
          f"{t_float * 1e3:.1f} ms, speedup {t_float / t_bit:.1f}x")

    os.makedirs(args.out, exist_ok=True)
    _atomic_write_text(os.path.join(args.out, "bench.csv"),
                       _csv(rows, ["op", "size", "bit_seconds", "float_seconds",
                                   "speedup"]))
    return 0


def _best_time(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cmd_inspect(args) -> int:
    try:
        net, cfg, epoch_next, _ = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise DataError(str(exc)) from exc
    tau = args.tau if args.tau is not None else 0.99
    rows = []
    hist_rows = []
    for name, layer in _weighted_layers(net):
        latent = layer.weight.value.astype(np.float64)
        layer_fit = fit(latent)
        if tau < 1.0:
            q = quantile_analytic(layer_fit, tau)
            tail = float(np.mean(np.abs(latent) > q))
        else:
            q, tail = math.inf, 0.0
        rows.append([name, latent.size, layer_fit.b_hat, q, tail])
        span = float(np.abs(latent).max()) or 1.0
        hist, edges = np.histogram(latent, bins=args.bins, range=(-span, span))
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            hist_rows.append([name, lo, hi, int(count)])

    os.makedirs(args.out, exist_ok=True)
    _atomic_write_text(os.path.join(args.out, "inspect.csv"),
                       _csv(rows, ["layer", "n", "b_hat", "q_tau",
                                   "tail_fraction"]))
    _atomic_write_text(os.path.join(args.out, "histograms.csv"),
                       _csv(hist_rows, ["layer", "bin_lo", "bin_hi", "count"]))
    print(f"inspect: {len(rows)} weighted layers from epoch {epoch_next}, "
          f"outputs in {args.out}")
    return 0


def _weighted_layers(net):
    for layer in net._walk():
        if hasattr(layer, "weight"):
            yield layer.name, layer


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitclamp",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("analyze", parents=[common],
                       help="emit error/entropy curves and the optimal quantile")
    p.add_argument("--b-grid", default="1.0")
    p.add_argument("--tau-grid", default="0.51:1.0:50")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--dataset", choices=["mnist", "cifar10", "synthetic"],
                   default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--arch", choices=["mlp-small", "convnet-small",
                                      "resnet20-toy"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--tau-start", type=float, default=None)
    p.add_argument("--tau-end", type=float, default=None)
    p.add_argument("--b-star", type=float, default=None)
    p.add_argument("--ablation", default=None,
                   help="none | no-recu | fixed-tau=<v> | sign-only-ste")
    p.add_argument("--train-limit", type=int, default=None)
    p.add_argument("--val-limit", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bench", parents=[common],
                       help="time bit kernels against the naive float versions")
    p.add_argument("--sizes", default="512")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect", parents=[common],
                       help="per-layer weight statistics from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
