"""Command-line harness: ``train``, ``sample`` and ``eval``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_pgm
from .config import ConfigError, RunConfig, format_config, parse_config
from .data import Dataset, FormatError, make_gmm, mask_labels, one_hot, read_idx
from .evaluation import EvalReport, evaluate
from .nn import LayerSpec, ParamSet, forward, mlp_specs
from .objectives import LabelRegime
from .rng import Rng
from .stochastic import sample_function
from .trainers import TrainConfig, TrainingDiverged, TrainState, fit, init_state, lr_schedule

log = logging.getLogger("bcgan")

METRICS_HEADER = "epoch,iter,total_d,total_g,mmd,test_error_pct,mean_pred_variance,mode_coverage,eta"
EVAL_HEADER = "epoch,test_error_pct,mmd_real_fake,mean_pred_variance,mode_coverage"
CONFIG_ECHO = "config.txt"
CONFIG_RESOLVED = "config.resolved.txt"
FINAL_CHECKPOINT = "checkpoint_final.bin"

# data stream keys
_DATA_TRAIN, _DATA_MASK, _DATA_TEST = 100, 101, 102


def _num(v: float) -> str:
    return repr(float(v))


def load_datasets(cfg: RunConfig, base: Path = Path(".")) -> tuple[Dataset, Dataset]:
    """Train and test sets for a run, with the configured label regime applied."""
    seed = cfg.train.seed
    if cfg.dataset == "gmm":
        train = make_gmm(cfg.gmm, Rng(seed).child(_DATA_TRAIN), "train")
        test = make_gmm(replace(cfg.gmm, per_class_count=cfg.gmm_test_per_class),
                        Rng(seed).child(_DATA_TEST), "test")
    else:
        train = read_idx(base / cfg.train_images, base / cfg.train_labels, cfg.num_classes, "train")
        test = read_idx(base / cfg.test_images, base / cfg.test_labels, cfg.num_classes, "test")
    if cfg.regime == "semi_supervised":
        train = mask_labels(train, cfg.labeled_per_class, Rng(seed).child(_DATA_MASK))
    elif cfg.regime == "unsupervised":
        regime = LabelRegime("unsupervised", 1)
        train = Dataset(train.x, np.ones(len(train), dtype=np.int64), regime, "train")
        test = Dataset(test.x, np.ones(len(test), dtype=np.int64), regime, "test")
    return train, test


def _evaluate(state: TrainState, cfg: RunConfig, test: Dataset) -> EvalReport:
    gmm = cfg.gmm if cfg.dataset == "gmm" else None
    rep = evaluate(state, cfg.train, test, gmm, cfg.radius, cfg.eval_functions)
    if gmm is None:
        rep.mode_coverage = 0.0  # undefined without known modes
    return rep


@contextmanager
def _lock(out_dir: Path):
    path = out_dir / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"{out_dir} is locked by another run (remove {path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def cmd_train(config_path, out_dir=None) -> int:
    config_path = Path(config_path)
    text = config_path.read_text(encoding="utf-8")
    cfg = parse_config(text)
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        (out / CONFIG_ECHO).write_text(text, encoding="utf-8")
        (out / CONFIG_RESOLVED).write_text(format_config(cfg), encoding="utf-8")
        train, test = load_datasets(cfg, config_path.parent)
        tc = cfg.train

        with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as f:
            f.write(METRICS_HEADER + "\n")
            f.flush()
            seen = [0]

            def record(state: TrainState):
                reps = state.history[seen[0]:]
                seen[0] = len(state.history)
                total_d = float(np.mean([r.total_d for r in reps])) if reps else 0.0
                total_g = float(np.mean([r.total_g for r in reps])) if reps else 0.0
                ev = _evaluate(state, cfg, test)
                eta = lr_schedule(tc.eta0, state.epoch - 1, tc.inference)
                f.write(",".join([str(state.epoch), str(state.iteration), _num(total_d), _num(total_g),
                                  _num(ev.mmd_real_fake), _num(ev.test_error_pct),
                                  _num(ev.mean_pred_variance), _num(ev.mode_coverage), _num(eta)]) + "\n")
                f.flush()
                log.info("epoch %d: err=%.2f%% mmd=%.4g var=%.4g cov=%.2f", state.epoch,
                         ev.test_error_pct, ev.mmd_real_fake, ev.mean_pred_variance, ev.mode_coverage)
                if cfg.snapshot_every and state.epoch % cfg.snapshot_every == 0:
                    save_checkpoint(out / f"checkpoint_epoch_{state.epoch}.bin", state.theta, state.omega)

            state = init_state(tc, train.regime, train.dim)
            try:
                state = fit(train, tc, [record], state)
            except TrainingDiverged as e:
                print(f"error: {e}", file=sys.stderr)
                return 1
        save_checkpoint(out / FINAL_CHECKPOINT, state.theta, state.omega)
    return 0


def _sibling_config(checkpoint_path: Path) -> RunConfig | None:
    path = checkpoint_path.parent / CONFIG_RESOLVED
    return parse_config(path.read_text(encoding="utf-8")) if path.exists() else None


def generator_specs(omega: ParamSet, output: str | None = None) -> list[LayerSpec]:
    """Layer specs matching a stored generator; output activation guessed from its width if unset."""
    dims = [w.shape for w in omega.weights]
    if output is None:
        output = "identity" if dims[-1][0] == 2 else "sigmoid"
    hidden = [out for out, _ in dims[:-1]]
    return mlp_specs(dims[0][1], hidden, dims[-1][0], out_act=output)


def cmd_sample(checkpoint_path, class_id: int, count: int, seed: int, out_dir=".",
               config: RunConfig | None = None) -> int:
    """Draw ``count`` rows of class ``class_id``, each from its own sampled generator."""
    checkpoint_path = Path(checkpoint_path)
    if count < 0:
        raise ValueError("count must be >= 0")
    _, omega = load_checkpoint(checkpoint_path)
    if config is None:
        config = _sibling_config(checkpoint_path)
    output = config.train.gen_output if config is not None else None
    tc = config.train if config is not None else TrainConfig()
    specs = generator_specs(omega, output)
    k = specs[0].in_dim
    if not 0 <= class_id < k:
        raise ValueError(f"class must lie in [0, {k})")
    if count == 0:
        return 0
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x_in = one_hot([class_id], k)
    rows = []
    for i in range(count):
        fn = sample_function(omega, tc.gen_dropout, Rng(seed).child(i))
        rows.append(forward(fn, x_in, specs)[0][0])
    dim = specs[-1].out_dim
    if dim == 2:
        with open(out / "samples.csv", "w", encoding="utf-8", newline="") as f:
            f.write("x0,x1,label\n")
            for r in rows:
                f.write(f"{_num(r[0])},{_num(r[1])},{class_id}\n")
        return 0
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise ValueError(f"cannot lay out {dim} outputs as a square image")
    for i, r in enumerate(rows):
        write_pgm(out / f"sample_{class_id}_{i}.pgm", r.reshape(side, side))
    return 0


def _epoch_from_name(path: Path, default: int) -> int:
    stem = path.stem
    if stem.startswith("checkpoint_epoch_"):
        try:
            return int(stem.rsplit("_", 1)[1])
        except ValueError:
            pass
    return default


def cmd_eval(checkpoint_path, config_path) -> EvalReport:
    checkpoint_path, config_path = Path(checkpoint_path), Path(config_path)
    cfg = parse_config(config_path.read_text(encoding="utf-8"))
    theta, omega = load_checkpoint(checkpoint_path)
    train, test = load_datasets(cfg, config_path.parent)
    state = init_state(cfg.train, train.regime, train.dim)
    if theta.shapes() != state.theta.shapes() or omega.shapes() != state.omega.shapes():
        raise CheckpointError("checkpoint architecture does not match the config")
    state = replace(state, theta=theta, omega=omega,
                    epoch=_epoch_from_name(checkpoint_path, cfg.train.epochs))
    return _evaluate(state, cfg, test)


def format_report(rep: EvalReport) -> str:
    return ",".join([str(rep.epoch), _num(rep.test_error_pct), _num(rep.mmd_real_fake),
                     _num(rep.mean_pred_variance), _num(rep.mode_coverage)])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcgan", description="Bayesian conditional GAN experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (overrides out_dir)")

    s = sub.add_parser("sample", help="dump generator samples for one class")
    s.add_argument("checkpoint")
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".")
    s.add_argument("--config", help="run config (defaults to the one beside the checkpoint)")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--header", action="store_true", help="print the column names first")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out)
        if args.command == "sample":
            cfg = parse_config(Path(args.config).read_text(encoding="utf-8")) if args.config else None
            return cmd_sample(args.checkpoint, args.class_id, args.count, args.seed, args.out, cfg)
        rep = cmd_eval(args.checkpoint, args.config)
        if args.header:
            print(EVAL_HEADER)
        print(format_report(rep))
        return 0
    except (ConfigError, CheckpointError, FormatError, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
