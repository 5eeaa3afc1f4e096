"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

from .data import GmmSpec
from .objectives import LabelRegime
from .stochastic import GAUSSIAN_MODES, DropoutSpec
from .trainers import TrainConfig

DATASETS = ("gmm", "idx")
REGIMES = ("semi_supervised", "supervised", "unsupervised")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = "gmm"
    regime: str = "semi_supervised"
    gmm: GmmSpec = field(default_factory=GmmSpec)
    gmm_test_per_class: int = 500
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_classes: int = 10
    labeled_per_class: int = 25
    out_dir: str = "run"
    snapshot_every: int = 50
    coverage_radius: float = 0.0  # 0 means 3 * cov_scale
    eval_functions: int = 50

    @property
    def radius(self) -> float:
        return self.coverage_radius if self.coverage_radius > 0 else 3.0 * self.gmm.cov_scale

    @property
    def label_regime(self) -> LabelRegime:
        if self.regime == "unsupervised":
            return LabelRegime("unsupervised", 1)
        k = self.gmm.K if self.dataset == "gmm" else self.num_classes
        return LabelRegime(self.regime, k)


# value parsers

def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _widths(s: str) -> tuple[int, ...]:
    if s.strip() in ("", "none"):
        return ()
    out = tuple(int(p) for p in s.replace("x", ",").split(",") if p.strip())
    if any(w < 1 for w in out):
        raise ValueError("layer widths must be >= 1")
    return out


def _means(s: str) -> tuple[tuple[float, float], ...]:
    out = []
    for chunk in s.split(";"):
        parts = [_float(p) for p in chunk.split(",")]
        if len(parts) != 2:
            raise ValueError(f"mean {chunk.strip()!r} must have two coordinates")
        out.append((parts[0], parts[1]))
    return tuple(out)


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _tristate(s: str) -> bool | None:
    return None if s == "auto" else _bool(s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(f"{a!r}, {b!r}" for a, b in v)
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return str(v)


# key -> (parser, getter from RunConfig)
_TRAIN_KEYS: dict[str, tuple[str, Callable]] = {
    "eta0": ("eta0", _float),
    "gen_eta_scale": ("gen_eta_scale", _float),
    "lambda": ("lam", _float),
    "m": ("m", _int),
    "m_prime": ("m_prime", _int),
    "gen_rounds": ("gen_rounds", _int),
    "batch_real": ("batch_real", _int),
    "batch_fake": ("batch_fake", _int),
    "epochs": ("epochs", _int),
    "inference": ("inference", _choice(("map_mc", "sgld"))),
    "sgld_noise_scale": ("sgld_noise_scale", _float),
    "tau": ("tau", _float),
    "seed": ("seed", _int),
    "gen_hidden": ("gen_hidden", _widths),
    "disc_hidden": ("disc_hidden", _widths),
    "gen_output": ("gen_output", _choice(("identity", "sigmoid", "softplus"))),
    "fake_class_term": ("fake_class_term", _tristate),
    "per_layer_norm": ("per_layer_norm", _bool),
    "labeled_batch": ("labeled_batch", _int),
}
_DROPOUT_KEYS = {
    "gen_drop_rate": ("gen", "bernoulli_drop_rate", _float),
    "gen_gaussian_variance": ("gen", "variance", _float),
    "gen_gaussian_mode": ("gen", "gaussian_mode", _choice(GAUSSIAN_MODES)),
    "disc_drop_rate": ("disc", "bernoulli_drop_rate", _float),
    "disc_gaussian_variance": ("disc", "variance", _float),
    "disc_gaussian_mode": ("disc", "gaussian_mode", _choice(GAUSSIAN_MODES)),
}
_GMM_KEYS = {
    "gmm_means": ("means", _means),
    "gmm_cov_scale": ("cov_scale", _float),
    "gmm_per_class": ("per_class_count", _int),
}
_RUN_KEYS = {
    "dataset": _choice(DATASETS),
    "regime": _choice(REGIMES),
    "gmm_test_per_class": _int,
    "train_images": str,
    "train_labels": str,
    "test_images": str,
    "test_labels": str,
    "num_classes": _int,
    "labeled_per_class": _int,
    "out_dir": str,
    "snapshot_every": _int,
    "coverage_radius": _float,
    "eval_functions": _int,
}
KEYS = (*_TRAIN_KEYS, *_DROPOUT_KEYS, *_GMM_KEYS, *_RUN_KEYS)


def _check_run(cfg: RunConfig):
    if cfg.num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    for name in ("labeled_per_class", "snapshot_every", "gmm_test_per_class"):
        if getattr(cfg, name) < 0:
            raise ValueError(f"{name} must be >= 0")
    if cfg.eval_functions < 1:
        raise ValueError("eval_functions must be >= 1")
    if cfg.coverage_radius < 0:
        raise ValueError("coverage_radius must be >= 0")
    if cfg.dataset == "idx":
        missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels")
                   if not getattr(cfg, k)]
        if missing:
            raise ValueError(f"idx dataset needs {', '.join(missing)}")


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines over the defaults; errors name the offending line."""
    train: dict = {}
    drop = {"gen": {}, "disc": {}}
    gmm: dict = {}
    run: dict = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        seen[key] = lineno
        try:
            if key in _TRAIN_KEYS:
                name, parse = _TRAIN_KEYS[key]
                train[name] = parse(value)
            elif key in _DROPOUT_KEYS:
                net, name, parse = _DROPOUT_KEYS[key]
                drop[net][name] = parse(value)
            elif key in _GMM_KEYS:
                name, parse = _GMM_KEYS[key]
                gmm[name] = parse(value)
            else:
                run[key] = _RUN_KEYS[key](value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}", lineno) from None

    def blame(*keys: str) -> int | None:
        lines = [seen[k] for k in keys if k in seen]
        return min(lines) if lines else None

    if "gen_output" not in train and run.get("dataset") == "idx":
        train["gen_output"] = "sigmoid"  # pixel intensities live in [0, 1]
    base = TrainConfig()
    for net, attr in (("gen", "gen_dropout"), ("disc", "disc_dropout")):
        d = drop[net]
        default: DropoutSpec = getattr(base, attr)
        std = default.gaussian_std
        if "variance" in d:
            if d["variance"] < 0:
                raise ConfigError(f"{net}_gaussian_variance must be >= 0", blame(f"{net}_gaussian_variance"))
            std = math.sqrt(d["variance"])
        try:
            train[attr] = DropoutSpec(d.get("bernoulli_drop_rate", default.bernoulli_drop_rate), std,
                                      d.get("gaussian_mode", default.gaussian_mode))
        except ValueError as e:
            raise ConfigError(str(e), blame(*(k for k in _DROPOUT_KEYS if k.startswith(net)))) from None
    try:
        tc = TrainConfig(**train)
    except ValueError as e:
        raise ConfigError(str(e), blame(*_TRAIN_KEYS)) from None
    try:
        spec = replace(GmmSpec(), **gmm)
    except ValueError as e:
        raise ConfigError(str(e), blame(*_GMM_KEYS)) from None
    try:
        cfg = RunConfig(train=tc, gmm=spec, **run)
        _check_run(cfg)
    except ValueError as e:
        raise ConfigError(str(e), blame(*_RUN_KEYS)) from None
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Every key with its resolved value; ``parse_config`` reads it back to an equal config."""
    t = cfg.train
    values = {}
    for key, (name, _) in _TRAIN_KEYS.items():
        values[key] = getattr(t, name)
    for key, (net, name, _) in _DROPOUT_KEYS.items():
        spec = t.gen_dropout if net == "gen" else t.disc_dropout
        values[key] = spec.gaussian_std ** 2 if name == "variance" else getattr(spec, name)
    for key, (name, _) in _GMM_KEYS.items():
        values[key] = getattr(cfg.gmm, name)
    for key in _RUN_KEYS:
        values[key] = getattr(cfg, key)
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())
