"""Evaluation metrics tracked during and after training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, GmmSpec
from .objectives import UNLABELED
from .rng import Rng
from .stochastic import predictive_stats, sample_fake_batch

_EVAL = 7
_TEST, _FAKES, _PROBE = range(3)


@dataclass
class EvalReport:
    epoch: int
    test_error_pct: float
    mmd_real_fake: float
    mean_pred_variance: float
    mode_coverage: float


def test_error(state, test: Dataset, cfg, rng: Rng | None = None) -> float:
    """Percent misclassified, taking the argmax of the predictive mean over real classes."""
    if np.any(test.labels == UNLABELED):
        raise ValueError("test set contains unlabeled rows")
    if len(test) == 0:
        return 0.0
    rng = rng or Rng(cfg.seed).child(_EVAL, _TEST)
    stats = predictive_stats(state.theta, state.disc_specs, cfg.disc_dropout, test.x,
                             cfg.m, cfg.tau, rng)
    real = state.regime.real_indices
    pred = np.asarray(real)[np.argmax(stats.mean[:, real], axis=1)]
    return 100.0 * float(np.mean(pred != test.labels))


def generate(state, cfg, num_functions: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """One row per class from each of ``num_functions`` sampled generators."""
    classes = np.arange(state.gen_classes)
    xs, ys = [], []
    for s in range(num_functions):
        fake = sample_fake_batch(state.omega, state.gen_specs, cfg.gen_dropout, classes,
                                 state.regime, rng.child(s))
        xs.append(fake.x)
        ys.append(classes)
    return np.concatenate(xs), np.concatenate(ys)


def median_bandwidth(x: np.ndarray) -> float:
    """Median pairwise Euclidean distance, the usual kernel bandwidth heuristic."""
    d = np.sqrt(np.maximum(_sqdist(x, x), 0.0))
    vals = d[np.triu_indices(len(x), 1)]
    return float(np.median(vals)) if vals.size else 1.0


def _sqdist(a, b):
    return (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T


def kernel_mmd2(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """Biased squared MMD between two samples under a Gaussian kernel."""
    if len(x) == 0 or len(y) == 0:
        raise ValueError("MMD needs two nonempty samples")
    k = lambda a, b: np.exp(-0.5 * np.maximum(_sqdist(a, b), 0.0) / bandwidth ** 2)
    return float(max(k(x, x).mean() + k(y, y).mean() - 2.0 * k(x, y).mean(), 0.0))


def mmd_real_fake(real_x: np.ndarray, fake_x: np.ndarray, bandwidth: float | None = None) -> float:
    """Fixed-kernel MMD^2 between real rows and generated rows.

    The bandwidth defaults to the median heuristic on ``real_x`` so the metric
    is comparable across epochs.
    """
    if bandwidth is None:
        bandwidth = median_bandwidth(real_x)
    return kernel_mmd2(real_x, fake_x, bandwidth)


def mode_coverage(fake_x: np.ndarray, spec: GmmSpec, radius: float) -> float:
    """Fraction of mixture means with at least one fake row within ``radius``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    fake_x = np.asarray(fake_x, dtype=np.float64).reshape(-1, 2)
    if len(fake_x) == 0:
        return 0.0
    means = np.asarray(spec.means, dtype=np.float64)
    d = np.linalg.norm(fake_x[None, :, :] - means[:, None, :], axis=2)
    return float(np.mean(np.any(d <= radius, axis=1)))


def mean_pred_variance(state, probe: np.ndarray, cfg, rng: Rng | None = None) -> float:
    rng = rng or Rng(cfg.seed).child(_EVAL, _PROBE)
    stats = predictive_stats(state.theta, state.disc_specs, cfg.disc_dropout, probe,
                             cfg.m, cfg.tau, rng)
    # 1/tau + mean spread, so identical samples give exactly 1/tau
    base = 1.0 / cfg.tau
    return base + float((stats.variance - base).mean())


def variance_trajectory(snapshots: Sequence, probe: np.ndarray, cfg) -> list[tuple[int, float]]:
    """Mean predictive variance on ``probe`` for each state snapshot.

    Every snapshot uses the same dropout draws, so changes reflect the weights only.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    return [(s.epoch, mean_pred_variance(s, probe, cfg)) for s in snapshots]


def probe_rows(data: Dataset, count: int = 10, seed: int = 0) -> np.ndarray:
    idx = Rng(seed).child(_EVAL, _PROBE).generator().choice(len(data), size=min(count, len(data)),
                                                           replace=False)
    return data.x[np.sort(idx)]


def evaluate(state, cfg, test: Dataset, gmm: GmmSpec | None = None, radius: float | None = None,
             num_functions: int = 50) -> EvalReport:
    """All tracked metrics for one state. Draws are fixed per config seed."""
    base = Rng(cfg.seed).child(_EVAL)
    fake_x, _ = generate(state, cfg, num_functions, base.child(_FAKES))
    err = test_error(state, test, cfg, base.child(_TEST))
    mmd = mmd_real_fake(test.x, fake_x)
    var = mean_pred_variance(state, probe_rows(test, 10, cfg.seed), cfg, base.child(_PROBE))
    cov = float("nan")
    if gmm is not None:
        cov = mode_coverage(fake_x, gmm, radius if radius is not None else 3 * gmm.cov_scale)
    return EvalReport(state.epoch, err, mmd, var, cov)
