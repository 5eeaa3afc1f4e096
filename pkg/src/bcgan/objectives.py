"""Discriminator and generator losses, the mean-feature discrepancy, and their gradients.

Every loss here is a per-function-sample quantity; averaging over Monte
Carlo samples happens in :func:`discriminator_loss` (over the m samples it
is handed) and in the trainer (over the m' generator rounds).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import ParamSet, backward, forward, softmax_rows

UNLABELED = -1
PROB_FLOOR = 1e-12
KINDS = ("supervised", "semi_supervised", "unsupervised")


@dataclass(frozen=True)
class LabelRegime:
    """How labels map onto discriminator outputs.

    Supervised and semi-supervised data use K real outputs plus one fake
    output at index K. Unsupervised data uses two outputs: fake = 0, real = 1.
    """

    kind: str
    num_classes: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown label regime {self.kind!r}")
        if self.kind == "unsupervised" and self.num_classes != 1:
            raise ValueError("unsupervised regime has exactly one (real) class")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @property
    def output_dim(self) -> int:
        return 2 if self.kind == "unsupervised" else self.num_classes + 1

    @property
    def fake_class_index(self) -> int:
        return 0 if self.kind == "unsupervised" else self.num_classes

    @property
    def real_indices(self) -> list[int]:
        return [1] if self.kind == "unsupervised" else list(range(self.num_classes))

    @property
    def unlabeled_marker(self) -> int:
        return UNLABELED

    def fake_targets(self, gen_classes: np.ndarray) -> np.ndarray:
        """Discriminator label a generator aims for when fed class ``k``."""
        gen_classes = np.asarray(gen_classes, dtype=np.int64)
        if self.kind == "unsupervised":
            return np.ones_like(gen_classes)
        return gen_classes

    def with_kind(self, kind: str) -> "LabelRegime":
        return LabelRegime(kind, self.num_classes)


@dataclass
class LossReport:
    l_d_real: float = 0.0
    l_d_fake_term: float = 0.0
    l_d_fake_class: float = 0.0
    l_g: float = 0.0
    mmd: float = 0.0
    total_d: float = 0.0
    total_g: float = 0.0

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in vars(self).values())


def _check_labels(labels: np.ndarray, num_outputs: int):
    bad = (labels != UNLABELED) & ((labels < 0) | (labels >= num_outputs))
    if np.any(bad):
        raise ValueError(f"label {labels[bad][0]} out of range for {num_outputs} outputs")


def cross_entropy_with_grad(probs: np.ndarray, labels, fake_index: int | None = None
                            ) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. the logits.

    Unlabeled rows score the mass on every non-fake class, ``-ln(1 - p_fake)``.
    Log arguments are floored at 1e-12; the gradient is zero where the floor binds.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"{labels.size} labels for {n} rows")
    _check_labels(labels, c)
    if fake_index is None:
        fake_index = c - 1
    rows = np.arange(n)
    unl = labels == UNLABELED
    target = np.where(unl, fake_index, labels)
    p_target = probs[rows, target]
    # event probability: p(label) for labeled rows, 1 - p(fake) for unlabeled rows
    p_event = np.where(unl, 1.0 - p_target, p_target)
    live = p_event > PROB_FLOOR
    loss = -np.log(np.maximum(p_event, PROB_FLOOR))

    onehot = np.zeros_like(probs)
    onehot[rows, target] = 1.0
    grad = probs - onehot
    # d/dz[-ln(1 - p_f)] = p_f / (1 - p_f) * (e_f - p)
    ratio = np.where(unl & live, p_target / np.maximum(p_event, PROB_FLOOR), 0.0)
    grad = np.where(unl[:, None], ratio[:, None] * (onehot - probs), grad)
    grad[~live] = 0.0
    return float(loss.mean()), grad / n


def cross_entropy(probs: np.ndarray, labels, fake_index: int | None = None) -> float:
    return cross_entropy_with_grad(probs, labels, fake_index)[0]


def mean_feature_gap(real_feats: np.ndarray, fake_feats: np.ndarray) -> float:
    if len(real_feats) == 0 or len(fake_feats) == 0:
        raise ValueError("discrepancy needs two nonempty batches")
    gap = real_feats.mean(axis=0) - fake_feats.mean(axis=0)
    return float(gap @ gap)


def mmd_delta(disc_fn, real_x: np.ndarray, fake_x: np.ndarray, specs) -> float:
    """Squared distance between the mean discriminator logits of two batches."""
    if len(real_x) == 0 or len(fake_x) == 0:
        raise ValueError("discrepancy needs two nonempty batches")
    real_f, _ = forward(disc_fn, real_x, specs)
    fake_f, _ = forward(disc_fn, fake_x, specs)
    return mean_feature_gap(real_f, fake_f)


def _check_regimes(real, fake):
    rr, fr = getattr(real, "regime", None), getattr(fake, "regime", None)
    if rr is not None and fr is not None and rr.output_dim != fr.output_dim:
        raise ValueError(f"regime mismatch: real batch {rr}, fake batch {fr}")
    if rr is not None and fr is not None and rr.num_classes != fr.num_classes:
        raise ValueError(f"regime mismatch: real batch {rr}, fake batch {fr}")


def discriminator_loss(disc_fns: Sequence, real, fake, specs, regime: LabelRegime,
                       fake_class_term: bool = False) -> tuple[LossReport, ParamSet]:
    """Monte Carlo discriminator objective averaged over the sampled functions.

    Without ``fake_class_term``: ``total_d = real CE - CE(fakes vs intended labels)``.
    With it, fakes are instead scored against the fake output:
    ``total_d = real CE + CE(fakes vs fake class)``; the intended-label term is
    still reported in ``l_d_fake_term`` but carries no gradient.
    The gradient is w.r.t. the unperturbed discriminator parameters.
    """
    _check_regimes(real, fake)
    if len(disc_fns) == 0:
        raise ValueError("need at least one discriminator sample")
    m = len(disc_fns)
    fake_index = regime.fake_class_index
    fake_class = np.full(len(fake.x), fake_index)
    rep = LossReport()
    grad = None
    for fn in disc_fns:
        logits_r, tape_r = forward(fn, real.x, specs)
        l_real, g_real = cross_entropy_with_grad(softmax_rows(logits_r), real.labels, fake_index)
        logits_f, tape_f = forward(fn, fake.x, specs)
        probs_f = softmax_rows(logits_f)
        l_fake, g_fake = cross_entropy_with_grad(probs_f, fake.labels, fake_index)
        if fake_class_term:
            l_fc, g_fake = cross_entropy_with_grad(probs_f, fake_class, fake_index)
            rep.l_d_fake_class += l_fc / m
        else:
            g_fake = -g_fake
        rep.l_d_real += l_real / m
        rep.l_d_fake_term += l_fake / m
        gr, _ = backward(tape_r, g_real / m)
        gf, _ = backward(tape_f, g_fake / m)
        step = gr + gf
        grad = step if grad is None else grad + step
    if fake_class_term:
        rep.total_d = rep.l_d_real + rep.l_d_fake_class
    else:
        rep.total_d = rep.l_d_real - rep.l_d_fake_term
    return rep, grad


def generator_loss(disc_fn, real, fake, disc_specs, regime: LabelRegime,
                   lam: float) -> tuple[LossReport, ParamSet]:
    """Generator objective for one (discriminator, generator) function pair.

    ``fake`` must carry the generator tape from :func:`sample_fake_batch`;
    the gradient flows through the fake samples into the unperturbed
    generator weights while the discriminator stays fixed.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    _check_regimes(real, fake)
    if getattr(fake, "tape", None) is None:
        raise ValueError("fake batch has no generator tape to differentiate through")
    logits_f, tape_f = forward(disc_fn, fake.x, disc_specs)
    l_g, g_logits = cross_entropy_with_grad(softmax_rows(logits_f), fake.labels,
                                            regime.fake_class_index)
    logits_r, _ = forward(disc_fn, real.x, disc_specs)
    gap = logits_r.mean(axis=0) - logits_f.mean(axis=0)
    mmd = float(gap @ gap)
    if lam > 0:
        g_logits = g_logits + lam * (-2.0 / len(fake.x)) * gap[None, :]
    _, g_x = backward(tape_f, g_logits)
    grad, _ = backward(fake.tape, g_x)
    rep = LossReport(l_g=l_g, mmd=mmd, total_g=l_g + lam * mmd)
    return rep, grad
