"""Confidence-driven gradient modulation.

Per batch, each branch's summed true-class confidence gives a
contribution ratio; the dominant branch (ratio > 1) has its classifier
gradients scaled by 1 - tanh(alpha * relu(R - 1)). Statistics come from
detached probabilities, so the coefficients are constants to autodiff,
and at most one branch is ever suppressed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import LabelError

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class ModulationState:
    """Per-batch CGM quantities."""

    s_res: float
    s_dense: float
    r_res: float
    r_dense: float
    m_res: float
    m_dense: float
    alpha: float
    epsilon: float


def softmax_rows(logits):
    """Plain numpy row softmax (detached; no tape involvement)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def batch_confidences(probs_res, probs_dense, labels):
    """Sum of each branch's predicted probability for the true class."""
    probs_res = np.asarray(probs_res)
    probs_dense = np.asarray(probs_dense)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs_res.shape
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {int(labels[i])} at index {i} outside [0, {c})")
    idx = np.arange(n)
    return float(probs_res[idx, labels].sum()), float(probs_dense[idx, labels].sum())


def contribution_ratios(s_res, s_dense, epsilon=DEFAULT_EPSILON):
    """Relative dominance of each branch; epsilon guards empty confidence."""
    return s_res / (s_dense + epsilon), s_dense / (s_res + epsilon)


def _coefficient(ratio, alpha):
    if ratio <= 1.0:
        return 1.0
    x = alpha * max(ratio - 1.0, 0.0)
    # 1 - tanh(x) rewritten as 2/(1 + e^{2x}): mathematically identical
    # but stays strictly positive where tanh saturates to 1.0 in float64
    # (the exponent cap keeps the suppressed branch trainable even for
    # astronomical ratios).
    return 2.0 / (1.0 + math.exp(min(2.0 * x, 700.0)))


def modulation_coefficients(r_res, r_dense, alpha):
    """Suppression factors in (0, 1]; only a dominant branch drops below 1."""
    return _coefficient(r_res, alpha), _coefficient(r_dense, alpha)


def compute_modulation(logits_res, logits_dense, labels, alpha,
                       epsilon=DEFAULT_EPSILON):
    """Full per-batch modulation state from detached branch logits."""
    s_res, s_dense = batch_confidences(
        softmax_rows(logits_res), softmax_rows(logits_dense), labels
    )
    r_res, r_dense = contribution_ratios(s_res, s_dense, epsilon)
    m_res, m_dense = modulation_coefficients(r_res, r_dense, alpha)
    return ModulationState(s_res, s_dense, r_res, r_dense, m_res, m_dense,
                           float(alpha), float(epsilon))


def apply_modulation(res_params, dense_params, m_res, m_dense):
    """Scale the accumulated gradients of each branch's parameter group."""
    for p in res_params:
        p.grad *= m_res
    for p in dense_params:
        p.grad *= m_dense
