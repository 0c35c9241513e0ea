"""Finite-difference gradient verification.

Central differences against the tape's analytic gradients. The loss
closure must be deterministic: it is re-run two times per parameter
element with perturbed values.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, zero_grads

# Relative error denominators are floored: below REL_FLOOR the check
# degrades to an absolute-error test at tolerance*REL_FLOOR, keeping
# near-zero gradients from amplifying central-difference cancellation
# noise (~eps_machine * |loss| / perturbation) into spurious failures.
REL_FLOOR = 1e-4


@dataclass
class ParameterCheck:
    param_id: str
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    perturbation: float
    tolerance: float
    checks: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def summary_lines(self):
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            lines.append(f"{status:4s} {c.param_id:50s} max_rel={c.max_rel_error:.3e}")
        lines.append(
            f"overall: {'PASS' if self.passed else 'FAIL'} "
            f"(max_rel={self.max_rel_error:.3e}, tol={self.tolerance:.1e})"
        )
        return lines


def numeric_gradient(loss_fn, param, perturbation):
    """Central-difference gradient of `loss_fn` w.r.t. one parameter."""
    flat = param.data.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + perturbation
        f_plus = loss_fn().item()
        flat[i] = saved - perturbation
        f_minus = loss_fn().item()
        flat[i] = saved
        grad[i] = (f_plus - f_minus) / (2.0 * perturbation)
    return grad.reshape(param.data.shape)


def compare_gradients(analytic, numeric, tolerance, param_id=""):
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel = abs_err / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    max_abs = float(abs_err.max()) if abs_err.size else 0.0
    return ParameterCheck(param_id, max_rel, max_abs, max_rel < tolerance)


def finite_diff_check(loss_fn, params, perturbation=1e-5, tolerance=1e-4,
                      analytic_grads=None):
    """Check every element of every parameter's gradient.

    `analytic_grads` can be supplied (id -> array) to audit gradients
    computed elsewhere; by default one tape backward provides them.
    """
    params = list(params)
    if analytic_grads is None:
        zero_grads(params)
        with Tape() as tape:
            loss = loss_fn()
        tape.backward(loss)
        analytic_grads = {p.id: p.grad.copy() for p in params}
        zero_grads(params)

    report = GradCheckReport(perturbation=perturbation, tolerance=tolerance)
    for p in params:
        numeric = numeric_gradient(loss_fn, p, perturbation)
        report.checks.append(
            compare_gradients(analytic_grads[p.id], numeric, tolerance, p.id)
        )
    return report
