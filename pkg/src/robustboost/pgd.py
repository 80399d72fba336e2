"""Projected gradient descent over images: targeted, untargeted, and a generic
core loop shared with the feature-matching interpolator.

The update follows the classic iteration: gradient step on the objective,
projection onto the threat-model ball, then a clamp back into the valid pixel
range. The norm bound is enforced on the pre-clamp perturbation; clamping can
only shrink coordinates, so the final perturbation never exceeds epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierHandle, loss_and_grad
from .threat import ThreatModel, clamp_to_range, l2_norm_batch
from .util import ensure_finite

INITS = ("zero", "random")


@dataclass(frozen=True)
class PGDConfig:
    """Step size, iteration count, and initialization for one PGD run.

    alpha is in pixel units. steps may be zero (the input is returned as-is).
    The conventional schedule for refinement is alpha = 1.5 * epsilon / steps
    with steps = 7; see default_refinement_config.
    """

    alpha: float
    steps: int
    init: str = "zero"
    return_best_iterate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.steps > 0 and not self.alpha > 0:
            raise ValueError("alpha must be positive when steps > 0")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")


def default_refinement_config(epsilon: float, steps: int = 7, **kwargs) -> PGDConfig:
    """Refinement schedule: alpha = 1.5 * epsilon / steps (7 steps by default)."""
    alpha = 1.5 * epsilon / max(steps, 1)
    return PGDConfig(alpha=alpha if steps > 0 else 1.0, steps=steps, **kwargs)


@dataclass
class PGDTrace:
    """Diagnostics for one batched run: losses and norms per iterate.

    loss_history and norm_history have steps+1 rows (the initial point is row
    zero) unless the run aborted on a non-finite gradient, which sets aborted.
    """

    loss_history: np.ndarray  # (iterates, batch)
    norm_history: np.ndarray  # (iterates, batch)
    final_norms: np.ndarray  # (batch,)
    returned_iterate: np.ndarray  # (batch,) index of the iterate returned
    aborted: bool = False
    steps_run: int = 0

    def to_json(self) -> dict:
        return {
            "loss_history": self.loss_history.tolist(),
            "norm_history": self.norm_history.tolist(),
            "final_norms": self.final_norms.tolist(),
            "returned_iterate": self.returned_iterate.tolist(),
            "aborted": self.aborted,
            "steps_run": self.steps_run,
        }


def _init_delta(x: np.ndarray, tm: ThreatModel, cfg: PGDConfig) -> np.ndarray:
    if cfg.init == "zero" or tm.epsilon == 0:
        return np.zeros_like(x)
    rng = np.random.default_rng(cfg.seed)
    if tm.norm == "linf":
        d = rng.uniform(-tm.epsilon, tm.epsilon, size=x.shape)
    else:
        # uniform direction, radius scaled for uniformity in the ball
        d = rng.standard_normal(x.shape)
        flat = d.reshape(x.shape[0], -1)
        dim = flat.shape[1]
        radii = tm.epsilon * rng.uniform(0, 1, size=x.shape[0]) ** (1.0 / dim)
        norms = np.linalg.norm(flat, axis=1)
        norms[norms == 0] = 1.0
        flat *= (radii / norms)[:, None]
    return d.astype(x.dtype, copy=False)


def pgd_minimize(objective, x: np.ndarray, pixel_range, tm: ThreatModel, cfg: PGDConfig):
    """Minimize a per-image objective over the threat-model ball around x.

    objective(x_perturbed, want_grad) must return (loss (batch,), grad or None).
    Returns (x_out, PGDTrace). With return_best_iterate the per-image iterate of
    lowest recorded loss is returned, otherwise the final iterate.
    """
    x = np.asarray(x)
    ensure_finite(x, "input batch")
    n = x.shape[0]

    delta = _init_delta(x, tm, cfg)
    if cfg.init != "zero":
        delta = tm.project_batch(delta)
        delta = clamp_to_range(x + delta, pixel_range) - x

    losses, norms = [], []
    loss, grad = objective(x + delta, cfg.steps > 0)
    losses.append(np.asarray(loss, dtype=np.float64))
    norms.append(_batch_norm(delta, tm))

    best_delta = delta.copy()
    best_loss = losses[0].copy()
    best_iter = np.zeros(n, dtype=np.int64)

    aborted = False
    steps_run = 0
    for t in range(1, cfg.steps + 1):
        if grad is None or not np.isfinite(grad).all():
            aborted = True
            break
        if tm.norm == "linf":
            step = cfg.alpha * np.sign(grad)
        else:
            step = cfg.alpha * grad
        delta = tm.project_batch(delta - step.astype(delta.dtype, copy=False))
        delta = clamp_to_range(x + delta, pixel_range) - x
        steps_run = t
        loss, grad = objective(x + delta, t < cfg.steps)
        loss = np.asarray(loss, dtype=np.float64)
        if not np.isfinite(loss).all():
            aborted = True
            break
        losses.append(loss)
        norms.append(_batch_norm(delta, tm))
        improved = loss < best_loss
        if improved.any():
            best_loss[improved] = loss[improved]
            best_delta[improved] = delta[improved]
            best_iter[improved] = t

    if cfg.return_best_iterate:
        out_delta, out_iter = best_delta, best_iter
    else:
        out_delta = delta
        out_iter = np.full(n, len(losses) - 1, dtype=np.int64)

    x_out = clamp_to_range(x + out_delta, pixel_range)
    trace = PGDTrace(
        loss_history=np.stack(losses),
        norm_history=np.stack(norms),
        final_norms=l2_norm_batch(x_out - x) if tm.norm == "l2" else _batch_norm(x_out - x, tm),
        returned_iterate=out_iter,
        aborted=aborted,
        steps_run=steps_run,
    )
    return x_out, trace


def _batch_norm(delta: np.ndarray, tm: ThreatModel) -> np.ndarray:
    if tm.norm == "l2":
        return l2_norm_batch(delta)
    return np.max(np.abs(delta.reshape(delta.shape[0], -1)), axis=1).astype(np.float64)


def targeted_pgd(clf: ClassifierHandle, x, y_target, tm: ThreatModel, cfg: PGDConfig):
    """Drive x toward the target class: descent on its classification loss.

    Equivalently, ascent on the target-class probability. Accepts a single
    image or a batch; y_target may be a scalar or a per-image vector.
    """
    x_arr = np.asarray(getattr(x, "images", x))
    single = x_arr.ndim == len(clf.input_shape)
    if single:
        x_arr = x_arr[None]
    y = np.broadcast_to(np.asarray(y_target, dtype=np.int64), (x_arr.shape[0],))

    def objective(xp, want_grad):
        return loss_and_grad(clf, xp, y, want_grad=want_grad)

    x_out, trace = pgd_minimize(objective, x_arr, clf.pixel_range, tm, cfg)
    return (x_out[0] if single else x_out), trace


def untargeted_pgd(clf: ClassifierHandle, x, y_true, tm: ThreatModel, cfg: PGDConfig):
    """Push x away from its true class: ascent on the classification loss."""
    x_arr = np.asarray(getattr(x, "images", x))
    single = x_arr.ndim == len(clf.input_shape)
    if single:
        x_arr = x_arr[None]
    y = np.broadcast_to(np.asarray(y_true, dtype=np.int64), (x_arr.shape[0],))

    def objective(xp, want_grad):
        loss, grad = loss_and_grad(clf, xp, y, want_grad=want_grad)
        return -loss, (None if grad is None else -grad)

    x_out, trace = pgd_minimize(objective, x_arr, clf.pixel_range, tm, cfg)
    # report the classification loss itself, not its negation
    trace.loss_history = -trace.loss_history
    return (x_out[0] if single else x_out), trace
