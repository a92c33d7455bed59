"""Gradient checking, tangent projection, projected descent on spheres and a linear encoder."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import ViewBatch, normalize_rows
from .errors import BadParameter, Diverged, InvalidShape, NotUnitNorm, ZeroProjection
from .losses import LossSpec, evaluate, value_and_gradient
from .metrics import alignment_metric, uniformity_moment

TRACE_COLUMNS = ("step", "loss", "alignment", "uniformity", "grad_norm")


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e) - f(x - h e)) / 2h for every coordinate of x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    probe = x.copy()
    for idx in np.ndindex(x.shape):
        orig = probe[idx]
        probe[idx] = orig + h
        fp = f(probe)
        probe[idx] = orig - h
        fm = f(probe)
        probe[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def finite_difference_gradient(spec: LossSpec, batch: ViewBatch, h: float = 1e-5) -> np.ndarray:
    """Numerical dL/dU; perturbed rows are left off the sphere, like the analytic gradient."""
    if not 1e-8 <= h <= 1e-3:
        raise BadParameter(f"h must lie in [1e-8, 1e-3], got {h}")
    evaluate(spec, batch)  # precondition check on the unperturbed batch
    return finite_difference(lambda x: evaluate(spec, ViewBatch(x), check_norm=False).total, batch.data, h)


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def tangent_project(grad: np.ndarray, batch: ViewBatch, tol: float = 1e-6) -> np.ndarray:
    """Remove the radial component of each gradient row: g - (g.u) u."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != batch.data.shape:
        raise InvalidShape(f"gradient shape {grad.shape} does not match batch {batch.data.shape}")
    if not batch.is_unit(tol):
        raise NotUnitNorm("tangent projection needs unit-norm rows")
    U = batch.data
    return grad - np.sum(grad * U, axis=-1, keepdims=True) * U


@dataclass(frozen=True)
class OptConfig:
    steps: int = 1000
    learning_rate: float | None = None  # None: 0.5 * tau
    momentum: float = 0.0
    tolerance_grad_norm: float = 1e-8
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise BadParameter("steps must be an integer >= 1")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise BadParameter("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise BadParameter("momentum must lie in [0, 1)")
        if not self.tolerance_grad_norm >= 0:
            raise BadParameter("tolerance_grad_norm must be >= 0")
        if int(self.log_every) != self.log_every or self.log_every < 1:
            raise BadParameter("log_every must be an integer >= 1")

    def lr_for(self, spec: LossSpec) -> float:
        return 0.5 * spec.tau if self.learning_rate is None else float(self.learning_rate)


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    alignment: float
    uniformity: float
    grad_norm: float


@dataclass
class OptTrace:
    records: list = field(default_factory=list)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self, header_comments: list[str] | None = None) -> str:
        buf = io.StringIO()
        for line in header_comments or []:
            buf.write(f"# {line}\n")
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for r in self.records:
            buf.write(f"{r.step},{r.loss:.17g},{r.alignment:.17g},{r.uniformity:.17g},{r.grad_norm:.17g}\n")
        return buf.getvalue()


def optimize(spec: LossSpec, init: ViewBatch, cfg: OptConfig, record_all: bool = False):
    """Riemannian heavy-ball descent on the product of unit spheres.

    Each step: v <- momentum * v + tangent gradient; u <- normalize(u - lr * v);
    v is then re-projected onto the new tangent spaces.  Stops after
    ``cfg.steps`` updates or once the largest tangent-gradient row norm falls
    below ``cfg.tolerance_grad_norm``.  ``record_all`` logs every step.
    Returns (final batch, trace).
    """
    init.require_unit()
    lr = cfg.lr_for(spec)
    U = init.data.copy()
    vel = np.zeros_like(U)
    trace = OptTrace()
    every = 1 if record_all else cfg.log_every
    for step in range(cfg.steps + 1):
        batch = ViewBatch(U) if np.all(np.isfinite(U)) else None
        if batch is None:
            raise Diverged(f"embeddings became non-finite at step {step}")
        bd, grad = value_and_gradient(spec, batch, check_norm=False)
        if not (np.isfinite(bd.total) and np.all(np.isfinite(grad))):
            raise Diverged(f"loss became non-finite at step {step}")
        g = grad - np.sum(grad * U, axis=-1, keepdims=True) * U
        gnorm = float(np.max(np.linalg.norm(g, axis=-1)))
        done = step == cfg.steps or gnorm < cfg.tolerance_grad_norm
        if step % every == 0 or done:
            trace.records.append(
                TraceRecord(step, bd.total, alignment_metric(batch), uniformity_moment(batch), gnorm)
            )
        if done:
            break
        vel = cfg.momentum * vel + g
        U = normalize_rows(U - lr * vel)
        vel = vel - np.sum(vel * U, axis=-1, keepdims=True) * U
    return ViewBatch(U), trace


# --- linear encoder ---------------------------------------------------------------


@dataclass(frozen=True)
class LinearEncoder:
    """u = W x / |W x| with W of shape (d, p)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidShape("encoder weights must be a (d, p) matrix")
        object.__setattr__(self, "weights", w)


def _project_inputs(enc: LinearEncoder, inputs: np.ndarray):
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != enc.weights.shape[1]:
        raise InvalidShape(f"inputs must be (M, N, {enc.weights.shape[1]}), got {X.shape}")
    Z = X @ enc.weights.T
    r = np.linalg.norm(Z, axis=-1, keepdims=True)
    if np.any(r <= 1e-12):
        raise ZeroProjection("an input maps to (near) zero under W")
    return X, Z, r


def encoder_forward(enc: LinearEncoder, inputs: np.ndarray) -> ViewBatch:
    _, Z, r = _project_inputs(enc, inputs)
    return ViewBatch(Z / r)


def encoder_gradient(enc: LinearEncoder, inputs: np.ndarray, spec: LossSpec) -> np.ndarray:
    """dL/dW through the normalisation Jacobian (I - u u^T) / |W x|."""
    X, Z, r = _project_inputs(enc, inputs)
    U = Z / r
    _, gU = value_and_gradient(spec, ViewBatch(U), check_norm=False)
    gZ = (gU - np.sum(gU * U, axis=-1, keepdims=True) * U) / r
    return np.einsum("mnd,mnp->dp", gZ, X)


def optimize_restarts(spec: LossSpec, inits, cfg: OptConfig):
    """Run ``optimize`` from each initial batch and keep the lowest final loss.

    Returns (best batch, best trace, index of the winning start, final losses).
    Ties go to the earliest start.
    """
    best = None
    finals = []
    for k, init in enumerate(inits):
        out, trace = optimize(spec, init, cfg)
        finals.append(trace.final.loss)
        if best is None or trace.final.loss < best[1].final.loss:
            best = (out, trace, k)
    if best is None:
        raise BadParameter("need at least one initial batch")
    return best[0], best[1], best[2], finals
