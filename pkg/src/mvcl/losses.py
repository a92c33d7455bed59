"""The nine contrastive losses, their alignment/uniformity split, counters and gradients.

Every loss is written in inner-product form, with similarity s(a, b) = u_a . u_b / tau
and every log of a sum of exponentials evaluated as a stabilised log-sum-exp.
Apart from ``avg``, each log term is anchored on a single instance ``i``, so the
losses are evaluated over blocks of anchor instances against a similarity block
``S[b, l, j, m] = u_{b,l} . u_{j,m} / tau``.  The gradient comes from the same
pass: each log-sum-exp contributes its soft-max weights to dL/dS, and
dL/dU follows from S being bilinear in U.

Index sets, per anchor (i, l), with positives always l' != l of the same instance:

=========== =================================================================
nt-xent     N = 2; negatives (j, m) != (i, l), positive included
dhel        N = 2; negatives (j, l), j != i
pwe         mean over view pairs of symmetrised nt-xent
avg         mean over views of symmetrised nt-xent between view l and the raw
            mean of the other views
pvc         per (i, l, l'): positive + all (j, m) with j != i
mv-infonce  one term per instance; sums over l inside both logs, negatives
            (j, m) with m != l
mv-dhel     one alignment log per instance; uniformity log per (i, l) over
            (j, l), j != i
mv-cl1      per (i, l) logs, negatives (j, m) with m != l
mv-cl2      per (i, l) logs, negatives (j, l) with j != i
=========== =================================================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .embedding import ViewBatch
from .errors import BadParameter, TooFewInstances, UnknownLoss, WrongViewCount

LOSS_NAMES = ("nt-xent", "dhel", "pwe", "avg", "pvc", "mv-infonce", "mv-dhel", "mv-cl1", "mv-cl2")
TWO_VIEW_LOSSES = ("nt-xent", "dhel")
# losses whose negative sets exclude the anchor's own instance
EXCLUDE_SELF_LOSSES = ("dhel", "pvc", "mv-dhel", "mv-cl2")
VIEW_SYMMETRIC_LOSSES = ("pwe", "avg", "pvc", "mv-infonce", "mv-dhel", "mv-cl1", "mv-cl2")
MIN_TAU = 1e-3

_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class LossSpec:
    name: str
    tau: float = 0.5

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise UnknownLoss(f"unknown loss {self.name!r}; choose from {', '.join(LOSS_NAMES)}")
        tau = float(self.tau)
        if not np.isfinite(tau) or tau < MIN_TAU:
            raise BadParameter(f"tau must be >= {MIN_TAU}, got {self.tau}")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    alignment_term: float
    uniformity_term: float
    terms_per_instance: int
    kernel_evals: int
    alignment_evals: int = 0
    uniformity_evals: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


# --- structure ----------------------------------------------------------------


def _check_name(name: str) -> None:
    if name not in LOSS_NAMES:
        raise UnknownLoss(f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}")


def terms_per_instance(name: str, n: int) -> int:
    _check_name(name)
    return {
        "nt-xent": 1,
        "dhel": 1,
        "pwe": n * (n - 1) // 2,
        "avg": n,
        "pvc": n * (n - 1),
        "mv-infonce": 1,
        "mv-dhel": 1,
        "mv-cl1": n,
        "mv-cl2": n,
    }[name]


def eval_counts(name: str, m: int, n: int) -> tuple[int, int]:
    """Closed-form (alignment, uniformity) counts of exponential terms evaluated."""
    _check_name(name)
    if name == "nt-xent":
        return 2 * m, 2 * m * (2 * m - 1)
    if name == "dhel":
        return 2 * m, 2 * m * (m - 1)
    if name == "pwe":
        return m * n * (n - 1), m * n * (n - 1) * (2 * m - 1)
    if name == "avg":
        return 2 * m * n, 2 * m * n * (2 * m - 1)
    if name == "pvc":
        return m * n * (n - 1), m * n * (n - 1) * (1 + (m - 1) * n)
    if name in ("mv-infonce", "mv-cl1"):
        return m * n * (n - 1), m * m * n * (n - 1)
    return m * n * (n - 1), m * n * (m - 1)  # mv-dhel, mv-cl2


def term_counts(name: str, m: int, n: int) -> tuple[int, int]:
    """(loss terms per instance, total kernel evaluations) for an m x n batch."""
    _check_name(name)
    if m < 2 or n < 2:
        raise TooFewInstances(f"term_counts needs m >= 2 and n >= 2, got m={m}, n={n}")
    if name in TWO_VIEW_LOSSES and n != 2:
        raise WrongViewCount(f"{name} is defined for exactly 2 views, got {n}")
    a, u = eval_counts(name, m, n)
    return terms_per_instance(name, n), a + u


def _validate(spec: LossSpec, batch: ViewBatch, check_norm: bool) -> None:
    if batch.n < 2:
        raise WrongViewCount(f"contrastive losses need at least 2 views, got {batch.n}")
    if spec.name in TWO_VIEW_LOSSES and batch.n != 2:
        raise WrongViewCount(f"{spec.name} is defined for exactly 2 views, got {batch.n}")
    if spec.name in EXCLUDE_SELF_LOSSES and batch.m < 2:
        raise TooFewInstances(f"{spec.name} has an empty negative set when M = 1")
    if check_norm:
        batch.require_unit()


# --- log-sum-exp helpers --------------------------------------------------------


def _lse(x: np.ndarray, mask: np.ndarray | None, axis):
    """Masked log-sum-exp over ``axis`` and its soft-max weights (zero off-mask)."""
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    top = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - top)
    z = np.sum(e, axis=axis, keepdims=True)
    return np.squeeze(np.log(z) + top, axis=axis), e / z


class _Acc:
    """Per-instance log-term sums and dL/dS weights of one block, before scaling."""

    def __init__(self, shape, want_grad):
        self.align = 0.0
        self.unif = 0.0
        self.align_evals = 0
        self.unif_evals = 0
        self.w_align = np.zeros(shape) if want_grad else None
        self.w_unif = np.zeros(shape) if want_grad else None


def _positive_view(S, idx):
    """P[b, l, l'] = S[b, l, idx[b], l']."""
    return S[np.arange(len(idx)), :, idx, :]


def _add_positive(w, idx, vals):
    w[np.arange(len(idx)), :, idx, :] += vals


def _block_terms(name: str, S: np.ndarray, idx: np.ndarray, want_grad: bool):
    B, n, m, _ = S.shape
    acc = _Acc(S.shape, want_grad)
    rows = np.arange(B)
    offdiag = ~np.eye(n, dtype=bool)
    same_view = np.eye(n, dtype=bool)
    self_inst = np.zeros((B, m), dtype=bool)
    self_inst[rows, idx] = True
    P = _positive_view(S, idx)  # (B, n, n)

    # alignment
    if name in ("mv-infonce", "mv-dhel"):
        flat = P.reshape(B, n * n)
        vals, w = _lse(flat, offdiag.reshape(1, -1), axis=1)
        acc.align = vals if vals.ndim == 1 else vals.sum(axis=1)
        acc.align_evals = B * int(offdiag.sum())
        if want_grad:
            _add_positive(acc.w_align, idx, w.reshape(B, n, n))
    elif name in ("mv-cl1", "mv-cl2"):
        vals, w = _lse(P, offdiag[None], axis=2)
        acc.align = vals if vals.ndim == 1 else vals.sum(axis=1)
        acc.align_evals = B * int(offdiag.sum())
        if want_grad:
            _add_positive(acc.w_align, idx, w)
    else:  # single positive per log term
        acc.align = np.where(offdiag[None], P, 0.0).sum(axis=(1, 2))
        acc.align_evals = B * int(offdiag.sum())
        if want_grad:
            _add_positive(acc.w_align, idx, np.broadcast_to(offdiag, P.shape).astype(float))

    # uniformity
    if name == "nt-xent":
        mask = ~(self_inst[:, None, :, None] & same_view[None, :, None, :])
        vals, w = _lse(S.reshape(B, n, m * n), mask.reshape(B, n, m * n), axis=2)
        acc.unif = vals if vals.ndim == 1 else vals.sum(axis=1)
        acc.unif_evals = int(np.broadcast_to(mask, S.shape).sum())
        if want_grad:
            acc.w_unif = w.reshape(S.shape)
    elif name in ("dhel", "mv-dhel", "mv-cl2"):
        Sd = np.stack([S[:, l, :, l] for l in range(n)], axis=1)  # (B, n, m)
        mask = ~self_inst[:, None, :]
        vals, w = _lse(Sd, mask, axis=2)
        acc.unif = vals if vals.ndim == 1 else vals.sum(axis=1)
        acc.unif_evals = int(np.broadcast_to(mask, Sd.shape).sum())
        if want_grad:
            for l in range(n):
                acc.w_unif[:, l, :, l] = w[:, l]
    elif name in ("mv-infonce", "mv-cl1"):
        mask = np.broadcast_to(offdiag[None, :, None, :], S.shape)
        if name == "mv-infonce":
            vals, w = _lse(S.reshape(B, -1), mask.reshape(B, -1), axis=1)
        else:
            vals, w = _lse(S.reshape(B, n, -1), mask.reshape(B, n, -1), axis=2)
        acc.unif = vals if vals.ndim == 1 else vals.sum(axis=1)
        acc.unif_evals = int(mask.sum())
        if want_grad:
            acc.w_unif = w.reshape(S.shape)
    elif name == "pvc":
        # log(e^{P[b,l,l']} + sum_{j != i, m} e^{S[b,l,j,m]}) for every l' != l
        neg_mask = np.broadcast_to(~self_inst[:, None, :, None], S.shape).reshape(B, n, m * n)
        if m > 1:
            c, wneg = _lse(S.reshape(B, n, m * n), neg_mask, axis=2)  # (B, n)
        else:
            c, wneg = np.full((B, n), -np.inf), np.zeros((B, n, m * n))
        t = np.logaddexp(P, c[:, :, None])  # (B, n, n)
        acc.unif = np.where(offdiag[None], t, 0.0).sum(axis=(1, 2))
        # one positive plus the masked negatives, for each of the n - 1 log terms of an anchor
        acc.unif_evals = (n - 1) * (B * n + int(neg_mask.sum()))
        if want_grad:
            wpos = np.where(offdiag[None], np.exp(P - t), 0.0)
            _add_positive(acc.w_unif, idx, wpos)
            # each negative is shared by the n-1 log terms of its anchor
            share = np.sum(np.where(offdiag[None], np.exp(c[:, :, None] - t), 0.0), axis=2)
            acc.w_unif += (wneg * share[:, :, None]).reshape(S.shape)
    elif name == "pwe":
        Sd = np.stack([S[:, l, :, l] for l in range(n)], axis=1)  # (B, n, m)
        excl = ~self_inst[:, None, :]
        if m > 1:
            a, wa = _lse(Sd, excl, axis=2)  # same-view negatives, self excluded
        else:
            a, wa = np.full((B, n), -np.inf), np.zeros((B, n, m))
        c, wc = _lse(S, None, axis=2)  # (B, n, n): all j in view m, positive included
        t = np.logaddexp(a[:, :, None], c)  # (B, l, m)
        acc.unif = np.where(offdiag[None], t, 0.0).sum(axis=(1, 2))
        # each (l, m != l) log term: same-view negatives plus every row of view m
        acc.unif_evals = (n - 1) * (n * int(excl.sum()) + B * n * m)
        if want_grad:
            frac_a = np.where(offdiag[None], np.exp(a[:, :, None] - t), 0.0)  # (B, l, m)
            frac_c = np.where(offdiag[None], np.exp(c - t), 0.0)
            share = frac_a.sum(axis=2)
            for l in range(n):
                acc.w_unif[:, l, :, l] += wa[:, l] * share[:, l, None]
            acc.w_unif += wc * frac_c[:, :, None, :]
    else:  # pragma: no cover
        raise UnknownLoss(name)
    return acc


def _scales(name: str, m: int, n: int) -> tuple[float, float]:
    """Multipliers applied to (sum of alignment logs, sum of uniformity logs)."""
    if name in TWO_VIEW_LOSSES:
        s = 1.0 / (2 * m)
        return s, s
    if name == "pwe":
        s = 1.0 / (m * n * (n - 1))
        return s, s
    if name == "pvc":
        s = 1.0 / (m * (n - 1))
        return s, s
    if name in ("mv-infonce", "mv-dhel"):
        return 1.0 / m, 1.0 / m
    return 1.0 / (n * m), 1.0 / (n * m)  # mv-cl1, mv-cl2


def _avg(X: np.ndarray, tau: float, want_grad: bool):
    """Symmetrised nt-xent between each view and the raw mean of the others."""
    m, n, d = X.shape
    align = unif = 0.0
    grad = np.zeros_like(X) if want_grad else None
    total = X.sum(axis=1)
    partner = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    rows = np.arange(2 * m)
    not_self = ~np.eye(2 * m, dtype=bool)
    for l in range(n):
        mean = (total - X[:, l]) / (n - 1)
        Y = np.concatenate([X[:, l], mean])
        G = (Y @ Y.T) / tau
        a_vals = G[rows, partner]
        u_vals, w = _lse(G, not_self, axis=1)
        align += np.sum(a_vals)
        unif += np.sum(u_vals)
        if want_grad:
            W = w
            W[rows, partner] -= 1.0
            W *= 1.0 / (2 * m * n)
            dY = ((W + W.T) @ Y) / tau
            grad[:, l] += dY[:m]
            grad += dY[m:, None, :] / (n - 1)
            grad[:, l] -= dY[m:] / (n - 1)
    s = 1.0 / (2 * m * n)
    counts = (n * len(rows), n * int(not_self.sum()))
    return -align * s, unif * s, grad, counts


def _run(spec: LossSpec, batch: ViewBatch, want_grad: bool, check_norm: bool):
    _validate(spec, batch, check_norm)
    X = batch.data
    m, n, d = X.shape
    tau = spec.tau
    if spec.name == "avg":
        a, u, grad, (ae, ue) = _avg(X, tau, want_grad)
        return a, u, ae, ue, grad

    sa, su = _scales(spec.name, m, n)
    align_terms = np.empty(m)
    unif_terms = np.empty(m)
    ae = ue = 0
    grad = np.zeros_like(X) if want_grad else None
    block = max(1, _BLOCK_ELEMS // (n * m * n))
    for b0 in range(0, m, block):
        b1 = min(m, b0 + block)
        idx = np.arange(b0, b1)
        S = np.einsum("bld,jmd->bljm", X[b0:b1], X) / tau
        acc = _block_terms(spec.name, S, idx, want_grad)
        align_terms[b0:b1] = acc.align
        unif_terms[b0:b1] = acc.unif
        ae += acc.align_evals
        ue += acc.unif_evals
        if want_grad:
            W = (-sa) * acc.w_align + su * acc.w_unif  # (B, n, m, n)
            grad[b0:b1] += np.einsum("bljm,jmd->bld", W, X) / tau
            grad += np.einsum("bljm,bld->jmd", W, X[b0:b1]) / tau
    return -sa * np.sum(align_terms), su * np.sum(unif_terms), ae, ue, grad


def evaluate(spec: LossSpec, batch: ViewBatch, *, check_norm: bool = True) -> LossBreakdown:
    """Loss value with its alignment / uniformity split and evaluation counters.

    ``check_norm=False`` skips the unit-norm precondition; finite-difference
    probes use it to evaluate slightly off-sphere points.
    """
    a, u, ae, ue, _ = _run(spec, batch, want_grad=False, check_norm=check_norm)
    return LossBreakdown(
        total=float(a + u),
        alignment_term=float(a),
        uniformity_term=float(u),
        terms_per_instance=terms_per_instance(spec.name, batch.n),
        kernel_evals=int(ae + ue),
        alignment_evals=int(ae),
        uniformity_evals=int(ue),
    )


def value_and_gradient(spec: LossSpec, batch: ViewBatch, *, check_norm: bool = True):
    """(LossBreakdown, dL/dU) in one pass."""
    a, u, ae, ue, grad = _run(spec, batch, want_grad=True, check_norm=check_norm)
    bd = LossBreakdown(
        total=float(a + u),
        alignment_term=float(a),
        uniformity_term=float(u),
        terms_per_instance=terms_per_instance(spec.name, batch.n),
        kernel_evals=int(ae + ue),
        alignment_evals=int(ae),
        uniformity_evals=int(ue),
    )
    return bd, grad


def euclidean_gradient(spec: LossSpec, batch: ViewBatch, *, check_norm: bool = True) -> np.ndarray:
    """Exact gradient of ``evaluate(spec, batch).total`` w.r.t. every entry, rows treated as free."""
    return value_and_gradient(spec, batch, check_norm=check_norm)[1]
