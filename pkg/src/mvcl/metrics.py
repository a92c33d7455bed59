"""Representation-quality metrics and the large-batch asymptotics of the multi-view losses."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .embedding import ViewBatch, instance_stream, sample_uniform_sphere
from .errors import BadParameter, InvalidShape, SvdFailure, TooFewRows, TooFewSamples, WrongViewCount
from .losses import LossSpec, evaluate

_DOMAIN_MC_DRAWS = 11
_BLOCK_ROWS = 2048


@dataclass(frozen=True)
class MetricReport:
    alignment: float
    uniformity_wi: float
    uniformity_moment: float
    rankme: float
    numerical_rank: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def alignment_metric(batch: ViewBatch) -> float:
    """Mean squared distance between positive views, over instances and unordered view pairs."""
    if batch.n < 2:
        raise WrongViewCount(f"alignment needs at least 2 views, got {batch.n}")
    X = batch.data
    l, lp = np.triu_indices(batch.n, k=1)
    diff = X[:, l, :] - X[:, lp, :]
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def uniformity_wi(batch: ViewBatch, t: float = 2.0) -> float:
    """log of the mean of exp(-t |u - v|^2) over ordered pairs of distinct rows."""
    if not t > 0:
        raise BadParameter(f"t must be positive, got {t}")
    R = batch.rows
    r = len(R)
    if r < 2:
        raise TooFewRows("uniformity needs at least two rows")
    sqn = np.sum(R * R, axis=1)
    # running log-sum-exp over row blocks; exponents are <= 0 so no overflow
    parts = []
    for b0 in range(0, r, _BLOCK_ROWS):
        b1 = min(r, b0 + _BLOCK_ROWS)
        sq = sqn[b0:b1, None] + sqn[None, :] - 2.0 * (R[b0:b1] @ R.T)
        sq = np.maximum(sq, 0.0)
        expo = -t * sq
        expo[np.arange(b1 - b0), np.arange(b0, b1)] = -np.inf
        top = np.max(expo)
        parts.append(top + np.log(np.sum(np.exp(expo - top))))
    parts = np.asarray(parts)
    top = np.max(parts)
    return float(top + np.log(np.sum(np.exp(parts - top))) - np.log(r * (r - 1.0)))


def uniformity_moment(batch: ViewBatch) -> float:
    """Frobenius distance between the rows' second-moment matrix and I/d."""
    R = batch.rows
    second = (R.T @ R) / len(R)
    return float(np.linalg.norm(second - np.eye(batch.d) / batch.d))


def rank_metrics(batch: ViewBatch, epsilon: float = 1e-6) -> tuple[float, int]:
    """(RankMe, numerical rank) of the flattened (M*N, d) embedding matrix."""
    if not epsilon > 0:
        raise BadParameter(f"epsilon must be positive, got {epsilon}")
    try:
        sigma = np.linalg.svd(batch.rows, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    if not np.all(np.isfinite(sigma)) or sigma[0] <= 0:
        raise SvdFailure("degenerate singular values")
    # singular values at rounding level (numpy's matrix_rank cut-off) are exact zeros
    floor = max(batch.rows.shape) * np.finfo(np.float64).eps * sigma[0]
    kept = sigma[sigma > floor]
    nz = kept / np.sum(kept)
    rankme = float(np.exp(-np.sum(nz * np.log(nz))))
    rankme = min(max(rankme, 1.0), float(min(batch.rows.shape)))
    numerical_rank = int(np.sum(sigma > epsilon * sigma[0]))
    return rankme, numerical_rank


def metric_report(batch: ViewBatch, t: float = 2.0, epsilon: float = 1e-6) -> MetricReport:
    rankme, nrank = rank_metrics(batch, epsilon)
    return MetricReport(
        alignment=alignment_metric(batch),
        uniformity_wi=uniformity_wi(batch, t),
        uniformity_moment=uniformity_moment(batch),
        rankme=rankme,
        numerical_rank=nrank,
    )


# --- asymptotics ----------------------------------------------------------------


def asymptotic_terms(samples, tau: float, pair_draws: int, seed: int, positive_pairs=None) -> tuple[float, float]:
    """Monte-Carlo estimates of the two terms of the large-batch InfoNCE objective.

    First term: E[-v.u / tau] over positive pairs.  Without ``positive_pairs``
    the positives are taken perfectly aligned (u = v, v drawn from ``samples``);
    otherwise ``positive_pairs = (U, V)`` holds matched rows and ``pair_draws``
    of them are drawn.  Second term: E_v[log E_u[exp(v.u / tau)]], with v drawn
    ``pair_draws`` times from ``samples`` and the inner mean taken over all other
    samples.
    """
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim != 2:
        raise InvalidShape("samples must be a (K, d) array")
    k = len(S)
    if k < 2:
        raise TooFewSamples("need at least two samples")
    if pair_draws < 1:
        raise BadParameter("pair_draws must be >= 1")
    rng = instance_stream(seed, 0, _DOMAIN_MC_DRAWS)
    draws = rng.integers(0, k, size=pair_draws)

    if positive_pairs is None:
        V = S[draws]
        first = -float(np.mean(np.sum(V * V, axis=1))) / tau
    else:
        U, W = (np.asarray(a, dtype=np.float64) for a in positive_pairs)
        if U.shape != W.shape or U.ndim != 2:
            raise InvalidShape("positive_pairs must be two matching (P, d) arrays")
        pick = rng.integers(0, len(U), size=pair_draws)
        first = -float(np.mean(np.sum(U[pick] * W[pick], axis=1))) / tau

    logs = np.empty(pair_draws)
    for b0 in range(0, pair_draws, _BLOCK_ROWS):
        b1 = min(pair_draws, b0 + _BLOCK_ROWS)
        expo = (S[draws[b0:b1]] @ S.T) / tau
        expo[np.arange(b1 - b0), draws[b0:b1]] = -np.inf
        top = np.max(expo, axis=1, keepdims=True)
        logs[b0:b1] = np.log(np.sum(np.exp(expo - top), axis=1)) + top[:, 0]
    second = float(np.mean(logs) - np.log(k - 1.0))
    return first, second


def asymptotic_formula_mc(samples, tau: float, pair_draws: int, seed: int, positive_pairs=None) -> float:
    first, second = asymptotic_terms(samples, tau, pair_draws, seed, positive_pairs)
    return first + second


def normalized_uniformity(name: str, batch: ViewBatch, tau: float) -> float:
    """Uniformity term of mv-infonce / mv-dhel minus its normalising constants."""
    m, n = batch.m, batch.n
    unif = evaluate(LossSpec(name, tau), batch).uniformity_term
    if name == "mv-infonce":
        return unif - np.log(m - 1.0) - np.log(n * (n - 1.0))
    if name == "mv-dhel":
        return unif / n - np.log(m - 1.0)
    raise BadParameter(f"normalized uniformity is defined for mv-infonce and mv-dhel, not {name!r}")


def aligned_uniform_batch(m: int, n: int, d: int, seed: int) -> ViewBatch:
    """Perfectly aligned batch: each instance repeats one uniform anchor in all n views."""
    anchors = sample_uniform_sphere(m, 1, d, seed).data
    return ViewBatch(np.repeat(anchors, n, axis=1))


def normalized_uniformity_gap(
    name: str,
    m: int,
    n: int,
    d: int,
    tau: float,
    seed: int,
    reference_samples: int = 20000,
    pair_draws: int = 4000,
) -> float:
    """|normalized uniformity of an aligned uniform batch - MC large-batch target|."""
    if m < 4:
        raise BadParameter(f"m must be >= 4, got {m}")
    batch = aligned_uniform_batch(m, n, d, seed)
    value = normalized_uniformity(name, batch, tau)
    # reference cloud on its own stream so it never overlaps the batch anchors
    ref = sample_uniform_sphere(reference_samples, 1, d, seed ^ 0x9E3779B97F4A7C15).rows
    _, target = asymptotic_terms(ref, tau, pair_draws, seed)
    return abs(value - target)
