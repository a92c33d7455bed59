"""Deliberately naive reference implementations used as ground truth.

Nothing here imports from ``mvcl.losses``: every loss is re-read straight from its
displayed sum, looped over explicitly, with plain ``math.exp`` / ``math.log``
and no shared sub-expressions.  Keep it that way.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .embedding import ViewBatch
from .errors import BadParameter, SizeGuard, TooFewInstances, UnknownLoss, WrongViewCount
from .kernels import Kernel, kappa

MAX_M = 16
MAX_N = 8
_NAMES = ("nt-xent", "dhel", "pwe", "avg", "pvc", "mv-infonce", "mv-dhel", "mv-cl1", "mv-cl2")


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _e(a, b, tau):
    return math.exp(_dot(a, b) / tau)


def _ntxent_pair(A, B, tau):
    """NT-Xent on two views A, B (lists of vectors), averaged over both anchor views."""
    M = len(A)
    views = [A, B]
    total = 0.0
    for l in range(2):
        other = 1 - l
        for i in range(M):
            anchor = views[l][i]
            num = _e(anchor, views[other][i], tau)
            den = 0.0
            for j in range(M):
                for m in range(2):
                    if (j, m) == (i, l):
                        continue
                    den += _e(anchor, views[m][j], tau)
            total += -math.log(num / den)
    return total / (2 * M)


def _dhel_pair(A, B, tau):
    M = len(A)
    views = [A, B]
    total = 0.0
    for l in range(2):
        for i in range(M):
            anchor = views[l][i]
            num = _e(anchor, views[1 - l][i], tau)
            den = 0.0
            for j in range(M):
                if j != i:
                    den += _e(anchor, views[l][j], tau)
            total += -math.log(num / den)
    return total / (2 * M)


def naive_evaluate(spec, batch: ViewBatch) -> float:
    """The loss value by direct enumeration of its defining sums.

    ``spec`` is anything with ``name`` and ``tau`` attributes.
    """
    name, tau = spec.name, float(spec.tau)
    if name not in _NAMES:
        raise UnknownLoss(name)
    M, N, _ = batch.data.shape
    if M > MAX_M or N > MAX_N:
        raise SizeGuard(f"naive_evaluate is limited to M <= {MAX_M}, N <= {MAX_N}")
    if N < 2 or (name in ("nt-xent", "dhel") and N != 2):
        raise WrongViewCount(f"{name}: bad view count {N}")
    if M < 2 and name in ("dhel", "pvc", "mv-dhel", "mv-cl2"):
        raise TooFewInstances(name)
    U = batch.data.tolist()
    view = lambda l: [U[i][l] for i in range(M)]  # noqa: E731

    if name == "nt-xent":
        return _ntxent_pair(view(0), view(1), tau)
    if name == "dhel":
        return _dhel_pair(view(0), view(1), tau)

    if name == "pwe":
        total = 0.0
        for l in range(N):
            for m in range(l + 1, N):
                total += _ntxent_pair(view(l), view(m), tau)
        return 2.0 * total / (N * (N - 1))

    if name == "avg":
        total = 0.0
        for l in range(N):
            means = []
            for i in range(M):
                acc = [0.0] * len(U[i][l])
                for m in range(N):
                    if m != l:
                        acc = [a + b for a, b in zip(acc, U[i][m])]
                means.append([a / (N - 1) for a in acc])
            total += _ntxent_pair(view(l), means, tau)
        return total / N

    if name == "pvc":
        total = 0.0
        for i in range(M):
            for l in range(N):
                for lp in range(N):
                    if lp == l:
                        continue
                    pos = _e(U[i][l], U[i][lp], tau)
                    den = pos
                    for j in range(M):
                        if j == i:
                            continue
                        for m in range(N):
                            den += _e(U[i][l], U[j][m], tau)
                    total += math.log(pos / den)
        return -total / (M * (N - 1))

    if name == "mv-infonce":
        total = 0.0
        for i in range(M):
            num = 0.0
            den = 0.0
            for l in range(N):
                for lp in range(N):
                    if lp != l:
                        num += _e(U[i][l], U[i][lp], tau)
                for j in range(M):
                    for m in range(N):
                        if m != l:
                            den += _e(U[i][l], U[j][m], tau)
            total += -math.log(num / den)
        return total / M

    if name == "mv-dhel":
        total = 0.0
        for i in range(M):
            num = 0.0
            for l in range(N):
                for lp in range(N):
                    if lp != l:
                        num += _e(U[i][l], U[i][lp], tau)
            prod = 1.0
            for l in range(N):
                s = 0.0
                for j in range(M):
                    if j != i:
                        s += _e(U[i][l], U[j][l], tau)
                prod *= s
            total += -math.log(num / prod)
        return total / M

    # mv-cl1 / mv-cl2: one log term per (i, l)
    total = 0.0
    for i in range(M):
        for l in range(N):
            num = 0.0
            for lp in range(N):
                if lp != l:
                    num += _e(U[i][l], U[i][lp], tau)
            den = 0.0
            for j in range(M):
                if name == "mv-cl1":
                    for m in range(N):
                        if m != l:
                            den += _e(U[i][l], U[j][m], tau)
                elif j != i:
                    den += _e(U[i][l], U[j][l], tau)
            total += -math.log(num / den)
    return total / (N * M)


def agreement_error(value: float, reference: float) -> float:
    """|value - reference| / max(|reference|, 1).

    Relative error for losses of magnitude >= 1, absolute below that: a loss
    total is a difference of O(1) alignment and uniformity terms, so a purely
    relative measure is ill-conditioned when they nearly cancel (and undefined
    at an exact zero).
    """
    return abs(value - reference) / max(abs(reference), 1.0)


# --- minimal energy on the circle ---------------------------------------------


@dataclass(frozen=True)
class EnergyResult:
    angles: tuple
    energy: float
    evaluations: int


def _circle_energy(kernel: Kernel, angles) -> float:
    e = 0.0
    for a, b in itertools.combinations(angles, 2):
        sq = min(2.0 - 2.0 * math.cos(a - b), 4.0)
        e += kappa(kernel, max(sq, 0.0))
    return e


def _grid_pair_table(kernel: Kernel, resolution: int) -> np.ndarray:
    """Kernel value for every grid separation k * 2pi / resolution."""
    sep = 2.0 * np.pi * np.arange(resolution) / resolution
    sq = np.clip(2.0 - 2.0 * np.cos(sep), 0.0, 4.0)
    return np.asarray(kappa(kernel, sq), dtype=np.float64)


def _coarse_resolution(m: int, resolution: int) -> int:
    # exhaustive search over sorted grid tuples costs C(res - 1, m - 1)
    if m <= 4:
        return resolution
    return max(m, resolution // (5 if m == 5 else 10))


def _exhaustive(m: int, table: np.ndarray, res: int):
    """Best sorted grid tuple (0, k1 < ... < k_{m-1}) and the number of tuples scored."""
    best_e, best = math.inf, None
    count = 0
    if m == 1:
        return (0,), 0.0, 1
    first = np.arange(1, res)
    # enumerate all but the last index in Python, the last index vectorised
    for head in itertools.combinations(range(1, res), m - 2):
        start = head[-1] + 1 if head else 1
        last = first[first >= start]
        if last.size == 0:
            continue
        e = np.zeros(last.size)
        pts = (0,) + head
        for a, b in itertools.combinations(pts, 2):
            e += table[(b - a) % res]
        for p in pts:
            e += table[(last - p) % res]
        count += last.size
        k = int(np.argmin(e))  # first minimum: lowest lexicographic tuple wins ties
        if e[k] < best_e - 1e-15:
            best_e, best = float(e[k]), pts + (int(last[k]),)
    return best, best_e, count


def circle_energy_minimum(m: int, kernel: Kernel, resolution: int = 360, offset: float = 0.0) -> EnergyResult:
    """Minimum total pairwise kernel energy of m points on the unit circle.

    The first point is pinned at ``offset``; the others are searched exhaustively
    on a grid (coarser for m >= 5, where the full grid is intractable), then
    refined by coordinate descent with step (2 pi / resolution) / 10.
    """
    if not 2 <= m <= 6:
        raise SizeGuard(f"circle_energy_minimum supports 2 <= m <= 6, got {m}")
    if resolution < 360:
        raise BadParameter(f"resolution must be >= 360, got {resolution}")
    res = _coarse_resolution(m, resolution)
    table = _grid_pair_table(kernel, res)
    idx, _, evaluations = _exhaustive(m, table, res)
    angles = [offset + 2.0 * math.pi * k / res for k in idx]

    if res != resolution:
        # re-seat on the full grid before the fine refinement
        steps = [2.0 * math.pi / resolution]
    else:
        steps = []
    steps.append(2.0 * math.pi / resolution / 10.0)
    energy = _circle_energy(kernel, angles)
    evaluations += 1
    for step in steps:
        improved = True
        while improved:
            improved = False
            for k in range(1, m):
                for sign in (1.0, -1.0):
                    trial = list(angles)
                    trial[k] += sign * step
                    e = _circle_energy(kernel, trial)
                    evaluations += 1
                    if e < energy - 1e-15:
                        angles, energy, improved = trial, e, True
                        break
    wrapped = sorted(a % (2.0 * math.pi) for a in angles)
    return EnergyResult(angles=tuple(wrapped), energy=energy, evaluations=evaluations)


def circular_gaps(angles) -> np.ndarray:
    """Consecutive angular gaps of sorted angles on the circle (wrap-around included)."""
    a = np.sort(np.mod(np.asarray(angles, dtype=float), 2.0 * np.pi))
    return np.diff(np.concatenate([a, [a[0] + 2.0 * np.pi]]))
