"""Scalar kernels of squared distance and the pairwise kernel K(u, v) = kappa(|u - v|^2).

Two Gaussian parameterisations are kept apart on purpose:

* ``gaussian-cl(tau)``: kappa(x) = exp((2 - x) / (2 tau)); on the sphere this is exp(u.v / tau),
  the similarity every contrastive loss here is built on.
* ``gaussian-t(t)``: kappa(x) = exp(-t x), the form used for energies and the
  Wang-Isola uniformity metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import BadParameter, NotUnitNorm, OutOfDomain

DOMAIN_TOL = 1e-9
MAX_SQ_DIST = 4.0

_PARAMS = {
    "gaussian-cl": ("tau",),
    "gaussian-t": ("t",),
    "logarithmic": ("s", "beta"),
}


@dataclass(frozen=True)
class Kernel:
    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _PARAMS:
            raise BadParameter(f"unknown kernel family {self.family!r}; choose from {sorted(_PARAMS)}")
        expected = set(_PARAMS[self.family])
        got = set(self.params)
        if got != expected:
            raise BadParameter(f"{self.family} takes parameters {sorted(expected)}, got {sorted(got)}")
        clean = {}
        for name in _PARAMS[self.family]:
            value = float(self.params[name])
            if not np.isfinite(value) or value <= 0:
                raise BadParameter(f"kernel parameter {name} must be positive, got {value}")
            clean[name] = value
        object.__setattr__(self, "params", clean)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    @classmethod
    def gaussian_cl(cls, tau: float) -> "Kernel":
        return cls("gaussian-cl", {"tau": tau})

    @classmethod
    def gaussian_t(cls, t: float) -> "Kernel":
        return cls("gaussian-t", {"t": t})

    @classmethod
    def logarithmic(cls, s: float, beta: float) -> "Kernel":
        return cls("logarithmic", {"s": s, "beta": beta})

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "Kernel":
        """Build from ``{"kernel": family, <param>: value, ...}``."""
        cfg = dict(cfg)
        try:
            family = cfg.pop("kernel")
        except KeyError:
            raise BadParameter("kernel config needs a 'kernel' key") from None
        return cls(str(family), cfg)

    def to_config(self) -> dict:
        return {"kernel": self.family, **self.params}


def _check_domain(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > MAX_SQ_DIST + DOMAIN_TOL):
        raise OutOfDomain("squared distance must lie in [0, 4]")
    return x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def kappa(kernel: Kernel, x):
    x = _check_domain(x)
    p = kernel.params
    if kernel.family == "gaussian-cl":
        val = np.exp((2.0 - x) / (2.0 * p["tau"]))
    elif kernel.family == "gaussian-t":
        val = np.exp(-p["t"] * x)
    else:
        val = -0.5 * np.log(p["s"] * x + p["beta"])
    return _out(val)


def kappa_prime(kernel: Kernel, x):
    x = _check_domain(x)
    p = kernel.params
    if kernel.family == "gaussian-cl":
        val = -np.exp((2.0 - x) / (2.0 * p["tau"])) / (2.0 * p["tau"])
    elif kernel.family == "gaussian-t":
        val = -p["t"] * np.exp(-p["t"] * x)
    else:
        val = -p["s"] / (2.0 * (p["s"] * x + p["beta"]))
    return _out(val)


def kernel_value_and_grad(kernel: Kernel, u, v, tol: float = 1e-6) -> tuple[float, np.ndarray]:
    """K(u, v) and its gradient with respect to u."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > tol or abs(np.linalg.norm(v) - 1.0) > tol:
        raise NotUnitNorm("kernel arguments must be unit vectors")
    diff = u - v
    sq = float(diff @ diff)
    return kappa(kernel, sq), kappa_prime(kernel, sq) * 2.0 * diff


def pairwise_energy(kernel: Kernel, points: np.ndarray) -> float:
    """Sum of K over unordered distinct pairs of the given rows."""
    pts = np.asarray(points, dtype=np.float64)
    iu = np.triu_indices(len(pts), k=1)
    diff = pts[iu[0]] - pts[iu[1]]
    sq = np.minimum(np.einsum("ij,ij->i", diff, diff), MAX_SQ_DIST)
    return float(np.sum(kappa(kernel, sq)))
