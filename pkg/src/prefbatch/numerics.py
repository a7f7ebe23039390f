"""Shared deterministic numerical kernels.

Cholesky with jitter escalation, standard-normal CDF/log-CDF, Gauss-Hermite
quadrature rules and multivariate-normal sampling. Everything here is pure
and reentrant; randomness always flows through a caller-supplied
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.linalg import cholesky as _scipy_cholesky

from .errors import NotPSD

__all__ = [
    "QuadratureRule",
    "chol_psd",
    "std_normal_cdf",
    "std_normal_pdf",
    "log_std_normal_cdf",
    "gauss_hermite",
    "mvn_sample",
]

_SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes/weights in the physicists' convention.

    Weights sum to sqrt(pi); integrates exp(-t^2) p(t) exactly for
    polynomials p up to degree 2n-1.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)


def chol_psd(a: np.ndarray, jitter0: float | None = None) -> np.ndarray:
    """Lower Cholesky factor of ``a`` (+ escalating diagonal jitter).

    Jitter starts at ``jitter0`` (default 1e-8 * mean diagonal) and grows
    tenfold per attempt up to 1e-2 * mean diagonal. Raises :class:`NotPSD`
    once the escalation is exhausted.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        return np.zeros_like(a)
    scale = max(float(np.mean(np.abs(np.diag(a)))), np.finfo(float).tiny)
    if not np.allclose(a, a.T, rtol=_SYMMETRY_RTOL, atol=_SYMMETRY_RTOL * scale):
        raise ValueError("matrix is not symmetric")

    base = 1e-8 * scale
    cap = 1e-2 * scale
    jitter = base if jitter0 is None else float(jitter0)
    tried_zero = False
    while True:
        try:
            shifted = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
            return _scipy_cholesky(shifted, lower=True)
        except np.linalg.LinAlgError:
            pass
        except Exception:  # scipy raises LinAlgError subclasses; be permissive
            pass
        if jitter == 0.0:
            if tried_zero:
                raise NotPSD("zero jitter requested and factorization failed")
            tried_zero = True
            jitter = base
            continue
        jitter *= 10.0
        if jitter > cap:
            raise NotPSD(f"not PSD after jitter escalation up to {cap:.3e}")


def std_normal_cdf(z):
    """Standard normal CDF, accurate to ~1e-16 absolute."""
    return special.ndtr(z)


def std_normal_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def log_std_normal_cdf(z):
    """log Phi(z), finite and accurate far into the left tail.

    Uses the asymptotic continued-fraction regime below roughly z = -8
    (via ``scipy.special.log_ndtr``), so arguments like z = -400 stay
    finite instead of collapsing to log(0).
    """
    return special.log_ndtr(z)


def normal_pdf_cdf_ratio(z):
    """phi(z) / Phi(z), the derivative of log Phi.

    Below z = -30 the exact expression cancels catastrophically (and its
    intermediates overflow for runaway arguments), so the asymptotic
    expansion -z - 1/z + 2/z^3 takes over there.
    """
    z = np.asarray(z, dtype=float)
    safe = np.where(z < -30.0, 0.0, z)
    exact = np.exp(
        -0.5 * safe * safe - 0.5 * np.log(2.0 * np.pi) - special.log_ndtr(safe)
    )
    tail_z = np.clip(np.where(z < -30.0, z, -30.0), -1e100, None)
    tail = -tail_z - 1.0 / tail_z + 2.0 / tail_z**3
    return np.where(z < -30.0, tail, exact)


@lru_cache(maxsize=32)
def gauss_hermite(n: int) -> QuadratureRule:
    """Gauss-Hermite rule with ``n`` nodes (physicists' weight exp(-t^2))."""
    if not 1 <= n <= 128:
        raise ValueError("quadrature order must be in [1, 128]")
    nodes, weights = special.roots_hermite(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights)


def mvn_sample(
    mean: np.ndarray,
    chol_cov: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``count`` samples of N(mean, L L^T) given the lower factor L.

    Deterministic for a fixed generator state; returns shape (count, dim).
    """
    mean = np.asarray(mean, dtype=float)
    chol_cov = np.asarray(chol_cov, dtype=float)
    dim = mean.shape[0]
    if chol_cov.shape != (dim, dim):
        raise ValueError("chol_cov shape does not match mean")
    if count == 0:
        return np.empty((0, dim))
    z = rng.standard_normal((count, dim))
    return mean + z @ chol_cov.T
