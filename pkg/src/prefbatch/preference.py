"""Batch preference feedback and its likelihoods.

Feedback about a batch of q points is either the winner (the element whose
noisy evaluation was smallest), a full ranking, or an explicit list of
pairwise outcomes. All indices in feedback structures are 1-based, matching
the wire encoding used by the harness and the session service.

The batch-winner likelihood integrates out the winner's noisy value with
Gauss-Hermite quadrature:

    P(j wins | f) = int N(y | f_j, sigma^2) prod_{i != j} Phi((f_i - y)/sigma) dy

and the general pairwise-list likelihood is estimated by Monte Carlo over
the latent noisy evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .numerics import (
    QuadratureRule,
    gauss_hermite,
    log_std_normal_cdf,
    normal_pdf_cdf_ratio,
)

__all__ = [
    "Feedback",
    "PreferenceRecord",
    "winner_to_pairs",
    "ranking_to_pairs",
    "feedback_to_pairs",
    "loglik_winner",
    "loglik_pairs_mc",
    "ove_bound",
]

DEFAULT_QUAD_ORDER = 32
_SQRT_PI = np.sqrt(np.pi)
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Feedback:
    """One batch's preference outcome. Exactly one variant is populated.

    ``winner`` is a 1-based index; ``ranking`` lists batch indices from
    best (smallest latent value) to worst; ``pairs`` holds rows (a, b)
    meaning element a was preferred over (evaluated below) element b.
    """

    kind: str                      # "winner" | "ranking" | "pairs"
    winner: Optional[int] = None
    ranking: Optional[tuple[int, ...]] = None
    pairs: Optional[np.ndarray] = None

    @staticmethod
    def from_winner(j: int) -> "Feedback":
        if j < 1:
            raise ValueError("winner index is 1-based")
        return Feedback(kind="winner", winner=int(j))

    @staticmethod
    def from_ranking(order) -> "Feedback":
        order = tuple(int(i) for i in order)
        if len(set(order)) != len(order) or min(order) < 1:
            raise ValueError("ranking must be a permutation of 1..q")
        return Feedback(kind="ranking", ranking=order)

    @staticmethod
    def from_pairs(c) -> "Feedback":
        c = np.asarray(c, dtype=int).reshape(-1, 2)
        if c.size and (np.any(c < 1) or np.any(c[:, 0] == c[:, 1])):
            raise ValueError("pairs must hold distinct 1-based indices")
        if _has_cycle(c):
            raise ValueError("preference pairs contain a cycle")
        return Feedback(kind="pairs", pairs=c)

    def to_dict(self) -> dict:
        if self.kind == "winner":
            return {"winner": self.winner}
        if self.kind == "ranking":
            return {"ranking": list(self.ranking)}
        return {"pairs": self.pairs.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Feedback":
        if "winner" in d:
            return Feedback.from_winner(d["winner"])
        if "ranking" in d:
            return Feedback.from_ranking(d["ranking"])
        if "pairs" in d:
            return Feedback.from_pairs(d["pairs"])
        raise ValueError("feedback dict must contain winner, ranking, or pairs")


def _has_cycle(c: np.ndarray) -> bool:
    if c.size == 0:
        return False
    nodes = set(c.ravel().tolist())
    edges: dict[int, list[int]] = {n: [] for n in nodes}
    for a, b in c:
        edges[int(a)].append(int(b))
    state: dict[int, int] = {}

    def visit(n: int) -> bool:
        state[n] = 1
        for m in edges[n]:
            s = state.get(m, 0)
            if s == 1 or (s == 0 and visit(m)):
                return True
        state[n] = 2
        return False

    return any(state.get(n, 0) == 0 and visit(n) for n in nodes)


@dataclass(frozen=True)
class PreferenceRecord:
    """One queried batch: its q locations and the feedback received."""

    x: np.ndarray          # (q, d)
    feedback: Feedback

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        q = x.shape[0]
        if q < 2:
            raise ValueError("a preference batch needs at least two points")
        fb = self.feedback
        if fb.kind == "winner":
            if not 1 <= fb.winner <= q:
                raise ValueError("winner index out of range")
        elif fb.kind == "ranking":
            if sorted(fb.ranking) != list(range(1, q + 1)):
                raise ValueError("ranking must be a permutation of 1..q")
        elif fb.kind == "pairs":
            if fb.pairs.size and fb.pairs.max() > q:
                raise ValueError("pair index out of range")
        else:
            raise ValueError(f"unknown feedback kind {fb.kind!r}")

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]


def winner_to_pairs(j: int, q: int) -> np.ndarray:
    """Pairwise encoding of 'element j beat every other element'."""
    if not 1 <= j <= q:
        raise ValueError("winner index out of range")
    others = [i for i in range(1, q + 1) if i != j]
    return np.array([[j, i] for i in others], dtype=int)


def ranking_to_pairs(order) -> np.ndarray:
    """Adjacent-pair encoding of a full ranking (best first).

    Under a shared latent ordering the q-1 adjacent comparisons define the
    same event as all q(q-1)/2 pairs, with better-conditioned inference.
    """
    order = list(order)
    if sorted(order) != list(range(1, len(order) + 1)):
        raise ValueError("ranking must be a permutation of 1..q")
    return np.array(
        [[order[i], order[i + 1]] for i in range(len(order) - 1)], dtype=int
    )


def feedback_to_pairs(fb: Feedback, q: int) -> np.ndarray:
    """Canonical pairwise-list form of any feedback variant."""
    if fb.kind == "winner":
        return winner_to_pairs(fb.winner, q)
    if fb.kind == "ranking":
        return ranking_to_pairs(fb.ranking)
    return fb.pairs


def loglik_winner(
    f: np.ndarray,
    j: int,
    sigma: float,
    rule: QuadratureRule | None = None,
) -> float:
    """Log-probability that element ``j`` (1-based) is the batch winner.

    Quadrature after substituting y = f_j + sqrt(2) sigma t; the product of
    Phi terms is accumulated in log space so decisive batches stay finite.
    """
    f = np.asarray(f, dtype=float)
    val = _winner_loglik_batch(f[None, :], j, sigma, rule)[0]
    return float(val)


def _winner_loglik_batch(
    f: np.ndarray, j: int, sigma: float, rule: QuadratureRule | None = None
) -> np.ndarray:
    """Vectorized winner log-likelihood for rows of ``f`` (shape (S, q))."""
    if rule is None:
        rule = gauss_hermite(DEFAULT_QUAD_ORDER)
    q = f.shape[1]
    if not 1 <= j <= q:
        raise ValueError("winner index out of range")
    if sigma <= 0:
        raise ValueError("comparison noise must be positive")
    idx = j - 1
    others = np.delete(f, idx, axis=1)                       # (S, q-1)
    t = rule.nodes
    # z[s, k, i] = (f_i - f_j - sqrt(2) sigma t_k) / sigma
    z = (
        others[:, None, :] - f[:, idx][:, None, None] - _SQRT2 * sigma * t[None, :, None]
    ) / sigma
    s = log_std_normal_cdf(z).sum(axis=2)                    # (S, K)
    logw = np.log(rule.weights) - np.log(_SQRT_PI)
    return logsumexp(logw[None, :] + s, axis=1)


def _winner_loglik_grad(
    f: np.ndarray, j: int, sigma: float, rule: QuadratureRule | None = None
) -> tuple[float, np.ndarray]:
    """Winner log-likelihood and its exact gradient w.r.t. f."""
    if rule is None:
        rule = gauss_hermite(DEFAULT_QUAD_ORDER)
    f = np.asarray(f, dtype=float)
    q = f.shape[0]
    idx = j - 1
    mask = np.arange(q) != idx
    others = f[mask]
    t = rule.nodes
    z = (others[None, :] - f[idx] - _SQRT2 * sigma * t[:, None]) / sigma  # (K, q-1)
    logphi = log_std_normal_cdf(z)
    a = np.log(rule.weights) - np.log(_SQRT_PI) + logphi.sum(axis=1)      # (K,)
    ll = logsumexp(a)
    p = np.exp(a - ll)                                                    # (K,)
    ratio = normal_pdf_cdf_ratio(z)                                       # dlogPhi/dz
    grad = np.zeros(q)
    grad[mask] = (p[:, None] * ratio).sum(axis=0) / sigma
    grad[idx] = -grad[mask].sum()
    return float(ll), grad


def loglik_pairs_mc(
    f: np.ndarray,
    c: np.ndarray,
    sigma: float,
    nsamples: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo log-probability that all pairwise outcomes in ``c`` hold.

    Draws y ~ N(f, sigma^2 I) and counts joint satisfaction. Returns
    log((hits + 1) / (nsamples + 1)); the pseudo-count keeps the log finite
    at an O(1/n) bias.
    """
    f = np.asarray(f, dtype=float)
    c = np.asarray(c, dtype=int).reshape(-1, 2)
    if c.shape[0] == 0:
        return 0.0
    if nsamples < 1000:
        raise ValueError("need at least 1000 samples for a usable estimate")
    y = f[None, :] + sigma * rng.standard_normal((nsamples, f.shape[0]))
    ok = np.all(y[:, c[:, 0] - 1] <= y[:, c[:, 1] - 1], axis=1)
    hits = int(ok.sum())
    return float(np.log(hits + 1.0) - np.log(nsamples + 1.0))


def _pairs_prob_batch(
    f: np.ndarray,
    c: np.ndarray,
    sigma: float,
    nsamples: int,
    rng: np.random.Generator,
    chunk: int = 256,
) -> np.ndarray:
    """Satisfaction probability of the pair list for each row of ``f``."""
    c = np.asarray(c, dtype=int).reshape(-1, 2)
    s, q = f.shape
    if c.shape[0] == 0:
        return np.ones(s)
    out = np.empty(s)
    for start in range(0, s, chunk):
        block = f[start : start + chunk]
        y = block[:, None, :] + sigma * rng.standard_normal(
            (block.shape[0], nsamples, q)
        )
        ok = np.all(y[:, :, c[:, 0] - 1] <= y[:, :, c[:, 1] - 1], axis=2)
        out[start : start + chunk] = (ok.sum(axis=1) + 1.0) / (nsamples + 1.0)
    return out


def ove_bound(mu: np.ndarray, var: np.ndarray, j: int) -> float:
    """One-vs-each lower bound on the log batch-winner likelihood.

    Treats each comparison against the winner marginally:

        sum_{i != j} log Phi((mu_i - mu_j) / sqrt(var_i + var_j))

    With point masses and var_i = var_j = sigma^2 each term is the exact
    pairwise comparison probability; the product over i is a lower bound
    because it ignores the shared uncertainty of the winner's evaluation.
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variances must be strictly positive")
    q = mu.shape[0]
    idx = j - 1
    mask = np.arange(q) != idx
    z = (mu[mask] - mu[idx]) / np.sqrt(var[mask] + var[idx])
    return float(log_std_normal_cdf(z).sum())
