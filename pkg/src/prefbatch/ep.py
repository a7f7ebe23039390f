"""Expectation propagation with one multivariate-normal site per batch.

Each batch likelihood is replaced by a q-dimensional Gaussian site in
natural parameters. Sites are refined by sweeping over batches: form a
cavity by removing the site from the global Gaussian, estimate the tilted
moments by self-normalized importance sampling with the cavity as
proposal, moment-match, and apply a damped natural-parameter update.

Tilted-moment sampling is carried out in a canonical within-batch order
(input rows sorted lexicographically) so that relabeling points of a
batch permutes the resulting site parameters exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DegenerateWeights, NotPSD
from .gp import GaussianPosterior, KernelParams
from .numerics import chol_psd
from .preference import (
    Feedback,
    PreferenceRecord,
    _pairs_prob_batch,
    _winner_loglik_batch,
    feedback_to_pairs,
)

__all__ = ["EPSite", "EPConfig", "ep_fit", "tilted_moments"]


@dataclass
class EPSite:
    """Natural parameters of one batch's Gaussian site approximation."""

    batch_index: int
    natural_precision: np.ndarray   # (q, q)
    natural_shift: np.ndarray       # (q,)


@dataclass(frozen=True)
class EPConfig:
    max_iters: int = 100
    damping: float = 0.5
    moment_samples: int = 2000
    convergence_tol: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


def tilted_moments(
    cavity_mean: np.ndarray,
    cavity_cov: np.ndarray,
    feedback: Feedback,
    sigma: float,
    nsamples: int,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Normalizer and first two moments of cavity x batch likelihood.

    Importance sampling with the cavity as proposal; the weight is the
    exact batch likelihood at the sampled latents (quadrature for winner
    feedback, satisfaction probability of the noisy evaluations for pair
    lists). Raises :class:`DegenerateWeights` when the effective sample
    size falls below 10.
    """
    cavity_mean = np.asarray(cavity_mean, dtype=float)
    q = cavity_mean.shape[0]
    l = chol_psd(cavity_cov)
    f = cavity_mean + rng.standard_normal((nsamples, q)) @ l.T

    if feedback.kind == "winner":
        w = np.exp(_winner_loglik_batch(f, feedback.winner, sigma))
    else:
        pairs = feedback_to_pairs(feedback, q)
        w = _pairs_prob_batch(f, pairs, sigma, 1000, rng)

    total = float(w.sum())
    if total <= 0:
        raise DegenerateWeights("all importance weights vanished")
    ess = total**2 / float(np.sum(w * w))
    if ess < 10:
        raise DegenerateWeights(f"effective sample size {ess:.1f} < 10")
    z = total / nsamples
    wn = w / total
    mean = wn @ f
    centered = f - mean
    cov = (centered * wn[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    return z, mean, cov


def _global_moments(l_k: np.ndarray, sites: list[EPSite], offsets: list[int]):
    """Global (mean, cov) implied by prior chol ``l_k`` and the sites.

    Sigma = L (I + L^T Q L)^-1 L^T with Q the block-diagonal site
    precision; returns None when the inner matrix is not PD.
    """
    n = l_k.shape[0]
    qmat = np.zeros((n, n))
    shift = np.zeros(n)
    for site, off in zip(sites, offsets):
        qb = site.natural_precision.shape[0]
        qmat[off : off + qb, off : off + qb] = site.natural_precision
        shift[off : off + qb] = site.natural_shift
    inner = np.eye(n) + l_k.T @ qmat @ l_k
    inner = 0.5 * (inner + inner.T)
    try:
        l_inner = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError:
        return None
    half = solve_triangular(l_inner, l_k.T, lower=True)
    cov = half.T @ half
    cov = 0.5 * (cov + cov.T)
    mean = cov @ shift
    return mean, cov


def _canonical_order(x: np.ndarray) -> np.ndarray:
    """Lexicographic order of batch rows (stable under relabeling)."""
    return np.lexsort(x.T[::-1])


def _permute_feedback(fb: Feedback, perm: np.ndarray) -> Feedback:
    """Relabel feedback indices after reordering rows by ``perm``."""
    inv = np.empty(len(perm), dtype=int)
    inv[perm] = np.arange(len(perm))
    if fb.kind == "winner":
        return Feedback.from_winner(int(inv[fb.winner - 1]) + 1)
    if fb.kind == "ranking":
        return Feedback.from_ranking(tuple(int(inv[i - 1]) + 1 for i in fb.ranking))
    return Feedback.from_pairs(inv[fb.pairs - 1] + 1)


def ep_fit(
    k: np.ndarray,
    records: list[PreferenceRecord],
    sigma: float,
    cfg: EPConfig = EPConfig(),
    kernel: KernelParams | None = None,
) -> GaussianPosterior:
    """Fit the per-batch-site EP approximation to the joint posterior.

    ``k`` is the prior covariance over all latents in record order. Failed
    site updates (non-PD cavity, degenerate weights, broken global
    factorization) are skipped for the sweep; non-convergence is reported
    via ``info['converged']``, never raised.
    """
    k = np.asarray(k, dtype=float)
    x_all = (
        np.vstack([r.x for r in records])
        if records
        else np.empty((0, k.shape[0] if k.size else 0))
    )
    n = k.shape[0]
    if records and x_all.shape[0] != n:
        raise ValueError("prior covariance does not match the records")

    if not records:
        return GaussianPosterior(
            train_inputs=x_all,
            mean=np.zeros(n),
            cov=k.copy(),
            kernel=kernel,
            noise_sd=sigma,
            info={"converged": True, "iters": 0},
        )

    l_k = chol_psd(k)
    offsets = np.concatenate([[0], np.cumsum([r.batch_size for r in records])])[:-1]
    sites = [
        EPSite(b, np.zeros((r.batch_size, r.batch_size)), np.zeros(r.batch_size))
        for b, r in enumerate(records)
    ]
    orders = [_canonical_order(r.x) for r in records]
    canon_feedback = [
        _permute_feedback(r.feedback, orders[b]) for b, r in enumerate(records)
    ]

    mean, cov = _global_moments(l_k, sites, list(offsets))
    converged = False
    skipped_total = 0
    iters_run = 0
    for sweep in range(cfg.max_iters):
        iters_run = sweep + 1
        max_delta = 0.0
        for b, rec in enumerate(records):
            qb = rec.batch_size
            off = offsets[b]
            sl = slice(off, off + qb)
            sigma_bb = cov[sl, sl]
            mu_b = mean[sl]
            try:
                l_bb = chol_psd(sigma_bb, jitter0=0.0)
            except NotPSD:
                skipped_total += 1
                continue
            prec_b = cho_solve((l_bb, True), np.eye(qb))
            cav_prec = prec_b - sites[b].natural_precision
            cav_prec = 0.5 * (cav_prec + cav_prec.T)
            try:
                l_cav = np.linalg.cholesky(cav_prec)
            except np.linalg.LinAlgError:
                skipped_total += 1
                continue
            cav_cov = cho_solve((l_cav, True), np.eye(qb))
            cav_shift = prec_b @ mu_b - sites[b].natural_shift
            cav_mean = cav_cov @ cav_shift

            # sample in the canonical row order so relabeled batches see
            # identical random draws
            perm = orders[b]
            rng = np.random.default_rng([cfg.rng_seed, b, sweep])
            moments = None
            samples = cfg.moment_samples
            for attempt in range(2):
                try:
                    moments = tilted_moments(
                        cav_mean[perm],
                        cav_cov[np.ix_(perm, perm)],
                        canon_feedback[b],
                        sigma,
                        samples,
                        rng,
                    )
                    break
                except DegenerateWeights:
                    samples *= 4
            if moments is None:
                skipped_total += 1
                continue
            _, t_mean_c, t_cov_c = moments
            inv = np.empty(qb, dtype=int)
            inv[perm] = np.arange(qb)
            t_mean = t_mean_c[inv]
            t_cov = t_cov_c[np.ix_(inv, inv)]

            try:
                l_t = chol_psd(t_cov, jitter0=0.0)
            except NotPSD:
                skipped_total += 1
                continue
            t_prec = cho_solve((l_t, True), np.eye(qb))
            new_prec = t_prec - cav_prec
            new_shift = t_prec @ t_mean - cav_shift

            old_prec = sites[b].natural_precision.copy()
            old_shift = sites[b].natural_shift.copy()
            upd_prec = old_prec + cfg.damping * (new_prec - old_prec)
            upd_shift = old_shift + cfg.damping * (new_shift - old_shift)
            sites[b].natural_precision = 0.5 * (upd_prec + upd_prec.T)
            sites[b].natural_shift = upd_shift

            refreshed = _global_moments(l_k, sites, list(offsets))
            if refreshed is None:
                sites[b].natural_precision = old_prec
                sites[b].natural_shift = old_shift
                skipped_total += 1
                continue
            mean, cov = refreshed
            delta = max(
                float(np.max(np.abs(upd_prec - old_prec))),
                float(np.max(np.abs(upd_shift - old_shift))),
            )
            max_delta = max(max_delta, delta)
        if max_delta < cfg.convergence_tol:
            converged = True
            break

    return GaussianPosterior(
        train_inputs=x_all,
        mean=mean,
        cov=cov,
        kernel=kernel,
        noise_sd=sigma,
        info={
            "converged": converged,
            "iters": iters_run,
            "skipped_updates": skipped_total,
            "sites": sites,
        },
    )
