"""Hamiltonian Monte Carlo over the latent values, used as ground truth.

The latent vector is whitened (f = L eta with L the prior Cholesky factor)
so the prior contributes a standard-normal term and ill-conditioned prior
covariances stay harmless. Step sizes adapt per chain during warmup by
dual averaging toward a target acceptance rate; trajectory length is a
fixed number of leapfrog steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import KernelParams, SamplePosterior
from .numerics import chol_psd
from .preference import PreferenceRecord, _winner_loglik_grad

__all__ = ["HMCConfig", "log_target", "hmc_sample", "split_rhat"]


@dataclass(frozen=True)
class HMCConfig:
    chains: int = 6
    samples_per_chain: int = 1500
    warmup: int = 1000
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    rng_seed: int = 0


def log_target(
    eta: np.ndarray,
    chol_k: np.ndarray,
    records: list[PreferenceRecord],
    sigma: float,
) -> tuple[float, np.ndarray]:
    """Whitened log posterior density and its gradient.

    value = -||eta||^2 / 2 + sum_b log P(winner_b | f^b), f = chol_k @ eta.
    The likelihood gradient flows exactly through the quadrature nodes.
    """
    eta = np.asarray(eta, dtype=float)
    f = chol_k @ eta
    value = -0.5 * float(eta @ eta)
    grad_f = np.zeros_like(f)
    off = 0
    for rec in records:
        if rec.feedback.kind != "winner":
            raise ValueError("HMC ground truth supports winner feedback only")
        qb = rec.batch_size
        ll, g = _winner_loglik_grad(f[off : off + qb], rec.feedback.winner, sigma)
        value += ll
        grad_f[off : off + qb] = g
        off += qb
    grad = -eta + chol_k.T @ grad_f
    return value, grad


def _leapfrog(eta, p, eps, steps, grad_fn):
    grad = grad_fn(eta)
    for _ in range(steps):
        p = p + 0.5 * eps * grad
        eta = eta + eps * p
        grad = grad_fn(eta)
        p = p + 0.5 * eps * grad
    return eta, p


def _find_initial_step(eta, logp_fn, rng):
    """Double/halve one-step size until the acceptance crosses 0.5."""
    eps = 1.0
    n = eta.shape[0]
    p = rng.standard_normal(n)

    def joint(e, mom):
        v, _ = logp_fn(e)
        return v - 0.5 * float(mom @ mom)

    def one_step(e):
        def grad_only(x):
            return logp_fn(x)[1]

        return _leapfrog(e, p.copy(), eps, 1, grad_only)

    h0 = joint(eta, p)
    e1, p1 = one_step(eta)
    h1 = joint(e1, p1)
    if not np.isfinite(h1):
        h1 = -np.inf
    direction = 1.0 if (h1 - h0) > np.log(0.5) else -1.0
    for _ in range(50):
        eps = eps * (2.0**direction)
        e1, p1 = one_step(eta)
        h1 = joint(e1, p1)
        if not np.isfinite(h1):
            h1 = -np.inf
        if direction * (h1 - h0) <= direction * np.log(0.5):
            break
    return eps


def split_rhat(samples: np.ndarray) -> np.ndarray:
    """Split R-hat per coordinate for draws of shape (chains, iters, dim)."""
    c, n, d = samples.shape
    half = n // 2
    seqs = np.concatenate([samples[:, :half, :], samples[:, half : 2 * half, :]], axis=0)
    m, length = seqs.shape[0], seqs.shape[1]
    means = seqs.mean(axis=1)                      # (m, d)
    variances = seqs.var(axis=1, ddof=1)           # (m, d)
    w = variances.mean(axis=0)
    b = length * means.var(axis=0, ddof=1)
    var_plus = (length - 1) / length * w + b / length
    return np.sqrt(var_plus / w)


def hmc_sample(
    k: np.ndarray,
    records: list[PreferenceRecord],
    sigma: float,
    cfg: HMCConfig = HMCConfig(),
    kernel: KernelParams | None = None,
) -> SamplePosterior:
    """Posterior draws of the latent values at all visited inputs.

    Chains are independent, each with its own seeded stream; divergent
    transitions are counted in ``info`` rather than dropped silently.
    """
    k = np.asarray(k, dtype=float)
    x_all = np.vstack([r.x for r in records]) if records else np.empty((0, 0))
    n = k.shape[0]
    if records and x_all.shape[0] != n:
        raise ValueError("prior covariance does not match the records")
    l_k = chol_psd(k)

    # dual averaging constants (standard choices)
    gamma, t0, kappa = 0.05, 10.0, 0.75

    def logp_fn(eta):
        return log_target(eta, l_k, records, sigma)

    def grad_only(eta):
        return logp_fn(eta)[1]

    chain_draws = np.empty((cfg.chains, cfg.samples_per_chain, n))
    divergences = 0
    accepts = 0
    total_post_warmup = 0
    step_sizes = []
    for c in range(cfg.chains):
        rng = np.random.default_rng([cfg.rng_seed, c])
        eta = rng.standard_normal(n)
        value, _ = logp_fn(eta)
        eps = _find_initial_step(eta, logp_fn, rng)
        mu = np.log(10.0 * eps)
        log_eps_bar, h_bar = 0.0, 0.0
        kept = 0
        it = 0
        while kept < cfg.samples_per_chain:
            it += 1
            warming = it <= cfg.warmup
            p0 = rng.standard_normal(n)
            h0 = value - 0.5 * float(p0 @ p0)
            eta_new, p_new = _leapfrog(eta, p0, eps, cfg.leapfrog_steps, grad_only)
            v_new, _ = logp_fn(eta_new)
            h_new = v_new - 0.5 * float(p_new @ p_new)
            delta = h_new - h0
            if not np.isfinite(delta) or delta < -1000.0:
                divergences += 1
                accept_prob = 0.0
            else:
                accept_prob = min(1.0, float(np.exp(min(delta, 0.0))))
            if rng.uniform() < accept_prob:
                eta, value = eta_new, v_new
            if warming:
                m = it
                h_bar = (1 - 1 / (m + t0)) * h_bar + (
                    cfg.target_accept - accept_prob
                ) / (m + t0)
                log_eps = mu - np.sqrt(m) / gamma * h_bar
                eta_pow = m**-kappa
                log_eps_bar = eta_pow * log_eps + (1 - eta_pow) * log_eps_bar
                eps = float(np.exp(log_eps))
                if it == cfg.warmup:
                    eps = float(np.exp(log_eps_bar))
            else:
                chain_draws[c, kept] = l_k @ eta
                kept += 1
                total_post_warmup += 1
                accepts += accept_prob
        step_sizes.append(eps)

    rhat = split_rhat(chain_draws) if cfg.samples_per_chain >= 4 else np.full(n, np.nan)
    samples = chain_draws.reshape(cfg.chains * cfg.samples_per_chain, n)
    return SamplePosterior(
        train_inputs=x_all,
        samples=samples,
        kernel=kernel,
        noise_sd=sigma,
        info={
            "divergences": divergences,
            "accept_rate": accepts / max(total_post_warmup, 1),
            "rhat": rhat,
            "step_sizes": step_sizes,
        },
    )
