"""Squared-exponential GP core: prior assembly, posteriors, prediction,
and the hyper-parameter-fixing utility.

Hyper-parameters are fixed once, before any optimization run, by maximum
marginal likelihood on direct (value) observations; the preference loop
never re-estimates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import DidNotConverge
from .numerics import chol_psd

__all__ = [
    "KernelParams",
    "GaussianPosterior",
    "SamplePosterior",
    "se_kernel",
    "prior_cov",
    "cross_cov",
    "predict",
    "log_marginal_likelihood",
    "fit_hyperparams_direct",
]


@dataclass(frozen=True)
class KernelParams:
    """ARD squared-exponential hyper-parameters.

    ``variance`` is the output scale sigma_f^2; ``lengthscales`` holds one
    strictly positive scale per input dimension. An isotropic kernel is the
    special case of tied lengthscales.
    """

    variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.variance <= 0 or np.any(ls <= 0):
            raise ValueError("kernel hyper-parameters must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


@dataclass
class GaussianPosterior:
    """Joint Gaussian over the latent values at all visited inputs.

    Produced by EP or VI (or constructed directly as the prior). ``info``
    carries non-contractual diagnostics such as convergence flags.
    """

    train_inputs: np.ndarray   # (N, d)
    mean: np.ndarray           # (N,)
    cov: np.ndarray            # (N, N)
    kernel: KernelParams
    noise_sd: float
    info: dict = field(default_factory=dict)

    @property
    def num_points(self) -> int:
        return self.train_inputs.shape[0]


@dataclass
class SamplePosterior:
    """Posterior represented by latent draws (one row per draw)."""

    train_inputs: np.ndarray   # (N, d)
    samples: np.ndarray        # (S, N)
    kernel: KernelParams
    noise_sd: float
    info: dict = field(default_factory=dict)

    @property
    def num_points(self) -> int:
        return self.train_inputs.shape[0]

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample mean and covariance of the latent draws."""
        mu = self.samples.mean(axis=0)
        centered = self.samples - mu
        cov = centered.T @ centered / max(self.samples.shape[0] - 1, 1)
        return mu, cov


def empty_posterior(kernel: KernelParams, noise_sd: float, dim: int) -> GaussianPosterior:
    """Prior-only posterior with no visited inputs."""
    return GaussianPosterior(
        train_inputs=np.empty((0, dim)),
        mean=np.empty(0),
        cov=np.empty((0, 0)),
        kernel=kernel,
        noise_sd=noise_sd,
    )


def se_kernel(x: np.ndarray, x2: np.ndarray, p: KernelParams) -> float:
    """k(x, x') = variance * exp(-1/2 sum_i ((x_i - x'_i) / l_i)^2)."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r = (x - x2) / p.lengthscales
    return float(p.variance * np.exp(-0.5 * np.dot(r, r)))


def _sq_dists(xa: np.ndarray, xb: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = xa / lengthscales
    b = xb / lengthscales
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def prior_cov(x: np.ndarray, p: KernelParams) -> np.ndarray:
    """Prior covariance matrix K with entries k(x_i, x_j)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = p.variance * np.exp(-0.5 * _sq_dists(x, x, p.lengthscales))
    # exact symmetry despite floating-point asymmetry in the distance matrix
    return 0.5 * (k + k.T)


def cross_cov(xa: np.ndarray, xb: np.ndarray, p: KernelParams) -> np.ndarray:
    """Cross-covariance matrix between two input sets."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    return p.variance * np.exp(-0.5 * _sq_dists(xa, xb, p.lengthscales))


def predict(
    post: GaussianPosterior, xstar: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Latent (noise-free) predictive mean and covariance at ``xstar``.

    Conditions the joint GP prior on the Gaussian posterior over training
    latents:

        mean* = Ksx Kxx^-1 mu
        cov*  = Kss - Ksx Kxx^-1 Kxs + Ksx Kxx^-1 Sigma Kxx^-1 Kxs

    Adding ``noise_sd**2 * I`` afterwards gives the observation predictive.
    """
    xstar = np.atleast_2d(np.asarray(xstar, dtype=float))
    kss = prior_cov(xstar, post.kernel)
    if post.num_points == 0:
        return np.zeros(xstar.shape[0]), kss
    kxx = prior_cov(post.train_inputs, post.kernel)
    ksx = cross_cov(xstar, post.train_inputs, post.kernel)
    l = chol_psd(kxx)
    # A = Kxx^-1 Kxs, computed via triangular solves
    a = cho_solve((l, True), ksx.T)
    mean = a.T @ post.mean
    cov = kss - ksx @ a + a.T @ post.cov @ a
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _lml_and_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Negative log marginal likelihood and gradient in log-parameters.

    theta = [log variance, log l_1..log l_d, log noise_sd].
    """
    n, d = x.shape
    variance = np.exp(theta[0])
    ls = np.exp(theta[1 : 1 + d])
    noise = np.exp(theta[-1])

    d2 = _sq_dists(x, x, ls)
    kse = variance * np.exp(-0.5 * d2)
    ky = kse + (noise**2 + 1e-12) * np.eye(n)
    l = chol_psd(ky, jitter0=0.0)
    alpha = cho_solve((l, True), y)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(l))))
        - 0.5 * n * np.log(2.0 * np.pi)
    )

    kinv = cho_solve((l, True), np.eye(n))
    w = np.outer(alpha, alpha) - kinv  # d lml = 1/2 tr(W dK)
    grad = np.empty_like(theta)
    grad[0] = 0.5 * float(np.sum(w * kse))
    xs = x / ls
    for i in range(d):
        diff2 = (xs[:, i][:, None] - xs[:, i][None, :]) ** 2
        grad[1 + i] = 0.5 * float(np.sum(w * (kse * diff2)))
    grad[-1] = 0.5 * float(np.trace(w)) * 2.0 * noise**2
    return -lml, -grad


def log_marginal_likelihood(
    x: np.ndarray, y: np.ndarray, kernel: KernelParams, noise_sd: float
) -> tuple[float, np.ndarray]:
    """Gaussian-regression log marginal likelihood and its gradient.

    The gradient is with respect to the log-parameters
    [log variance, log lengthscales..., log noise_sd].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    theta = np.concatenate(
        [[np.log(kernel.variance)], np.log(kernel.lengthscales), [np.log(noise_sd)]]
    )
    nll, ngrad = _lml_and_grad(theta, x, y)
    return -nll, -ngrad


def fit_hyperparams_direct(
    x: np.ndarray,
    y: np.ndarray,
    restarts: int = 5,
    seed: int = 0,
    maxiter: int = 60,
    fixed_noise_sd: float | None = None,
    max_variance: float = 1e3,
) -> tuple[KernelParams, float]:
    """Fix hyper-parameters by multi-start ML-II on direct observations.

    Returns the best (KernelParams, noise_sd) found over ``restarts``
    L-BFGS-B runs in log-parameter space. ``fixed_noise_sd`` pins the
    noise instead of estimating it; on noise-free data this keeps the
    variance/lengthscale ridge identifiable. ``max_variance`` caps the
    output-scale search (useful when outputs live on a known scale and
    the smooth-function ridge would otherwise inflate the variance).
    Raises :class:`DidNotConverge` if every restart fails.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    if n < 10:
        raise ValueError("need at least 10 observations to fix hyper-parameters")
    rng = np.random.default_rng(seed)
    y_sd = max(float(np.std(y)), 1e-3)
    span = np.maximum(x.max(axis=0) - x.min(axis=0), 1e-3)

    if fixed_noise_sd is not None:
        noise_bounds = (np.log(fixed_noise_sd), np.log(fixed_noise_sd))
    else:
        noise_bounds = (np.log(1e-6), np.log(1e2))
    bounds = (
        [(np.log(1e-6), np.log(max_variance))]
        + [(np.log(1e-3), np.log(1e3))] * d
        + [noise_bounds]
    )

    best = None
    for r in range(restarts):
        if r == 0:
            theta0 = np.concatenate(
                [[np.log(y_sd**2)], np.log(0.2 * span), [np.log(0.1 * y_sd)]]
            )
        else:
            theta0 = np.concatenate(
                [
                    [np.log(y_sd**2) + rng.normal(0, 1)],
                    np.log(span * np.exp(rng.uniform(-3, 0.5, size=d))),
                    [np.log(y_sd * np.exp(rng.uniform(-5, -0.5)))],
                ]
            )
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(
                _lml_and_grad,
                theta0,
                args=(x, y),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": maxiter},
            )
        except Exception:
            continue
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise DidNotConverge("all hyper-parameter restarts failed")
    theta = best.x
    kernel = KernelParams(
        variance=float(np.exp(theta[0])), lengthscales=np.exp(theta[1 : 1 + d])
    )
    return kernel, float(np.exp(theta[-1]))
