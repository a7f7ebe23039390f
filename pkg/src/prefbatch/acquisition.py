"""Batch acquisition functions and the constrained multi-start optimizer.

Three acquisition values are provided:

* ``qei``     - Monte-Carlo batch expected improvement against the minimum
                of the latent posterior mean (the incumbent proxy).
* ``ts_batch``- batch Thompson sampling: each batch point is the minimizer
                of one posterior function draw.
* ``pqei_mc`` - nested-MC batch expected improvement where the incumbent
                is the random minimum of all previously evaluated noisy
                values, sampled jointly with the candidate batch. The
                closed-form density of that minimum needs very
                high-dimensional normal CDFs, so it is only offered as a
                small-history oracle.

``optimize_acquisition`` maximizes any batch value function by multi-start
bounded local search with numeric gradients, repairing candidate batches
that violate the minimum within-batch distance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .errors import HistoryTooLarge
from .gp import GaussianPosterior, SamplePosterior, cross_cov, predict, prior_cov
from .numerics import chol_psd

__all__ = [
    "AcquisitionSpec",
    "SearchDomain",
    "mu_min",
    "qei",
    "ts_batch",
    "pqei_mc",
    "optimize_acquisition",
    "make_value_fn",
    "enforce_min_dist",
]


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str = "qei"                    # "qei" | "ts" | "pqei_mc"
    mc_samples: int = 5000
    restarts: int = 30
    min_within_batch_dist: float = 0.05
    ts_candidate_grid: int = 100
    numeric_grad_step: float = 1e-5
    ts_refine_steps: int = 20
    ts_nearest: int = 100
    opt_maxiter: int = 40

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.min_within_batch_dist < 0:
            raise ValueError("min_within_batch_dist must be non-negative")


@dataclass(frozen=True)
class SearchDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("domain bounds must satisfy lower < upper elementwise")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @staticmethod
    def unit(dim: int) -> "SearchDomain":
        return SearchDomain(np.zeros(dim), np.ones(dim))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> bool:
        x = np.atleast_2d(x)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )


def mu_min(post) -> float:
    """Minimum of the latent posterior mean over visited points (0 if none)."""
    if post.num_points == 0:
        return 0.0
    if isinstance(post, SamplePosterior):
        return float(post.samples.mean(axis=0).min())
    return float(np.min(post.mean))


class _Predictor:
    """Cached linear-algebra pieces for repeated predictions from one
    posterior within an acquisition-optimization run."""

    def __init__(self, post):
        self.post = post
        self.kernel = post.kernel
        self.noise_sd = post.noise_sd
        self._l_kxx = None
        if post.num_points > 0:
            self._l_kxx = chol_psd(prior_cov(post.train_inputs, post.kernel))

    def latent_moments(self, x: np.ndarray):
        """Gaussian latent predictive; for sample posteriors returns the
        conditional pieces (projection A and residual covariance)."""
        post = self.post
        x = np.atleast_2d(x)
        kss = prior_cov(x, self.kernel)
        if post.num_points == 0:
            return np.zeros(x.shape[0]), kss, None
        ksx = cross_cov(x, post.train_inputs, self.kernel)
        a = cho_solve((self._l_kxx, True), ksx.T).T       # (M, N)
        resid = kss - a @ ksx.T
        resid = 0.5 * (resid + resid.T)
        if isinstance(post, SamplePosterior):
            return None, resid, a
        mean = a @ post.mean
        cov = resid + a @ post.cov @ a.T
        cov = 0.5 * (cov + cov.T)
        return mean, cov, a


def _improvement(mu_inc: np.ndarray | float, y: np.ndarray) -> np.ndarray:
    return np.maximum(mu_inc - y.min(axis=1), 0.0)


def qei(
    post,
    xbatch: np.ndarray,
    spec: AcquisitionSpec,
    rng: np.random.Generator | None = None,
    normals: np.ndarray | None = None,
    draw_idx: np.ndarray | None = None,
    incumbent: float | None = None,
) -> float:
    """MC estimate of E[(mu_min - min_i y_i)_+] under the noisy predictive.

    ``normals`` (and ``draw_idx`` for sample posteriors) carry the common
    random numbers; when omitted they are drawn from ``rng``. ``incumbent``
    overrides the default latent-mean-minimum proxy.
    """
    xbatch = np.atleast_2d(xbatch)
    q = xbatch.shape[0]
    if normals is None:
        if rng is None:
            raise ValueError("provide either rng or normals")
        normals = rng.standard_normal((spec.mc_samples, q))
    pred = _Predictor(post)
    if incumbent is None:
        incumbent = mu_min(post)
    if isinstance(post, SamplePosterior) and post.num_points > 0:
        _, resid, a = pred.latent_moments(xbatch)
        if draw_idx is None:
            if rng is None:
                raise ValueError("provide either rng or draw_idx")
            draw_idx = rng.integers(post.samples.shape[0], size=normals.shape[0])
        means = post.samples[draw_idx] @ a.T
        l = chol_psd(resid + post.noise_sd**2 * np.eye(q))
        y = means + normals @ l.T
    else:
        mean, cov, _ = pred.latent_moments(xbatch)
        l = chol_psd(cov + post.noise_sd**2 * np.eye(q))
        y = mean + normals @ l.T
    return float(np.mean(_improvement(incumbent, y)))


def pqei_mc(
    post,
    xbatch: np.ndarray,
    spec: AcquisitionSpec,
    rng: np.random.Generator | None = None,
    normals: np.ndarray | None = None,
    draw_idx: np.ndarray | None = None,
) -> float:
    """Nested-MC batch EI with a random incumbent.

    Historical noisy values and the candidate batch are drawn jointly from
    the posterior predictive (so their correlations are respected); the
    incumbent of each draw is the minimum of its historical values.
    """
    n_hist = post.num_points
    if n_hist == 0:
        raise ValueError("pq-EI needs at least one visited location")
    if n_hist > 40:
        raise HistoryTooLarge(f"history of {n_hist} noisy values exceeds the guard (40)")
    xbatch = np.atleast_2d(xbatch)
    q = xbatch.shape[0]
    x_all = np.vstack([post.train_inputs, xbatch])
    total = n_hist + q
    if normals is None:
        if rng is None:
            raise ValueError("provide either rng or normals")
        normals = rng.standard_normal((spec.mc_samples, total))
    pred = _Predictor(post)
    if isinstance(post, SamplePosterior):
        _, resid, a = pred.latent_moments(x_all)
        if draw_idx is None:
            if rng is None:
                raise ValueError("provide either rng or draw_idx")
            draw_idx = rng.integers(post.samples.shape[0], size=normals.shape[0])
        means = post.samples[draw_idx] @ a.T
        l = chol_psd(resid + post.noise_sd**2 * np.eye(total))
        y = means + normals @ l.T
    else:
        mean, cov, _ = pred.latent_moments(x_all)
        l = chol_psd(cov + post.noise_sd**2 * np.eye(total))
        y = mean + normals @ l.T
    y_min = y[:, :n_hist].min(axis=1)
    return float(np.mean(np.maximum(y_min - y[:, n_hist:].min(axis=1), 0.0)))


class _PathSample:
    """One lazily evaluated posterior function draw.

    The draw is pinned at the visited inputs (one joint posterior draw, or
    one MCMC draw) plus the candidate grid; further evaluations return the
    GP conditional mean given the nearest pinned values, which keeps
    numeric gradients of the refinement stage noise-free.
    """

    def __init__(self, pred: _Predictor, rng: np.random.Generator, nearest: int):
        self.pred = pred
        self.rng = rng
        self.nearest = nearest
        self.kernel = pred.kernel
        post = pred.post
        if post.num_points == 0:
            self.points = np.empty((0, 0))
            self.values = np.empty(0)
        else:
            self.points = post.train_inputs.copy()
            if isinstance(post, SamplePosterior):
                row = rng.integers(post.samples.shape[0])
                self.values = post.samples[row].copy()
            else:
                l = chol_psd(post.cov)
                self.values = post.mean + l @ rng.standard_normal(post.num_points)

    def pin_joint(self, x: np.ndarray) -> np.ndarray:
        """Draw the path jointly at new points and pin the values."""
        x = np.atleast_2d(x)
        mean, cov = self._conditional(x)
        l = chol_psd(cov)
        vals = mean + l @ self.rng.standard_normal(x.shape[0])
        self._append(x, vals)
        return vals

    def mean_at(self, x: np.ndarray) -> np.ndarray:
        """Conditional mean of the path given its pinned values."""
        mean, _ = self._conditional(np.atleast_2d(x), need_cov=False)
        return mean

    def _append(self, x, vals):
        if self.points.size == 0:
            self.points = x.copy()
            self.values = np.asarray(vals, dtype=float).copy()
        else:
            self.points = np.vstack([self.points, x])
            self.values = np.concatenate([self.values, vals])

    def _conditional(self, x, need_cov=True):
        kss = prior_cov(x, self.kernel)
        if self.points.size == 0:
            return np.zeros(x.shape[0]), kss
        pts, vals = self.points, self.values
        if pts.shape[0] > self.nearest:
            center = x.mean(axis=0)
            d = np.sum((pts - center) ** 2, axis=1)
            idx = np.argpartition(d, self.nearest)[: self.nearest]
            pts, vals = pts[idx], vals[idx]
        kxx = prior_cov(pts, self.kernel)
        ksx = cross_cov(x, pts, self.kernel)
        l = chol_psd(kxx)
        a = cho_solve((l, True), ksx.T).T
        mean = a @ vals
        if not need_cov:
            return mean, None
        cov = kss - a @ ksx.T
        return mean, 0.5 * (cov + cov.T)


def _refine_on_path(path: _PathSample, x0, domain, spec):
    """Local descent of the path interpolant with numeric gradients."""
    x = x0.copy()
    val = float(path.mean_at(x[None, :])[0])
    step = 0.05 * (domain.upper - domain.lower)
    h = spec.numeric_grad_step
    for _ in range(spec.ts_refine_steps):
        grad = np.zeros_like(x)
        for i in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[i] = min(xp[i] + h, domain.upper[i])
            xm[i] = max(xm[i] - h, domain.lower[i])
            fp = float(path.mean_at(xp[None, :])[0])
            fm = float(path.mean_at(xm[None, :])[0])
            grad[i] = (fp - fm) / max(xp[i] - xm[i], 1e-12)
        norm = np.linalg.norm(grad)
        if norm < 1e-12:
            break
        direction = -grad / norm
        improved = False
        trial = step.copy()
        for _ in range(6):
            x_new = domain.clip(x + trial * direction)
            v_new = float(path.mean_at(x_new[None, :])[0])
            if v_new < val:
                x, val = x_new, v_new
                improved = True
                break
            trial *= 0.5
        if not improved:
            step *= 0.5
            if np.all(step < 1e-6):
                break
    return x


def ts_batch(
    post,
    domain: SearchDomain,
    q: int,
    spec: AcquisitionSpec,
    rng: np.random.Generator,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Batch Thompson sampling: q posterior draws, each minimized.

    Minimization seeds each draw on a candidate grid (joint conditional
    draw) and refines locally; conditioning is truncated to the nearest
    ``spec.ts_nearest`` pinned values. The within-batch distance repair is
    applied at the end when the spec requests a positive separation.
    """
    pred = _Predictor(post)
    rows = []
    for _ in range(q):
        path = _PathSample(pred, rng, spec.ts_nearest)
        grid = candidates if candidates is not None else domain.sample(rng, spec.ts_candidate_grid)
        vals = path.pin_joint(grid)
        x = grid[int(np.argmin(vals))].astype(float)
        if spec.ts_refine_steps > 0:
            x = _refine_on_path(path, x, domain, spec)
        rows.append(x)
    batch = np.asarray(rows)
    if spec.min_within_batch_dist > 0:
        batch = enforce_min_dist(batch, domain, spec.min_within_batch_dist, rng)
    return batch


def enforce_min_dist(
    x: np.ndarray,
    domain: SearchDomain,
    min_dist: float,
    rng: np.random.Generator,
    max_rounds: int = 1000,
) -> np.ndarray:
    """Repair a batch so all pairwise distances reach ``min_dist``.

    The closest offending pair is pushed apart symmetrically along its
    difference direction (a random direction for coincident points), with
    box clipping; pathological clusters fall back to resampling a point.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    q = x.shape[0]
    if q < 2 or min_dist <= 0:
        return x
    target = min_dist * (1.0 + 1e-6)
    for round_ in range(max_rounds):
        diffs = x[:, None, :] - x[None, :, :]
        dists = np.sqrt(np.sum(diffs**2, axis=2))
        dists[np.diag_indices(q)] = np.inf
        i, j = np.unravel_index(np.argmin(dists), dists.shape)
        if dists[i, j] >= min_dist:
            return x
        gap = x[i] - x[j]
        norm = np.linalg.norm(gap)
        if norm < 1e-12:
            direction = rng.standard_normal(x.shape[1])
            direction /= np.linalg.norm(direction)
        else:
            direction = gap / norm
        center = 0.5 * (x[i] + x[j])
        x[i] = domain.clip(center + 0.5 * target * direction)
        x[j] = domain.clip(center - 0.5 * target * direction)
        # clipping can collapse the pair onto a face; resample one point
        if np.linalg.norm(x[i] - x[j]) < min_dist and round_ > q * 10:
            x[j] = domain.sample(rng, 1)[0]
    raise RuntimeError("could not satisfy the within-batch distance constraint")


def make_value_fn(post, spec: AcquisitionSpec, rng: np.random.Generator):
    """Deterministic batch value function with frozen common random numbers."""
    if spec.kind == "qei":
        def value(xbatch, _normals={}):
            q = np.atleast_2d(xbatch).shape[0]
            if q not in _normals:
                _normals[q] = rng.standard_normal((spec.mc_samples, q))
                if isinstance(post, SamplePosterior):
                    _normals[(q, "idx")] = rng.integers(
                        post.samples.shape[0], size=spec.mc_samples
                    )
            return qei(
                post, xbatch, spec,
                normals=_normals[q],
                draw_idx=_normals.get((q, "idx")),
            )

        return value
    if spec.kind == "pqei_mc":
        def value(xbatch, _normals={}):
            q = np.atleast_2d(xbatch).shape[0]
            total = post.num_points + q
            if total not in _normals:
                _normals[total] = rng.standard_normal((spec.mc_samples, total))
                if isinstance(post, SamplePosterior):
                    _normals[(total, "idx")] = rng.integers(
                        post.samples.shape[0], size=spec.mc_samples
                    )
            return pqei_mc(
                post, xbatch, spec,
                normals=_normals[total],
                draw_idx=_normals.get((total, "idx")),
            )

        return value
    raise ValueError(f"no value function for acquisition kind {spec.kind!r}")


def optimize_acquisition(
    value_fn,
    domain: SearchDomain,
    q: int,
    spec: AcquisitionSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Maximize a batch value function over the q x d box.

    Multi-start bounded L-BFGS with forward-difference gradients at the
    spec's step; every candidate (including the returned best) is repaired
    to satisfy the within-batch distance constraint.
    """
    d = domain.dim
    bounds = [(domain.lower[i % d], domain.upper[i % d]) for i in range(q * d)]

    def objective(flat):
        return -value_fn(flat.reshape(q, d))

    best_x, best_v = None, -np.inf
    for _ in range(spec.restarts):
        x0 = domain.sample(rng, q)
        if spec.min_within_batch_dist > 0:
            x0 = enforce_min_dist(x0, domain, spec.min_within_batch_dist, rng)
        try:
            res = minimize(
                objective,
                x0.ravel(),
                method="L-BFGS-B",
                bounds=bounds,
                options={"eps": spec.numeric_grad_step, "maxiter": spec.opt_maxiter},
            )
            cand = res.x.reshape(q, d)
        except Exception:
            cand = x0
        if spec.min_within_batch_dist > 0:
            cand = enforce_min_dist(cand, domain, spec.min_within_batch_dist, rng)
        val = value_fn(cand)
        if val > best_v:
            best_x, best_v = cand, val
    return best_x
