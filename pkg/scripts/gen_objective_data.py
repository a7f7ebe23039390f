"""Regenerate the frozen objective metadata shipped with the package.

For every benchmark this computes, once:
  * output scaling constants = min/max of the raw output over the dense
    unit-box reference grid,
  * a grid-refined minimizer and minimum (L-BFGS-B polish from the best
    grid point),
  * GP hyper-parameters fixed by maximum marginal likelihood on dense
    noise-free scaled observations.

Run from the repository root:  python3 scripts/gen_objective_data.py
"""

import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from prefbatch import objectives  # noqa: E402
from prefbatch.gp import fit_hyperparams_direct  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "prefbatch" / "data" / "objective_scaling.json"


def refine_min(fn, u0, dim):
    def f(u):
        return float(fn(np.clip(u, 0, 1)[None, :])[0])

    res = minimize(f, u0, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
    return np.clip(res.x, 0, 1), float(res.fun)


def main():
    data = {}
    for name in objectives.objective_names():
        raw_fn, lo, hi = objectives._RAW_FUNCS[name]
        dim = len(lo)

        def unit_fn(u):
            return raw_fn(lo + np.atleast_2d(u) * (hi - lo))

        grid = objectives.reference_grid(dim)
        # chunked evaluation keeps peak memory modest for the 1e6-point grids
        vals = np.concatenate(
            [unit_fn(grid[s : s + 200_000]) for s in range(0, grid.shape[0], 200_000)]
        )
        i_min = int(np.argmin(vals))
        scale_lo, scale_hi = float(vals[i_min]), float(vals.max())
        u_min, f_min = refine_min(unit_fn, grid[i_min], dim)

        rng = np.random.default_rng(0)
        x_fit = rng.uniform(size=(600, dim))
        y_fit = (unit_fn(x_fit) - scale_lo) / (scale_hi - scale_lo)
        # noise pinned to the experiments' comparison noise and variance
        # capped at the squared output range: on noise-free data the
        # variance/lengthscale ridge is otherwise unidentifiable and ML-II
        # drifts to implausibly large output scales (the ridge is nearly
        # flat, so the cap costs a few nats out of ~1e3)
        kernel, noise_sd = fit_hyperparams_direct(
            x_fit, y_fit, restarts=3, seed=0, fixed_noise_sd=0.05, max_variance=1.0
        )

        data[name] = {
            "scale_lo": scale_lo,
            "scale_hi": scale_hi,
            "grid_per_dim": objectives.GRID_PER_DIM[dim],
            "min_location_unit": [float(v) for v in u_min],
            "min_value_raw": f_min,
            "gp": {
                "variance": kernel.variance,
                "lengthscales": [float(v) for v in kernel.lengthscales],
                "noise_sd": noise_sd,
            },
        }
        print(
            f"{name:26s} raw range [{scale_lo:.6f}, {scale_hi:.6f}] "
            f"refined min {f_min:.8f} ls {np.round(kernel.lengthscales, 4)}"
        )

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
