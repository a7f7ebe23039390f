import numpy as np
import pytest

from prefbatch.errors import OutOfDomain
from prefbatch.objectives import (
    eval_objective,
    get_objective,
    objective_names,
    reference_grid,
    default_kernel,
)


class TestFormulaAnchors:
    def test_cubic_raw_zero_at_origin(self):
        obj = get_objective("cubic1d")
        assert obj.eval_raw(np.array([[0.0]]))[0] == 0.0

    def test_hartmann3_published_minimum(self):
        obj = get_objective("hartmann3")
        # grid-refined minimum vs the standard published value
        assert obj.known_min_raw == pytest.approx(-3.8628, abs=2e-4)
        assert obj.eval_raw(obj.to_native(obj.known_min_unit))[0] == pytest.approx(
            obj.known_min_raw, abs=1e-9
        )

    def test_adjiman_published_minimum(self):
        obj = get_objective("adjiman")
        assert obj.known_min_raw == pytest.approx(-2.02181, abs=1e-5)

    def test_ursem_waves_published_minimum(self):
        obj = get_objective("ursem_waves")
        assert obj.known_min_raw == pytest.approx(-8.5536, abs=1e-4)

    def test_deceptive_published_minimum(self):
        obj = get_objective("deceptive")
        assert obj.known_min_raw == pytest.approx(-1.0, abs=1e-9)


class TestScaling:
    @pytest.mark.slow
    @pytest.mark.parametrize("name", objective_names())
    def test_reference_grid_maps_to_unit_interval(self, name):
        obj = get_objective(name)
        grid = reference_grid(obj.dim)
        vals = np.concatenate(
            [obj.eval_scaled(grid[s : s + 200_000]) for s in range(0, len(grid), 200_000)]
        )
        assert 0.0 <= vals.min() <= 0.005
        assert 0.995 <= vals.max() <= 1.0 + 1e-12

    def test_known_min_scaled_near_zero(self):
        # the refined minimum may undershoot the grid-defined zero slightly
        for name in objective_names():
            obj = get_objective(name)
            assert obj.known_min_scaled <= 1e-6
            assert obj.known_min_scaled >= -0.005

    def test_out_of_domain_raises(self):
        obj = get_objective("cubic1d")
        with pytest.raises(OutOfDomain):
            eval_objective(obj, np.array([1.4]))

    def test_eval_objective_scalar(self):
        obj = get_objective("linear1d")
        assert eval_objective(obj, np.array([0.25])) == pytest.approx(0.25)

    def test_default_kernel_loads(self):
        for name in objective_names():
            kernel, noise = default_kernel(name)
            assert kernel.dim == get_objective(name).dim
            assert noise > 0
