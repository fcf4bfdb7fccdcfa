import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reactmc.exceptions import ValidationError
from reactmc.solver import DEFAULT_ROT_SCALE, SolverConfig, minimize_bounded, sweep_1d


class Recorder:
    """Wraps an objective, records every point and asserts box feasibility."""

    def __init__(self, f, half_widths=None):
        self.f = f
        self.hw = half_widths
        self.points = []

    def __call__(self, d):
        d = np.array(d, dtype=float)
        if self.hw is not None:
            assert np.all(np.abs(d) <= np.asarray(self.hw) + 1e-12), d
        self.points.append(d)
        return self.f(d)


def _nonconvex(d):
    x, y = d[..., 0], d[..., 1]
    return (x - 0.6) ** 2 + 0.5 * (y + 0.9) ** 2 + 0.4 * np.sin(3 * x) * np.cos(2 * y)


# minimize_bounded ---------------------------------------------------------------

def test_quadratic_minimum():
    target = np.array([0.7, -1.3])
    res = minimize_bounded(lambda d: float(np.sum((d - target) ** 2)), [0, 0],
                           SolverConfig(bounds=2.0, tol=0.01))
    assert np.all(np.abs(res.d_hat - target) <= 0.01)
    assert not res.budget_exhausted


def test_start_at_minimizer_returns_start_quickly():
    for dim in (1, 2, 3, 6):
        f = Recorder(lambda d: float(np.sum(d**2)))
        res = minimize_bounded(f, np.zeros(dim), SolverConfig(bounds=2.0, tol=0.01))
        assert np.array_equal(res.d_hat, np.zeros(dim))
        assert res.f_value == 0.0
        assert res.n_evals <= 3 * dim + 3
        assert res.n_evals == len(f.points)


def test_nonconvex_surface_against_grid_oracle():
    axis = np.linspace(-2, 2, 401)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = _nonconvex(np.stack([gx, gy], axis=-1))
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    oracle_min = grid[i, j]
    # largest change of f across one grid cell around the oracle minimum
    patch = grid[max(i - 1, 0): i + 2, max(j - 1, 0): j + 2]
    cell_var = float(patch.max() - patch.min())
    start = np.array([axis[i], axis[j]]) + [0.3, -0.2]  # inside the oracle's basin
    f = Recorder(lambda d: float(_nonconvex(d)), [2.0, 2.0])
    res = minimize_bounded(f, start, SolverConfig(bounds=2.0, tol=0.01))
    assert res.f_value <= oracle_min + cell_var
    assert np.all(np.abs(res.d_hat - [axis[i], axis[j]]) <= 0.02)


def test_fifty_random_quadratics():
    rng = np.random.default_rng(0)
    for trial in range(50):
        dim = int(rng.integers(2, 7))
        A = rng.standard_normal((dim, dim))
        H = A @ A.T + dim * np.eye(dim)
        target = rng.uniform(-1.5, 1.5, dim)
        f = Recorder(lambda d: float((d - target) @ H @ (d - target)), [2.0] * dim)
        res = minimize_bounded(f, np.zeros(dim), SolverConfig(bounds=2.0, tol=0.01, max_evals=2000))
        assert np.all(np.abs(res.d_hat - target) <= 0.01), (trial, res.d_hat - target)


def test_minimum_on_the_boundary_is_feasible():
    f = Recorder(lambda d: float(np.sum((d - [3.0, -5.0]) ** 2)), [2.0, 1.0])
    res = minimize_bounded(f, [0, 0], SolverConfig(bounds=[2.0, 1.0], tol=0.01))
    np.testing.assert_allclose(res.d_hat, [2.0, -1.0], atol=0.01)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9)), st.integers(0, 2**31 - 1))
def test_no_worse_than_start_and_feasible(start, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-3, 3, 2)
    w = rng.uniform(0.5, 4, 2)

    def g(d):
        return float(np.sum(np.abs(np.sin(w * (d - c)))) + 0.1 * np.sum(d**2))

    f = Recorder(g, [2.0, 2.0])
    res = minimize_bounded(f, start, SolverConfig(bounds=2.0, tol=0.01))
    assert res.f_value <= g(np.array(start))
    assert np.all(np.abs(res.d_hat) <= 2.0)
    assert res.f_value == pytest.approx(g(res.d_hat), abs=0)


def test_deterministic():
    cfg = SolverConfig(bounds=2.0, tol=0.01)
    a = minimize_bounded(lambda d: float(_nonconvex(d)), [0.1, 0.1], cfg)
    b = minimize_bounded(lambda d: float(_nonconvex(d)), [0.1, 0.1], cfg)
    assert np.array_equal(a.d_hat, b.d_hat) and a.n_evals == b.n_evals


def test_rotations_enter_solver_scaled():
    cfg = SolverConfig(rotational=(False, True), rot_scale=DEFAULT_ROT_SCALE)
    np.testing.assert_allclose(cfg.unit_scale(2), [1.0, 180 / math.pi])
    doubled = SolverConfig(rotational=(False, True), rot_scale=2 * DEFAULT_ROT_SCALE)
    # same solver-unit tolerance, half the tolerance in radians
    assert cfg.tol / doubled.unit_scale(2)[1] == pytest.approx(0.5 * cfg.tol / cfg.unit_scale(2)[1])


def test_doubling_rot_scale_tightens_rotation_accuracy():
    target = 0.0123  # radians
    errs = []
    for s in (DEFAULT_ROT_SCALE, 2 * DEFAULT_ROT_SCALE):
        cfg = SolverConfig(bounds=[2.0, math.radians(2.0)], tol=0.01, rot_scale=s,
                           rotational=(False, True))
        res = minimize_bounded(lambda d: float(d[0] ** 2 + 1e4 * (d[1] - target) ** 2), [0, 0], cfg)
        err = abs(res.d_hat[1] - target)
        assert err <= cfg.tol / s
        errs.append(err)


def test_budget_exhaustion_returns_best_so_far():
    f = Recorder(lambda d: float(np.sum((d - [0.7, -1.3]) ** 2)))
    res = minimize_bounded(f, [0, 0], SolverConfig(bounds=2.0, tol=1e-6, max_evals=8))
    assert res.budget_exhausted and res.n_evals == 8 == len(f.points)
    vals = [float(np.sum((p - [0.7, -1.3]) ** 2)) for p in f.points]
    assert res.f_value == min(vals)


def test_errors():
    with pytest.raises(ValidationError):
        minimize_bounded(lambda d: math.nan, [0, 0])
    with pytest.raises(ValidationError):
        minimize_bounded(lambda d: 0.0, [3, 0], SolverConfig(bounds=2.0))
    with pytest.raises(ValidationError):
        SolverConfig(tol=0).validate(2)
    with pytest.raises(ValidationError):
        SolverConfig(bounds=0.005, tol=0.01).validate(2)
    with pytest.raises(ValidationError):
        SolverConfig(max_evals=3).validate(2)


# sweep_1d ------------------------------------------------------------------------

def test_sweep_separable_exact_within_one_step():
    target = np.array([0.734, -1.218, 0.4])
    f = lambda d: float(np.sum((d - target) ** 2 * [1, 3, 2]))
    point, value, n = sweep_1d(f, [0, 1, 2], 2.0, 0.01, np.zeros(3))
    assert np.all(np.abs(point - target) <= 0.01)
    assert value == pytest.approx(f(point))
    assert n == 1 + 3 * 400


def test_sweep_zero_half_range_returns_start():
    start = np.array([0.3, -0.2])
    point, value, n = sweep_1d(lambda d: float(np.sum(d**2)), [0, 1], 0.0, 1.0, start)
    assert np.array_equal(point, start) and n == 1


def test_stage1_sweep_configuration():
    # SI first (+-5 mm), then AP and LR (+-2.5 mm), 2 mm spacing
    f = Recorder(lambda d: float(np.sum((d - [1.1, -2.2, 3.7]) ** 2)))
    point, _, n = sweep_1d(f, [2, 1, 0], [2.5, 2.5, 5.0], 2.0, np.zeros(3))
    np.testing.assert_allclose(point, [2.0, -2.0, 4.0])
    si = sorted(p[2] for p in f.points[1:5])
    assert si == [-4.0, -2.0, 2.0, 4.0]
    assert all(p[1] in (-2.0, 2.0) and p[2] == 4.0 for p in f.points[5:7])
    assert all(p[0] in (-2.0, 2.0) for p in f.points[7:9])
    assert n == 1 + 4 + 2 + 2


def test_sweep_rejects_nonpositive_steps():
    with pytest.raises(ValidationError):
        sweep_1d(lambda d: 0.0, [0], 1.0, 0.0, [0.0])
