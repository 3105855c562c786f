import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import analytic_double_well_masses
from ergodp.errors import StepTooLarge
from ergodp.expr import parse_expr
from ergodp.grid import build_grid
from ergodp.model import load_example
from ergodp.operators import (
    apply_step, assemble_generator, build_discrete_system, discretize_time,
    positivity_safe_step,
)


def _colsums(mat):
    return np.asarray(mat.sum(axis=0)).ravel()


def _closed_loop_generator(A_c, B_c, u):
    L = A_c.copy()
    m = A_c.shape[0]
    for j, bc in enumerate(B_c):
        up = sp.diags(np.maximum(np.full(m, u[j]), 0.0))
        um = sp.diags(np.maximum(np.full(m, -u[j]), 0.0))
        L = L + bc.plus @ up + bc.minus @ um
    return L


def test_pure_diffusion_is_noflux_laplacian():
    spec = load_example("double_well_1d")
    spec.f = (parse_expr("0"),)
    g = build_grid([0.0], [1.0], [3])
    spec.x_lower = np.array([0.0])
    spec.x_upper = np.array([1.0])
    A_c, _ = assemble_generator(spec, g)
    s = spec.epsilon / 0.5**2  # eps / h^2
    # no-flux Laplacian in mass coordinates: columns sum to zero and the
    # uniform-density mass vector (the quadrature weights) is stationary
    expected = s * np.array([
        [-2.0, 1.0, 0.0],
        [2.0, -2.0, 2.0],
        [0.0, 1.0, -2.0],
    ])
    np.testing.assert_allclose(A_c.toarray(), expected)
    np.testing.assert_allclose(_colsums(A_c), 0.0, atol=1e-13)
    np.testing.assert_allclose(A_c @ g.weights, 0.0, atol=1e-13)


@pytest.mark.parametrize("flux", ["upwind", "sg"])
def test_case_study_column_sums_vanish(flux):
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [40, 40])
    A_c, B_c = assemble_generator(spec, g, flux=flux)
    np.testing.assert_allclose(_colsums(A_c), 0.0, atol=1e-12)
    for bc in B_c:
        np.testing.assert_allclose(_colsums(bc.plus), 0.0, atol=1e-12)
        np.testing.assert_allclose(_colsums(bc.minus), 0.0, atol=1e-12)


@pytest.mark.parametrize("counts", [[25, 25], [10, 10]])
def test_closed_loop_generator_is_metzler_at_box_vertices(counts):
    """The blended control flux never exceeds its monotonicity budget."""
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, counts)
    A_c, B_c = assemble_generator(spec, g, flux="sg")
    for u in (spec.u_lower, spec.u_upper, np.zeros(1)):
        L = _closed_loop_generator(A_c, B_c, u)
        off = (L - sp.diags(L.diagonal())).tocsr()
        assert off.data.min() >= -1e-13
        np.testing.assert_allclose(_colsums(L), 0.0, atol=1e-11)


def test_double_well_generator_residual_first_order():
    """A_c applied to the analytic stationary masses vanishes at first order.

    The residual is measured in density units (mass residual divided by
    the node weight) so it reflects the operator truncation error.
    """
    spec = load_example("double_well_1d")
    res = []
    for m in (101, 201, 401):
        g = build_grid(spec.x_lower, spec.x_upper, [m])
        A_c, _ = assemble_generator(spec, g, flux="upwind")
        p = analytic_double_well_masses(g)
        res.append(np.max(np.abs((A_c @ p) / g.weights)))
    assert res[0] > res[1] > res[2]
    # halving the spacing should roughly halve the residual
    assert res[0] / res[1] == pytest.approx(2.0, rel=0.35)
    assert res[1] / res[2] == pytest.approx(2.0, rel=0.35)


def test_steady_state_refinement_monotone():
    spec = load_example("double_well_1d")
    from ergodp.fpk import steady_state
    errs = []
    for m in (51, 101, 201):
        g = build_grid(spec.x_lower, spec.x_upper, [m])
        sys_ = build_discrete_system(spec, g, h=0.05, flux="upwind", positivity="off")
        ss = steady_state(sys_, np.zeros((g.m, 1)))
        errs.append(np.abs(ss.p - analytic_double_well_masses(g)).sum())
    assert errs[0] > errs[1] > errs[2]


def test_discrete_system_conservation_identities():
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [30, 30])
    sys_ = build_discrete_system(spec, g, h=0.05, positivity="off")
    ones = np.ones(g.m)
    # 1'E^{-1}A = 1' reduces to E'1 = 1 since A = I
    np.testing.assert_allclose(sys_.solve_T(ones), ones, atol=1e-10)
    np.testing.assert_allclose(_colsums(sys_.E), ones, atol=1e-12)
    assert sys_.conservation_residual <= 1e-10
    assert sys_.representation == "mass"


def test_e_is_m_matrix():
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [20, 20])
    sys_ = build_discrete_system(spec, g, h=0.5, positivity="off")
    E = sys_.E.toarray()
    assert np.all(E.diagonal() > 0)
    off = E - np.diag(E.diagonal())
    assert off.max() <= 1e-14
    # M-matrix inverse is nonnegative: check on a few unit vectors
    for i in (0, g.m // 2, g.m - 1):
        e = np.zeros(g.m)
        e[i] = 1.0
        assert sys_.solve(e).min() >= -1e-14


def test_uncontrolled_step_preserves_mass_and_positivity():
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [101])
    sys_ = build_discrete_system(spec, g, h=0.3, positivity="off")
    rng = np.random.default_rng(0)
    p = rng.random(g.m)
    p /= p.sum()
    p_next = apply_step(sys_, p, np.zeros((g.m, 1)))
    assert p_next.sum() == pytest.approx(1.0, abs=1e-10)
    assert p_next.min() >= 0.0


def test_unit_mass_diffusion_spreads_symmetrically():
    spec = load_example("double_well_1d")
    spec.f = (parse_expr("0"),)
    g = build_grid(spec.x_lower, spec.x_upper, [101])
    sys_ = build_discrete_system(spec, g, h=0.01, positivity="off")
    center = g.center_node()
    p = np.zeros(g.m)
    p[center] = 1.0
    p_next = apply_step(sys_, p, np.zeros((g.m, 1)))
    np.testing.assert_allclose(p_next, p_next[::-1], atol=1e-12)
    assert p_next[center] == p_next.max()


def test_step_too_large_reports_admissible_step():
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [40, 40])
    A_c, B_c = assemble_generator(spec, g)
    with pytest.raises(StepTooLarge) as ei:
        discretize_time(A_c, B_c, 0.5, g, spec.u_lower, spec.u_upper, positivity="error")
    assert 0 < ei.value.h_max < 0.5
    # the reported bound itself must construct cleanly
    sys_ = discretize_time(A_c, B_c, 0.9 * ei.value.h_max, g,
                           spec.u_lower, spec.u_upper, positivity="error")
    assert sys_.positivity_h_max >= 0.9 * ei.value.h_max


def test_case_study_published_step_is_constructible():
    """h = 0.05 must build (with a warning, not an error)."""
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [30, 30])
    with pytest.warns(UserWarning, match="drain"):
        sys_ = build_discrete_system(spec, g, h=0.05, positivity="warn")
    assert sys_.h == 0.05


def test_one_step_positivity_on_unit_masses():
    """Below the safe step, point masses stay nonnegative at box vertices."""
    spec = load_example("lqg_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [101])
    h_safe = positivity_safe_step(spec, g, flux="sg", sample=101)
    sys_ = build_discrete_system(spec, g, h=0.9 * h_safe, flux="sg", positivity="off")
    for u_const in (spec.u_lower, spec.u_upper):
        for i in range(0, g.m, 7):
            p = np.zeros(g.m)
            p[i] = 1.0
            v = np.broadcast_to(u_const, (g.m, 1)) * p[:, None]
            p_next = apply_step(sys_, p, v)
            assert p_next.min() >= -1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_random_feasible_steps_conserve_mass(seed):
    spec = load_example("lqg_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [51])
    sys_ = build_discrete_system(spec, g, h=0.005, flux="sg", positivity="off")
    rng = np.random.default_rng(seed)
    p = rng.random(g.m)
    p /= p.sum()
    u = rng.uniform(spec.u_lower, spec.u_upper, size=(g.m, 1))
    p_next = apply_step(sys_, p, u * p[:, None])
    assert abs(p_next.sum() - 1.0) <= 1e-10
    assert p_next.min() >= -1e-12


def test_coordinate_dump_round_trips(tmp_path):
    from ergodp.operators import dump_coordinate_format
    spec = load_example("lqg_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [11])
    sys_ = build_discrete_system(spec, g, h=0.01, positivity="off")
    path = tmp_path / "system.txt"
    dump_coordinate_format(sys_, path)
    E = np.zeros((g.m, g.m))
    for line in path.read_text().splitlines():
        if line.startswith("E "):
            _, r, c, v = line.split()
            E[int(r), int(c)] = float(v)
    np.testing.assert_array_equal(E, sys_.E.toarray())
    tags = {line.split()[0] for line in path.read_text().splitlines()[1:]}
    assert tags == {"E", "A", "B1+", "B1-"}


def test_snapshot_csv_writer(tmp_path):
    from ergodp.fpk import write_snapshots_csv
    g = build_grid([0.0], [1.0], [3])
    snaps = [(0.0, np.array([0.25, 0.5, 0.25])), (1.0, np.array([0.2, 0.6, 0.2]))]
    path = tmp_path / "snaps.csv"
    write_snapshots_csv(path, g, snaps)
    lines = path.read_text().splitlines()
    assert lines[0] == "snapshot,t,node,x1,mass"
    assert len(lines) == 1 + 2 * 3
    assert lines[1] == "0,0.0,0,0.0,0.25"


def test_adjoint_consistency():
    """<E p, y> = <p, E'y> with the stored transpose solve."""
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [41])
    sys_ = build_discrete_system(spec, g, h=0.1, positivity="off")
    rng = np.random.default_rng(2)
    p = rng.standard_normal(g.m)
    y = rng.standard_normal(g.m)
    lhs = (sys_.E @ p) @ y
    rhs = p @ (sys_.E.T @ y)
    assert lhs == pytest.approx(rhs, rel=1e-14)
    # solve_T really inverts the transpose
    np.testing.assert_allclose(sys_.E.T @ sys_.solve_T(y), y, atol=1e-10)
