import numpy as np
import pytest

from torusdg.diagnostics import (
    DriftKind,
    constraint_drift,
    convergence_table,
    energy,
    l2_error,
)
from torusdg.mesh import generate_cartesian
from torusdg.operators import l2_project
from torusdg.spaces import Field, SpaceFamily, build_space, default_quadrature


def test_l2_error_zero_field_zero_exact():
    mesh = generate_cartesian(4, 4)
    dg = build_space(mesh, SpaceFamily.DG_SCALAR, 1)
    err = l2_error(dg.zeros(), lambda x, y, t: np.zeros_like(x))
    assert err == 0.0


def test_l2_error_projection_is_optimal():
    mesh = generate_cartesian(8, 8)
    dg = build_space(mesh, SpaceFamily.DG_SCALAR, 1)
    f = lambda x, y, t=0.0: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    best = l2_project(dg, lambda x, y: f(x, y))
    e_best = l2_error(best, f)
    rng = np.random.default_rng(1)
    for _ in range(5):
        noisy = Field(dg, best.coeffs + 1e-3 * rng.standard_normal(dg.n_dofs))
        assert l2_error(noisy, f) > e_best


def test_l2_error_vector_components():
    mesh = generate_cartesian(6, 6)
    vec = build_space(mesh, SpaceFamily.VECTOR_DIV_OPTIMAL, 1)
    exact = lambda x, y, t=0.0: np.stack([np.sin(2 * np.pi * x),
                                          np.zeros_like(y)], axis=-1)
    u = l2_project(vec, lambda x, y: exact(x, y))
    ex = l2_error(u, exact, component=0)
    ey = l2_error(u, exact, component=1)
    full = l2_error(u, exact)
    assert ey <= full and ex <= full
    assert full == pytest.approx(np.hypot(ex, ey), rel=1e-12)


def test_constraint_drift_zero_and_symmetry():
    mesh = generate_cartesian(5, 5)
    quad = default_quadrature(mesh, 1)
    vec = build_space(mesh, SpaceFamily.VECTOR_DIV_OPTIMAL, 1, quad)
    A = build_space(mesh, SpaceFamily.CONTINUOUS_SCALAR, 2, quad)
    rng = np.random.default_rng(0)
    u = Field(vec, rng.standard_normal(vec.n_dofs))
    v = Field(vec, rng.standard_normal(vec.n_dofs))
    assert constraint_drift(u, u, DriftKind.ADJOINT_CURL, A) == 0.0
    d1 = constraint_drift(u, v, DriftKind.ADJOINT_CURL, A)
    d2 = constraint_drift(v, u, DriftKind.ADJOINT_CURL, A)
    assert d1 == pytest.approx(d2, rel=1e-12)
    assert d1 > 0


def test_energy_values():
    mesh = generate_cartesian(4, 4)  # unit torus
    vec = build_space(mesh, SpaceFamily.VECTOR_DIV_OPTIMAL, 0)
    assert energy(vec.zeros()) == 0.0
    const = l2_project(vec, lambda x, y: np.stack(
        [np.ones_like(x), np.zeros_like(y)], axis=-1))
    assert energy(const) == pytest.approx(0.5, abs=1e-13)
    assert energy(2.0 * const) == pytest.approx(2.0, abs=1e-12)


def test_convergence_table_closed_form():
    tab = convergence_table({"u": [1e-2, 2.5e-3]}, [0.1, 0.05])
    assert tab.rates["u"][0] == pytest.approx(2.0, abs=1e-12)
    assert tab.slopes["u"] == pytest.approx(2.0, abs=1e-12)


def test_convergence_table_reference_row():
    # a reference pair of degree-2 errors whose ratio is a known rate
    tab = convergence_table({"e_x": [4.90e-3, 6.08e-4]}, [0.1, 0.05])
    assert tab.rates["e_x"][0] == pytest.approx(3.01, abs=0.005)


def test_convergence_table_input_validation():
    with pytest.raises(ValueError):
        convergence_table({"u": [1.0]}, [0.1])
    with pytest.raises(ValueError):
        convergence_table({"u": [1.0, 2.0]}, [0.05, 0.1])
    with pytest.raises(ValueError):
        convergence_table({"u": [1.0, 2.0, 3.0]}, [0.1, 0.05])


def test_l2_projection_refinement_order():
    # optimal-order decay of the projection error for smooth data
    f = lambda x, y, t=0.0: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    errs, hs = [], []
    for n in (8, 16, 32):
        mesh = generate_cartesian(n, n)
        dg = build_space(mesh, SpaceFamily.DG_SCALAR, 1)
        errs.append(l2_error(l2_project(dg, lambda x, y: f(x, y)), f))
        hs.append(1.0 / n)
    tab = convergence_table({"f": errs}, hs)
    assert tab.slopes["f"] >= 1.5  # at least k + 1/2
