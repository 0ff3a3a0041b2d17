import numpy as np
import pytest

from torusdg.mesh import generate_cartesian, generate_perturbed_quad, split_into_triangles
from torusdg.operators import adjoint_grad, adjoint_perp, grad_coupling, l2_project, mass_matrix
from torusdg.solver import (
    Discretization,
    ProbeSchedule,
    SolverState,
    TimeIntegrator,
    compute_dt,
    initial_state,
    make_case_spaces,
    run_case,
    semidiscrete_rhs,
    ssp_rk_step,
)
from torusdg.spaces import Field, SpaceFamily, default_quadrature
from torusdg.systems import FluxFamily, FluxSpec, SystemDef, make_test_case


def test_timeintegrator_defaults():
    for k, (order, cfl) in enumerate([(1, 0.5), (2, 0.33), (3, 0.2)]):
        integ = TimeIntegrator.for_degree(k)
        assert integ.order == order and integ.cfl == cfl
    assert TimeIntegrator.for_degree(2, order=1).order == 1


def test_compute_dt_values():
    mesh = generate_cartesian(10, 10)
    system = SystemDef("wave", c=1.0)
    assert compute_dt(mesh, system, TimeIntegrator.for_degree(0)) == \
        pytest.approx(0.025, abs=1e-15)
    assert compute_dt(mesh, system, TimeIntegrator.for_degree(2)) == \
        pytest.approx(0.01, abs=1e-15)


def test_compute_dt_rejects_zero_speed():
    mesh = generate_cartesian(4, 4)
    system = SystemDef("wave", c=0.0)
    from torusdg.systems import SystemError
    with pytest.raises(SystemError):
        compute_dt(mesh, system, TimeIntegrator.for_degree(0))


def test_run_covers_interval_with_unclipped_last_step():
    mesh = generate_cartesian(10, 10)
    case = make_test_case("wave_stationary", t_final=3.0)
    spaces = make_case_spaces(mesh, 0,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    res = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                   TimeIntegrator.for_degree(0),
                   probes=ProbeSchedule(stride=1000))
    assert res.n_steps == 120            # dt = 0.025, 3.0 / 0.025
    assert res.state.time == pytest.approx(3.0, abs=1e-12)


# -- SSP-RK -------------------------------------------------------------------


def _scalar_state(x):
    mesh = generate_cartesian(2, 2)
    space = __import__("torusdg.spaces", fromlist=["build_space"]).build_space(
        mesh, SpaceFamily.DG_SCALAR, 0)
    coeffs = np.full(space.n_dofs, float(x))
    return SolverState({"u": Field(space, coeffs)}, 0.0)


def test_rk_zero_rhs_keeps_state():
    st = _scalar_state(1.3)
    rhs = lambda s: {"u": np.zeros_like(s.unknowns["u"].coeffs)}
    for order in (1, 2, 3):
        out = ssp_rk_step(order, rhs, st, 0.1)
        assert np.array_equal(out.unknowns["u"].coeffs,
                              st.unknowns["u"].coeffs)
        assert out.time == pytest.approx(0.1)


def test_rk3_decay_step_value():
    # u' = -u, u(0) = 1, dt = 0.1: one RK3 step gives the cubic Taylor
    # truncation 1 - 0.1 + 0.005 - 1/6 * 0.001
    st = _scalar_state(1.0)
    rhs = lambda s: {"u": -s.unknowns["u"].coeffs}
    out = ssp_rk_step(3, rhs, st, 0.1)
    got = out.unknowns["u"].coeffs[0]
    assert got == pytest.approx(1 - 0.1 + 0.005 - 0.001 / 6, abs=1e-15)
    assert abs(got - np.exp(-0.1)) < 5e-6


@pytest.mark.parametrize("order", [1, 2, 3])
def test_rk_order_of_convergence(order):
    rhs = lambda s: {"u": -s.unknowns["u"].coeffs}
    errs = []
    for n in (20, 40):
        st = _scalar_state(1.0)
        dt = 1.0 / n
        for _ in range(n):
            st = ssp_rk_step(order, rhs, st, dt)
        errs.append(abs(st.unknowns["u"].coeffs[0] - np.exp(-1.0)))
    ratio = errs[0] / errs[1]
    assert 2**order * 0.8 < ratio < 2**order * 1.3


# -- residual structure ----------------------------------------------------------


def test_free_stream_preservation():
    mesh = generate_perturbed_quad(5, 5, 0.2, 3)
    spaces = make_case_spaces(mesh, 1,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    system = SystemDef("wave", c=1.0)
    disc = Discretization(system, FluxSpec(FluxFamily.GODUNOV),
                          spaces["vector"], spaces["scalar"], spaces["a"])
    p = l2_project(spaces["scalar"], lambda x, y: np.full_like(x, 0.4))
    u = l2_project(spaces["vector"], lambda x, y: np.stack(
        [np.full_like(x, 1.0), np.full_like(x, -2.0)], axis=-1))
    d = disc.rhs(SolverState({"scalar": p, "vector": u}, 0.0))
    assert np.abs(d["scalar"]).max() < 1e-13
    assert np.abs(d["vector"]).max() < 1e-13


@pytest.mark.parametrize("maker,seed", [
    (lambda: generate_cartesian(6, 6), 0),
    (lambda: generate_perturbed_quad(6, 6, 0.2, 42), 1),
    (lambda: split_into_triangles(generate_perturbed_quad(6, 6, 0.2, 42), 5), 2),
])
def test_rhs_preserves_adjoint_constraints(maker, seed):
    """The residual's vector part has zero adjoint curl (wave) / zero
    adjoint divergence (Maxwell) for any state: the semidiscrete
    conservation mechanism itself."""
    mesh = maker()
    rng = np.random.default_rng(seed)
    k = 1
    for kind, fam, adj in (
            ("wave", SpaceFamily.VECTOR_DIV_OPTIMAL, adjoint_perp),
            ("maxwell", SpaceFamily.VECTOR_CURL_OPTIMAL, adjoint_grad)):
        spaces = make_case_spaces(mesh, k, vector_family=fam, with_cf=False)
        system = SystemDef(kind, c=1.0)
        disc = Discretization(system, FluxSpec(FluxFamily.GODUNOV),
                              spaces["vector"], spaces["scalar"], spaces["a"])
        st = SolverState({
            "scalar": Field(spaces["scalar"],
                            rng.standard_normal(spaces["scalar"].n_dofs)),
            "vector": Field(spaces["vector"],
                            rng.standard_normal(spaces["vector"].n_dofs)),
        }, 0.0)
        d = disc.rhs(st)
        du = Field(spaces["vector"], d["vector"])
        res = mass_matrix(spaces["a"]).norm(adj(du, spaces["a"]).coeffs)
        scale = max(1.0, mass_matrix(spaces["vector"]).norm(d["vector"]))
        assert res < 1e-12 * scale


def test_semidiscrete_rhs_convenience():
    mesh = generate_cartesian(4, 4)
    case = make_test_case("wave_stationary")
    spaces = make_case_spaces(mesh, 0,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    st = initial_state(case, spaces["vector"], spaces["scalar"])
    d = semidiscrete_rhs(case.system, FluxSpec(FluxFamily.GODUNOV), st,
                         a_space=spaces["a"])
    assert set(d) == {"scalar", "vector"}


def test_cell_average_conservation_per_step():
    """Telescoping fluxes on the torus keep the global integral of every
    conserved unknown constant."""
    mesh = generate_perturbed_quad(6, 6, 0.2, 9)
    case = make_test_case("wave_wavetrain")
    spaces = make_case_spaces(mesh, 1,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    disc = Discretization(case.system, FluxSpec(FluxFamily.GODUNOV),
                          spaces["vector"], spaces["scalar"], spaces["a"])
    st = initial_state(case, spaces["vector"], spaces["scalar"])

    one_s = l2_project(spaces["scalar"], lambda x, y: np.ones_like(x)).coeffs
    ex = l2_project(spaces["vector"], lambda x, y: np.stack(
        [np.ones_like(x), np.zeros_like(x)], axis=-1)).coeffs
    ey = l2_project(spaces["vector"], lambda x, y: np.stack(
        [np.zeros_like(x), np.ones_like(x)], axis=-1)).coeffs

    def integrals(s):
        Ms = mass_matrix(spaces["scalar"])
        Mv = mass_matrix(spaces["vector"])
        p = s.unknowns["scalar"].coeffs
        u = s.unknowns["vector"].coeffs
        return np.array([Ms.inner(one_s, p), Mv.inner(ex, u), Mv.inner(ey, u)])

    before = integrals(st)
    dt = compute_dt(mesh, case.system, TimeIntegrator.for_degree(1))
    for _ in range(5):
        st = ssp_rk_step(2, disc.rhs, st, dt)
    after = integrals(st)
    assert np.abs(after - before).max() < 1e-12


# -- full runs ----------------------------------------------------------------------


def test_wave_stationary_drift_and_negative_control():
    mesh = generate_cartesian(10, 10)
    case = make_test_case("wave_stationary", t_final=1.0)
    spaces = make_case_spaces(mesh, 1,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    good = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                    TimeIntegrator.for_degree(1), probes=ProbeSchedule(stride=5))
    assert good.drift.max() <= 1e-11
    bad = run_case(case, mesh, spaces, FluxSpec(FluxFamily.LAX_FRIEDRICH),
                   TimeIntegrator.for_degree(1), probes=ProbeSchedule(stride=5))
    assert bad.drift[-1] >= 1e-3


def test_drift_invariant_across_rk_orders():
    mesh = generate_cartesian(8, 8)
    case = make_test_case("wave_stationary", t_final=0.5)
    spaces = make_case_spaces(mesh, 2,
                              vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                              with_cf=False)
    for order in (1, 2, 3):
        res = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                       TimeIntegrator(order=order, cfl=0.2),
                       probes=ProbeSchedule(stride=10))
        assert res.drift.max() <= 1e-11, f"order {order}"


def test_drift_robust_to_quadrature_order():
    case = make_test_case("wave_stationary", t_final=0.5)
    mesh = generate_perturbed_quad(8, 8, 0.2, 42)
    for bump in (-1, 0, 1):
        quad = default_quadrature(mesh, 1, bump=bump)
        spaces = make_case_spaces(mesh, 1,
                                  vector_family=SpaceFamily.VECTOR_DIV_OPTIMAL,
                                  quad=quad, with_cf=False)
        res = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                       TimeIntegrator.for_degree(1),
                       probes=ProbeSchedule(stride=10))
        assert res.drift.max() <= 1e-11, f"bump {bump}"


def test_induction_divergence_dynamics_a_posteriori():
    """-grad* u follows the continuous-Galerkin advection of the
    divergence: -B^T du/dt = K D for the assembled matrices."""
    mesh = generate_cartesian(8, 8)
    case = make_test_case("induction_rotating_loop")
    k = 1
    spaces = make_case_spaces(mesh, k)
    disc = Discretization(case.system, FluxSpec(FluxFamily.LF_TANGENTIAL),
                          spaces["vector"], None, spaces["a"])
    st = initial_state(case, spaces["vector"], cf_space=spaces["cf"],
                       init="l2")   # L2 init: nonzero divergence
    A, V = spaces["a"], spaces["vector"]
    B = grad_coupling(V, A)
    w = A.geom.weights
    pts = A.geom.eval_points
    b = case.system.b_field(pts[..., 0], pts[..., 1])
    bgrad = np.einsum("cqd,cqid->cqi", b, A.tables["grad"])
    Kc = np.einsum("cq,cqi,cqj->cij", w, bgrad, A.tables["val"])
    K = np.zeros((A.n_dofs, A.n_dofs))
    np.add.at(K, (np.repeat(A.cell_dofs, A.n_loc, axis=1).ravel(),
                  np.tile(A.cell_dofs, (1, A.n_loc)).ravel()), Kc.ravel())
    d = disc.rhs(st)
    D = -adjoint_grad(st.unknowns["vector"], A).coeffs
    lhs = -(B.T @ d["vector"])
    rhs = K @ D
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


def test_induction_stability_discontinuous_loop():
    mesh = split_into_triangles(generate_perturbed_quad(8, 8, 0.2, 42), 42)
    case = make_test_case("induction_discontinuous_loop", t_final=0.5)
    spaces = make_case_spaces(mesh, 1)
    res = run_case(case, mesh, spaces, FluxSpec(FluxFamily.LF_TANGENTIAL),
                   TimeIntegrator.for_degree(1), probes=ProbeSchedule(stride=1))
    assert np.all(res.energy <= 1.0 + 1e-12)
    assert np.all(np.diff(res.energy) <= 1e-12)


def test_run_case_deterministic():
    mesh = generate_perturbed_quad(6, 6, 0.2, 11)
    case = make_test_case("maxwell_stationary", t_final=0.3)
    spaces = make_case_spaces(mesh, 1, with_cf=False)
    r1 = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                  TimeIntegrator.for_degree(1))
    r2 = run_case(case, mesh, spaces, FluxSpec(FluxFamily.GODUNOV),
                  TimeIntegrator.for_degree(1))
    assert np.array_equal(r1.drift, r2.drift)
    assert np.array_equal(r1.state.unknowns["vector"].coeffs,
                          r2.state.unknowns["vector"].coeffs)
