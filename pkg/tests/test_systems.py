import math

import numpy as np
import pytest

from torusdg.systems import (
    FluxFamily,
    FluxSpec,
    SystemDef,
    SystemError,
    make_test_case,
    scalar_numerical_flux,
    vector_numerical_flux,
)


def test_flux_consistency_normal():
    spec = FluxSpec(FluxFamily.GODUNOV, lam=1.0)
    flux = vector_numerical_flux(spec, 1.0, 1.0, np.array([0.3, 0.4]),
                                 np.array([0.3, 0.4]), np.array([1.0, 0.0]),
                                 "normal")
    assert flux == pytest.approx([1.0, 0.0], abs=1e-15)


def test_flux_lf_normal_hand_value():
    spec = FluxSpec(FluxFamily.LF_NORMAL, lam=1.0)
    flux = vector_numerical_flux(spec, 1.0, 0.0, np.array([2.0, 3.0]),
                                 np.array([0.0, 1.0]), np.array([1.0, 0.0]),
                                 "normal")
    assert flux == pytest.approx([1.5, 0.0], abs=1e-15)


def test_flux_lf_tangential_hand_value():
    spec = FluxSpec(FluxFamily.LF_TANGENTIAL, lam=1.0)
    flux = vector_numerical_flux(spec, 0.0, 0.0, np.array([2.0, 3.0]),
                                 np.array([0.0, 1.0]), np.array([1.0, 0.0]),
                                 "tangential")
    assert flux == pytest.approx([0.0, 1.0], abs=1e-15)


def test_flux_consistency_random_states():
    rng = np.random.default_rng(0)
    for spec in (FluxSpec(FluxFamily.GODUNOV, 1.0),
                 FluxSpec(FluxFamily.LAX_FRIEDRICH, 2.0),
                 FluxSpec(FluxFamily.LF_NORMAL, 0.5),
                 FluxSpec(FluxFamily.LF_TANGENTIAL, 0.5)):
        g = rng.standard_normal(1000)
        u = rng.standard_normal((1000, 2))
        theta = rng.uniform(0, 2 * np.pi, 1000)
        n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        nperp = np.stack([-n[..., 1], n[..., 0]], axis=-1)
        fn = vector_numerical_flux(spec, g, g, u, u, n, "normal")
        assert np.abs(fn - g[:, None] * n).max() < 1e-14
        ft = vector_numerical_flux(spec, g, g, u, u, n, "tangential")
        assert np.abs(ft - g[:, None] * nperp).max() < 1e-14


def test_flux_diffusion_directions():
    rng = np.random.default_rng(1)
    gl, gr = rng.standard_normal(500), rng.standard_normal(500)
    ul = rng.standard_normal((500, 2))
    ur = rng.standard_normal((500, 2))
    theta = rng.uniform(0, 2 * np.pi, 500)
    n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # normal-diffusion flux stays parallel to n
    spec = FluxSpec(FluxFamily.LF_NORMAL, 1.3)
    f = vector_numerical_flux(spec, gl, gr, ul, ur, n, "normal")
    cross = f[..., 0] * n[..., 1] - f[..., 1] * n[..., 0]
    assert np.abs(cross).max() < 1e-13
    # tangential-diffusion flux of a perp-carrier system stays orthogonal
    spec = FluxSpec(FluxFamily.LF_TANGENTIAL, 1.3)
    f = vector_numerical_flux(spec, gl, gr, ul, ur, n, "tangential")
    assert np.abs((f * n).sum(-1)).max() < 1e-13


def test_flux_rejects_nonunit_normal():
    spec = FluxSpec(FluxFamily.GODUNOV, 1.0)
    with pytest.raises(SystemError):
        vector_numerical_flux(spec, 0, 0, np.zeros(2), np.zeros(2),
                              np.array([1.0, 1.0]), "normal")


def test_scalar_flux_wave_hand_value():
    system = SystemDef("wave", c=1.0)
    spec = FluxSpec(FluxFamily.GODUNOV)
    val = scalar_numerical_flux(system, spec, 1.0, 0.0, np.zeros(2),
                                np.zeros(2), np.array([1.0, 0.0]))
    assert val == pytest.approx(0.5, abs=1e-15)


def test_scalar_flux_equal_traces_is_central():
    system = SystemDef("maxwell", c=2.0)
    spec = FluxSpec(FluxFamily.LAX_FRIEDRICH)
    e = np.array([0.7, -0.2])
    n = np.array([0.0, 1.0])
    val = scalar_numerical_flux(system, spec, 0.3, 0.3, e, e, n)
    nperp = np.array([-1.0, 0.0])
    assert val == pytest.approx(float(e @ nperp), abs=1e-15)


def test_scalar_flux_matches_1d_riemann_solution():
    # Godunov oracle: solve the 1d wave Riemann problem exactly and
    # compare the u.n flux with the stated formula
    c = 1.0
    system = SystemDef("wave", c=c)
    spec = FluxSpec(FluxFamily.GODUNOV)
    rng = np.random.default_rng(3)
    for _ in range(50):
        pl, pr = rng.standard_normal(2)
        ul = rng.standard_normal(2)
        ur = rng.standard_normal(2)
        n = np.array([1.0, 0.0])
        # exact star state of d_t p + d_x un = 0, d_t un + c^2 d_x p = 0:
        # un* = (un_l + un_r)/2 + c/2 (p_l - p_r)
        un_star = 0.5 * (ul[0] + ur[0]) + 0.5 * c * (pl - pr)
        got = scalar_numerical_flux(system, spec, pl, pr, ul, ur, n)
        assert got == pytest.approx(un_star, abs=1e-14)


def test_scalar_flux_rejects_induction():
    system = SystemDef("induction", b_field=lambda x, y: np.stack(
        [np.ones_like(x), np.ones_like(x)], axis=-1))
    with pytest.raises(SystemError):
        scalar_numerical_flux(system, FluxSpec(FluxFamily.GODUNOV), 0, 0,
                              np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


# -- test cases ---------------------------------------------------------------


def test_unknown_case_rejected():
    with pytest.raises(SystemError):
        make_test_case("nonexistent_case")
    with pytest.raises(SystemError):
        make_test_case("maxwell_wavetrain", bogus_param=1.0)


def test_maxwell_wavetrain_frequency():
    case = make_test_case("maxwell_wavetrain")
    assert case.params["omega"] == pytest.approx(2 * math.pi * math.sqrt(2))


def test_maxwell_stationary_is_gradient_field():
    case = make_test_case("maxwell_stationary")
    x, y = np.meshgrid(np.linspace(0.3, 0.7, 21), np.linspace(0.3, 0.7, 21))
    h = 1e-5
    e = case.vector_init(x, y)
    # perp-div via central differences: d_x e_y - d_y e_x = 0
    dey_dx = (case.vector_init(x + h, y)[..., 1]
              - case.vector_init(x - h, y)[..., 1]) / (2 * h)
    dex_dy = (case.vector_init(x, y + h)[..., 0]
              - case.vector_init(x, y - h)[..., 0]) / (2 * h)
    assert np.abs(dey_dx - dex_dy).max() < 1e-6
    assert np.abs(e).max() > 0.1


def test_wave_stationary_is_divergence_free():
    case = make_test_case("wave_stationary")
    x, y = np.meshgrid(np.linspace(0.3, 0.7, 21), np.linspace(0.3, 0.7, 21))
    h = 1e-5
    dux_dx = (case.vector_init(x + h, y)[..., 0]
              - case.vector_init(x - h, y)[..., 0]) / (2 * h)
    duy_dy = (case.vector_init(x, y + h)[..., 1]
              - case.vector_init(x, y - h)[..., 1]) / (2 * h)
    assert np.abs(dux_dx + duy_dy).max() < 1e-6


@pytest.mark.parametrize("name", ["maxwell_wavetrain", "wave_wavetrain"])
def test_wavetrain_satisfies_pde(name):
    """Finite-difference residuals of the exact solutions."""
    case = make_test_case(name)
    c = case.system.c
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 40)
    y = rng.uniform(0, 1, 40)
    t = rng.uniform(0, 1, 40)
    h = 1e-5

    def ddt(f):
        return (f(x, y, t + h) - f(x, y, t - h)) / (2 * h)

    def ddx(f):
        return (f(x + h, y, t) - f(x - h, y, t)) / (2 * h)

    def ddy(f):
        return (f(x, y + h, t) - f(x, y - h, t)) / (2 * h)

    s, v = case.scalar_exact, case.vector_exact
    vx = lambda X, Y, T: v(X, Y, T)[..., 0]
    vy = lambda X, Y, T: v(X, Y, T)[..., 1]
    if name == "wave_wavetrain":
        r1 = ddt(s) + ddx(vx) + ddy(vy)            # d_t p + div u
        r2 = ddt(vx) + c**2 * ddx(s)               # d_t u + c^2 grad p
        r3 = ddt(vy) + c**2 * ddy(s)
    else:
        r1 = ddt(s) + ddx(vy) - ddy(vx)            # d_t b + perpdiv e
        r2 = ddt(vx) - c**2 * ddy(s)               # d_t e + c^2 perpgrad b
        r3 = ddt(vy) + c**2 * ddx(s)
    for r in (r1, r2, r3):
        assert np.abs(r).max() < 1e-6


def test_wavetrain_vortex_addon_is_stationary():
    case = make_test_case("maxwell_wavetrain_plus_vortex")
    base = make_test_case("maxwell_wavetrain")
    x, y = np.meshgrid(np.linspace(0.05, 0.95, 31), np.linspace(0.05, 0.95, 31))
    for t in (0.0, 0.37, 1.0):
        addon = case.vector_exact(x, y, t) - base.vector_exact(x, y, t)
        addon0 = case.vector_exact(x, y, 0.0) - base.vector_exact(x, y, 0.0)
        assert np.abs(addon - addon0).max() < 1e-13
    assert np.abs(addon0).max() > 1.0  # K0 = 100 vortex actually present


def test_rotating_loop_periodicity():
    case = make_test_case("induction_rotating_loop")
    x, y = np.meshgrid(np.linspace(0.3, 0.7, 11), np.linspace(0.55, 0.95, 11))
    u_start = case.vector_exact(x, y, 0.0)
    u_full = case.vector_exact(x, y, 2 * math.pi)
    assert np.abs(u_full - u_start).max() < 1e-12
    assert np.abs(u_start).max() > 0.01


def test_rotating_loop_derives_from_potential():
    case = make_test_case("induction_rotating_loop")
    x, y = np.meshgrid(np.linspace(0.4, 0.6, 17), np.linspace(0.65, 0.85, 17))
    h = 1e-6
    dpdx = (case.potential(x + h, y) - case.potential(x - h, y)) / (2 * h)
    dpdy = (case.potential(x, y + h) - case.potential(x, y - h)) / (2 * h)
    u = case.vector_init(x, y)
    assert np.abs(u[..., 0] - (-dpdy)).max() < 1e-6
    assert np.abs(u[..., 1] - dpdx).max() < 1e-6


def test_rotating_loop_exact_satisfies_induction_pde():
    case = make_test_case("induction_rotating_loop")
    rng = np.random.default_rng(9)
    # sample strictly inside the smooth support of the rotated loop
    t = rng.uniform(0, 1, 30)
    ang = rng.uniform(0, 2 * np.pi, 30)
    rad = rng.uniform(0, 0.08, 30)
    # centre of the loop at time t rotates clockwise around (0.5, 0.5)
    cx = 0.5 + 0.25 * np.sin(-t + np.pi / 2)
    cy = 0.5 + 0.25 * np.cos(-t + np.pi / 2)
    x = cx + rad * np.cos(ang)
    y = cy + rad * np.sin(ang)
    h = 1e-5
    v = case.vector_exact
    b = case.system.b_field

    def comp(f, i):
        return lambda X, Y, T: f(X, Y, T)[..., i]

    g_of = lambda X, Y, T: (b(X, Y)[..., 1] * v(X, Y, T)[..., 0]
                            - b(X, Y)[..., 0] * v(X, Y, T)[..., 1])
    ddt = lambda f: (f(x, y, t + h) - f(x, y, t - h)) / (2 * h)
    ddx = lambda f: (f(x + h, y, t) - f(x - h, y, t)) / (2 * h)
    ddy = lambda f: (f(x, y + h, t) - f(x, y - h, t)) / (2 * h)
    div_u = ddx(comp(v, 0)) + ddy(comp(v, 1))
    rx = ddt(comp(v, 0)) - ddy(g_of) + b(x, y)[..., 0] * div_u
    ry = ddt(comp(v, 1)) + ddx(g_of) + b(x, y)[..., 1] * div_u
    assert np.abs(rx).max() < 1e-5
    assert np.abs(ry).max() < 1e-5


def test_discontinuous_loop_setup():
    case = make_test_case("induction_discontinuous_loop")
    assert case.t_final == 2.0
    x = np.array([0.5, 0.5 + 0.29, 0.95])
    y = np.array([0.5, 0.5, 0.5])
    u = case.vector_init(x, y)
    assert np.abs(u[0]).max() < 1e-15          # centre: zero velocity
    assert abs(u[1][1] - 0.01 * 0.29 / 0.3) < 1e-15
    assert np.abs(u[2]).max() == 0.0           # outside the loop
    lam = case.system.lambda_max(np.zeros((3, 2)))
    assert lam == pytest.approx(math.sqrt(2.0))


def test_discontinuous_loop_potential_consistency():
    case = make_test_case("induction_discontinuous_loop")
    x, y = np.meshgrid(np.linspace(0.35, 0.65, 19), np.linspace(0.35, 0.65, 19))
    h = 1e-6
    dpdx = (case.potential(x + h, y) - case.potential(x - h, y)) / (2 * h)
    dpdy = (case.potential(x, y + h) - case.potential(x, y - h)) / (2 * h)
    u = case.vector_init(x, y)
    inside = ((x - 0.5) ** 2 + (y - 0.5) ** 2) < (0.28 * 0.3 / 0.3) ** 2
    assert np.abs((u[..., 0] - (-dpdy))[inside]).max() < 1e-6
    assert np.abs((u[..., 1] - dpdx)[inside]).max() < 1e-6


def test_discontinuous_loop_exact_satisfies_pde_inside():
    case = make_test_case("induction_discontinuous_loop")
    rng = np.random.default_rng(13)
    # points whose backward path stays inside the smooth loop interior
    t = rng.uniform(0, 0.02, 30)
    ang = rng.uniform(0, 2 * np.pi, 30)
    rad = rng.uniform(0, 0.2, 30)
    x = 0.5 + rad * np.cos(ang) - t
    y = 0.5 + rad * np.sin(ang) - t
    h = 1e-6
    v = case.vector_exact
    b = case.system.b_field
    comp = lambda f, i: (lambda X, Y, T: f(X, Y, T)[..., i])
    g_of = lambda X, Y, T: (b(X, Y)[..., 1] * v(X, Y, T)[..., 0]
                            - b(X, Y)[..., 0] * v(X, Y, T)[..., 1])
    ddt = lambda f: (f(x, y, t + h) - f(x, y, t - h)) / (2 * h)
    ddx = lambda f: (f(x + h, y, t) - f(x - h, y, t)) / (2 * h)
    ddy = lambda f: (f(x, y + h, t) - f(x, y - h, t)) / (2 * h)
    div_u = ddx(comp(v, 0)) + ddy(comp(v, 1))
    rx = ddt(comp(v, 0)) - ddy(g_of) + b(x, y)[..., 0] * div_u
    ry = ddt(comp(v, 1)) + ddx(g_of) + b(x, y)[..., 1] * div_u
    assert np.abs(rx).max() < 1e-8
    assert np.abs(ry).max() < 1e-8
