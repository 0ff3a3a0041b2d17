"""Semidiscrete DG residuals and SSP Runge-Kutta time stepping.

The residual assembly is fully vectorized: per-cell tables contract
against coefficient arrays, side fluxes are evaluated for all sides at
once, and side contributions are gathered back per cell (every cell of a
torus mesh owns exactly as many sides as it has edges).

The induction residual performs one global CG solve per evaluation (for
the adjoint divergence) and adds the volume coupling term; stage values
are never reused across Runge-Kutta stages.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diagnostics import DriftKind, constraint_drift, energy, l2_error
from .operators import (
    adjoint_grad,
    divfree_init,
    grad_coupling,
    l2_project,
    mass_matrix,
)
from .spaces import Field, SpaceError, SpaceFamily, VectorDGSpace
from .systems import (
    SystemError,
    scalar_numerical_flux,
    vector_numerical_flux,
)

CFL_TABLE = {0: 0.5, 1: 0.33, 2: 0.2}


class SolverAbort(RuntimeError):
    """Non-finite state detected; carries the offending step index."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TimeIntegrator:
    """SSP Runge-Kutta order (1..3) and CFL number."""

    order: int
    cfl: float

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise SystemError(f"SSP-RK order must be 1..3, got {self.order}")

    @classmethod
    def for_degree(cls, k, order=None, cfl=None):
        """Standard defaults: order k+1 and CFL 0.5 / 0.33 / 0.2."""
        return cls(order=order if order is not None else k + 1,
                   cfl=cfl if cfl is not None else CFL_TABLE[k])


@dataclass
class SolverState:
    unknowns: dict                 # name -> Field
    time: float = 0.0

    def copy(self):
        return SolverState({k: f.copy() for k, f in self.unknowns.items()},
                           self.time)


def _lincomb(parts, time):
    """Linear combination of solver states: parts = [(a, state), ...]."""
    names = parts[0][1].unknowns.keys()
    out = {}
    for name in names:
        space = parts[0][1].unknowns[name].space
        acc = sum(a * s.unknowns[name].coeffs for a, s in parts)
        out[name] = Field(space, acc)
    return SolverState(out, time)


class Discretization:
    """Binds one system, one flux and the spaces carrying its unknowns."""

    def __init__(self, system, spec, vector_space, scalar_space=None,
                 a_space=None):
        self.system = system
        self.spec = spec
        self.vec = vector_space
        self.scal = scalar_space
        self.a_space = a_space
        if not isinstance(vector_space, VectorDGSpace):
            raise SpaceError("vector unknown needs a vector DG space")
        if system.has_scalar and scalar_space is None:
            raise SpaceError(f"{system.kind} system needs a scalar space")
        if system.kind == "induction" and a_space is None:
            raise SpaceError("induction system needs the continuous space "
                             "for the adjoint-divergence coupling")
        for other in (scalar_space, a_space):
            if other is not None:
                if other.mesh is not vector_space.mesh:
                    raise SpaceError("all spaces must share one mesh")
                if other.quad is not vector_space.quad:
                    raise SpaceError("all spaces must share one quadrature "
                                     "configuration")
        mesh = vector_space.mesh
        self.mesh = mesh
        # per-cell side gather maps: every cell has exactly n_edges sides
        ne = len(mesh.cells[0])
        self.cell_sides = np.empty((mesh.n_cells, ne), dtype=int)
        self.cell_isleft = np.empty((mesh.n_cells, ne), dtype=bool)
        for c, entries in enumerate(mesh.cell_to_sides):
            if len(entries) != ne:
                raise SpaceError(f"cell {c} has {len(entries)} sides")
            for j, (si, orient) in enumerate(entries):
                self.cell_sides[c, j] = si
                self.cell_isleft[c, j] = orient > 0
        sg = vector_space.side_geom
        self.normals = sg.normals[:, None, :]
        self.side_w = sg.weights
        self.vol_w = vector_space.geom.weights
        if system.kind == "induction":
            pts = vector_space.geom.eval_points
            x, y = pts[..., 0], pts[..., 1]
            self.b_vol = np.asarray(system.b_field(x, y), dtype=float)
            xs, ys = sg.eval_points[..., 0], sg.eval_points[..., 1]
            self.b_side = np.asarray(system.b_field(xs, ys), dtype=float)
            self.lam_side = np.sqrt((self.b_side**2).sum(-1)).max(axis=1)[:, None]
            self.lambda_max = float(
                max(np.sqrt((self.b_vol**2).sum(-1)).max(),
                    self.lam_side.max()))
        else:
            self.lambda_max = system.c
        mass_matrix(vector_space)
        if scalar_space is not None:
            mass_matrix(scalar_space)
        if a_space is not None:
            mass_matrix(a_space)
            grad_coupling(vector_space, a_space)
        self._prepare_tables()

    def _prepare_tables(self):
        """Reshape the evaluation tables into flat matmul operands (BLAS
        batched matvec is several times faster than generic einsum here)."""

        def flat(v):  # (n, q, l, 2) -> contiguous (n, q*2, l)
            n, q, l, _ = v.shape
            return np.ascontiguousarray(
                v.transpose(0, 1, 3, 2).reshape(n, q * 2, l))

        vec = self.vec
        self._Vv = flat(vec.tables["val"])
        curl_form = self.system.kind != "wave"
        self._Vder = np.ascontiguousarray(
            vec.tables["curl" if curl_form else "div"])
        self._TvL = flat(vec.side_tables["left"])
        self._TvR = flat(vec.side_tables["right"])
        self._Minv_v = mass_matrix(vec).inv_blocks
        if self.scal is not None:
            sc = self.scal
            self._Sv = np.ascontiguousarray(sc.tables["val"])
            g = sc.tables["grad"]
            if curl_form:
                g = np.stack([-g[..., 1], g[..., 0]], axis=-1)
            self._Sg = flat(g)
            self._TsL = np.ascontiguousarray(sc.side_tables["left"])
            self._TsR = np.ascontiguousarray(sc.side_tables["right"])
            self._Minv_s = mass_matrix(sc).inv_blocks
        if self.system.kind == "induction":
            self._Av = np.ascontiguousarray(self.a_space.tables["val"])

    # -- side gather -----------------------------------------------------------

    def _accumulate_sides(self, contrib_left, contrib_right):
        """Per-cell sum of +left contributions where the cell is the left
        cell of the side, -right contributions otherwise."""
        cs = self.cell_sides
        pick = np.where(self.cell_isleft[..., None],
                        contrib_left[cs], -contrib_right[cs])
        return pick.sum(axis=1)

    # -- traces ------------------------------------------------------------------

    def _scalar_traces(self, coeffs):
        sp = self.scal
        sg = sp.side_geom
        cl = coeffs[sp.cell_dofs[sg.left]]
        cr = coeffs[sp.cell_dofs[sg.right]]
        tl = np.matmul(self._TsL, cl[:, :, None])[..., 0]
        tr = np.matmul(self._TsR, cr[:, :, None])[..., 0]
        return tl, tr

    def _vector_traces(self, coeffs):
        sp = self.vec
        sg = sp.side_geom
        ns, nqs = self.side_w.shape
        cl = coeffs[sp.cell_dofs[sg.left]]
        cr = coeffs[sp.cell_dofs[sg.right]]
        tl = np.matmul(self._TvL, cl[:, :, None]).reshape(ns, nqs, 2)
        tr = np.matmul(self._TvR, cr[:, :, None]).reshape(ns, nqs, 2)
        return tl, tr

    # -- residuals ----------------------------------------------------------------

    def rhs(self, state):
        """Time derivative of every unknown (dict of coefficient arrays)."""
        if self.system.kind == "wave":
            return self._rhs_wave_maxwell(state, curl_form=False)
        if self.system.kind == "maxwell":
            return self._rhs_wave_maxwell(state, curl_form=True)
        return self._rhs_induction(state)

    def _rhs_wave_maxwell(self, state, curl_form):
        system, spec = self.system, self.spec
        p = state.unknowns["scalar"].coeffs
        u = state.unknowns["vector"].coeffs
        sp_s, sp_v = self.scal, self.vec
        w = self.vol_w
        nc, nq = w.shape
        pc = p[sp_s.cell_dofs]
        uc = u[sp_v.cell_dofs]
        pq = np.matmul(self._Sv, pc[:, :, None])[..., 0]
        uq = np.matmul(self._Vv, uc[:, :, None]).reshape(nc, nq, 2)

        wu = (w[..., None] * uq).reshape(nc, 1, nq * 2)
        r_p = np.matmul(wu, self._Sg)[:, 0, :]

        pl, pr = self._scalar_traces(p)
        ul, ur = self._vector_traces(u)
        sflux = scalar_numerical_flux(system, spec, pl, pr, ul, ur,
                                      self.normals)
        ws_flux = (self.side_w * sflux)[:, None, :]
        cl = np.matmul(ws_flux, self._TsL)[:, 0, :]
        cr = np.matmul(ws_flux, self._TsR)[:, 0, :]
        r_p -= self._accumulate_sides(cl, cr)
        dp = np.matmul(self._Minv_s, r_p[:, :, None])[..., 0]

        wg = (w * (system.c**2 * pq))[:, None, :]
        r_u = np.matmul(wg, self._Vder)[:, 0, :]
        gl, gr = system.c**2 * pl, system.c**2 * pr
        direction = "tangential" if curl_form else "normal"
        vflux = vector_numerical_flux(spec, gl, gr, ul, ur, self.normals,
                                      direction, lam=system.c)
        ns = vflux.shape[0]
        wv = (self.side_w[..., None] * vflux).reshape(ns, 1, -1)
        cl = np.matmul(wv, self._TvL)[:, 0, :]
        cr = np.matmul(wv, self._TvR)[:, 0, :]
        r_u -= self._accumulate_sides(cl, cr)
        du = np.matmul(self._Minv_v, r_u[:, :, None])[..., 0]
        return {"scalar": dp.ravel(), "vector": du.ravel()}

    def _rhs_induction(self, state):
        spec = self.spec
        u = state.unknowns["vector"].coeffs
        sp_v, sp_a = self.vec, self.a_space
        w = self.vol_w
        nc, nq = w.shape
        uc = u[sp_v.cell_dofs]
        uq = np.matmul(self._Vv, uc[:, :, None]).reshape(nc, nq, 2)

        # divergence proxy D = -grad* u, one global CG solve
        d_field = adjoint_grad(Field(sp_v, u), sp_a)
        dc = -d_field.coeffs[sp_a.cell_dofs]
        dq = np.matmul(self._Av, dc[:, :, None])[..., 0]

        # g = b . u^perp = b_y u_x - b_x u_y
        b = self.b_vol
        g_vol = b[..., 1] * uq[..., 0] - b[..., 0] * uq[..., 1]
        r_u = np.matmul((w * g_vol)[:, None, :], self._Vder)[:, 0, :]
        # volume coupling - int (v . b) D
        wbd = (b * (w * dq)[..., None]).reshape(nc, 1, nq * 2)
        r_u -= np.matmul(wbd, self._Vv)[:, 0, :]

        ul, ur = self._vector_traces(u)
        bs = self.b_side
        gl = bs[..., 1] * ul[..., 0] - bs[..., 0] * ul[..., 1]
        gr = bs[..., 1] * ur[..., 0] - bs[..., 0] * ur[..., 1]
        vflux = vector_numerical_flux(spec, gl, gr, ul, ur, self.normals,
                                      "tangential", lam=self.lam_side)
        ns = vflux.shape[0]
        wv = (self.side_w[..., None] * vflux).reshape(ns, 1, -1)
        cl = np.matmul(wv, self._TvL)[:, 0, :]
        cr = np.matmul(wv, self._TvR)[:, 0, :]
        r_u -= self._accumulate_sides(cl, cr)
        du = np.matmul(self._Minv_v, r_u[:, :, None])[..., 0]
        return {"vector": du.ravel()}


def semidiscrete_rhs(system, spec, state, scalar_space=None, a_space=None):
    """One-off residual evaluation; builds and caches the discretization
    on the vector space."""
    vec = state.unknowns["vector"].space
    scal = (state.unknowns["scalar"].space
            if "scalar" in state.unknowns else scalar_space)
    key = ("disc", system.kind, id(spec), id(scal), id(a_space))
    store = getattr(vec, "_op_cache", None)
    if store is None:
        store = vec._op_cache = {}
    if key not in store:
        store[key] = Discretization(system, spec, vec, scal, a_space)
    return store[key].rhs(state)


def compute_dt(mesh, system, integ, points=None):
    """dt = CFL h_min / (2 lambda_max), h_min the square root of the
    smallest cell area.

    The CFL table (0.5 / 0.33 / 0.2) is the classical one-dimensional
    RKDG Courant series; in two dimensions the wave-speed sum over both
    directions costs the extra factor two (measured spectral radii are
    about 2 (2k+1) lambda / h on square cells, and the table then puts
    rho dt right at the RK stability margin)."""
    if points is None:
        corners = np.concatenate([mesh.cell_corners(c)
                                  for c in range(mesh.n_cells)])
        centroids = np.stack([mesh.cell_centroid(c)
                              for c in range(mesh.n_cells)])
        points = mesh.wrap(np.concatenate([corners, centroids]))
    lam = system.lambda_max(points)
    if lam <= 0:
        raise SystemError("zero wave speed")
    return integ.cfl * mesh.h_min() / (2.0 * lam)


def ssp_rk_step(order, rhs, state, dt):
    """One SSP Runge-Kutta step; ``rhs(state)`` returns the derivative
    coefficient arrays keyed like the state unknowns."""

    def euler(s, t_next):
        d = rhs(s)
        out = {}
        for name, f in s.unknowns.items():
            out[name] = Field(f.space, f.coeffs + dt * d[name])
        return SolverState(out, t_next)

    t = state.time
    if order == 1:
        return euler(state, t + dt)
    if order == 2:
        s1 = euler(state, t + dt)
        return _lincomb([(0.5, state), (0.5, euler(s1, t + dt))], t + dt)
    if order == 3:
        s1 = euler(state, t + dt)
        s2 = _lincomb([(0.75, state), (0.25, euler(s1, t + dt / 2))],
                      t + dt / 2)
        return _lincomb([(1.0 / 3.0, state), (2.0 / 3.0, euler(s2, t + dt))],
                        t + dt)
    raise SystemError(f"SSP-RK order must be 1..3, got {order}")


@dataclass
class ProbeSchedule:
    """Diagnostic cadence; drift/energy every `stride` steps."""

    stride: int = 1
    drift: bool = True
    energy: bool = True


@dataclass
class RunResult:
    times: np.ndarray
    drift: np.ndarray
    energy: np.ndarray          # normalized by the initial energy
    errors: dict
    state: SolverState
    n_steps: int
    dt: float
    drift_kind: Optional[DriftKind]
    initial: SolverState = field(repr=False, default=None)


def initial_state(case, vector_space, scalar_space=None, cf_space=None,
                  init="default"):
    """Project the case data; induction cases with a potential use the
    divergence-free initializer unless init='l2' requests plain L2."""
    unknowns = {}
    if case.system.has_scalar:
        if scalar_space is None:
            raise SpaceError("case has a scalar unknown; give a scalar space")
        sc = case.scalar_init
        unknowns["scalar"] = l2_project(scalar_space,
                                        lambda x, y: sc(x, y))
    use_divfree = (init == "divfree" or
                   (init == "default" and case.system.kind == "induction"
                    and case.potential is not None))
    if use_divfree:
        if cf_space is None:
            raise SpaceError("divergence-free init needs the cell-face space")
        if case.potential is None:
            raise SystemError(f"case {case.name} has no potential")
        unknowns["vector"] = divfree_init(case.potential, vector_space,
                                          cf_space)
    else:
        vi = case.vector_init
        unknowns["vector"] = l2_project(vector_space, lambda x, y: vi(x, y))
    return SolverState(unknowns, 0.0)


def run_case(case, mesh, spaces, spec, integ, probes=None, init="default",
             t_final=None):
    """Integrate a benchmark case and record diagnostics.

    ``spaces`` maps: "vector" (required), "scalar" (wave/Maxwell),
    "a" (continuous space for drift and the induction coupling),
    "cf" (cell-face space, for divergence-free initialization).
    """
    probes = probes or ProbeSchedule()
    a_space = spaces.get("a")
    disc = Discretization(case.system, spec, spaces["vector"],
                          spaces.get("scalar"), a_space)
    state = initial_state(case, spaces["vector"], spaces.get("scalar"),
                          spaces.get("cf"), init)
    start = state.copy()
    t_end = case.t_final if t_final is None else float(t_final)
    dt = compute_dt(mesh, case.system, integ,
                    points=spaces["vector"].geom.eval_points)

    kind = (DriftKind.ADJOINT_CURL if case.system.kind == "wave"
            else DriftKind.ADJOINT_DIV)
    u0 = start.unknowns["vector"]
    e0 = energy(u0)
    times, drifts, energies = [], [], []

    def record(s):
        times.append(s.time)
        if probes.drift and a_space is not None:
            drifts.append(constraint_drift(s.unknowns["vector"], u0, kind,
                                           a_space))
        if probes.energy:
            e = energy(s.unknowns["vector"])
            energies.append(e / e0 if e0 > 0 else e)

    record(state)
    step = 0
    t_eps = 1e-12 * max(1.0, abs(t_end))
    while state.time < t_end - t_eps:
        step_dt = min(dt, t_end - state.time)
        state = ssp_rk_step(integ.order, disc.rhs, state, step_dt)
        step += 1
        for name, f in state.unknowns.items():
            if not np.all(np.isfinite(f.coeffs)):
                raise SolverAbort(step, f"unknown {name!r} is not finite")
        if step % probes.stride == 0 or state.time >= t_end - t_eps:
            record(state)

    errors = {}
    if case.vector_exact is not None:
        uf = state.unknowns["vector"]
        errors["vector_x"] = l2_error(uf, case.vector_exact, state.time,
                                      component=0)
        errors["vector_y"] = l2_error(uf, case.vector_exact, state.time,
                                      component=1)
    if case.system.has_scalar and case.scalar_exact is not None:
        errors["scalar"] = l2_error(state.unknowns["scalar"],
                                    case.scalar_exact, state.time)
    return RunResult(
        times=np.asarray(times), drift=np.asarray(drifts),
        energy=np.asarray(energies), errors=errors, state=state,
        n_steps=step, dt=dt, drift_kind=kind, initial=start)


def make_case_spaces(mesh, k, vector_family=SpaceFamily.VECTOR_CURL_OPTIMAL,
                     quad=None, with_cf=True):
    """Consistent space set for one run: one shared quadrature
    configuration across every space."""
    from .spaces import build_space, default_quadrature
    if quad is None:
        quad = default_quadrature(mesh, k)
    spaces = {
        "vector": build_space(mesh, vector_family, k, quad),
        "scalar": build_space(mesh, SpaceFamily.DG_SCALAR, k, quad),
        "a": build_space(mesh, SpaceFamily.CONTINUOUS_SCALAR, k + 1, quad),
    }
    if with_cf:
        spaces["cf"] = build_space(mesh, SpaceFamily.CELL_FACE, k, quad)
    return spaces
