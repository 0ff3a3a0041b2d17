"""Mass operators, de-Rham operators and projections.

Every operator here is assembled with the quadrature configuration stored
on its space(s), and adjoints reuse the very same coupling matrices both
ways, so the transpose identities

    <grad* u, f>_A      = <u, grad f>_V
    <(div_D')* f, u>_V  = <f, div_D' u>_C

hold to round-off by construction. The cell-face space carries the graph
inner product; its side mass is diagonal in the shifted Legendre basis.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .spaces import (
    CellFaceSpace,
    ContinuousScalarSpace,
    SpaceError,
    SpaceFamily,
    VectorDGSpace,
    Field,
    build_space,
)


class OperatorError(RuntimeError):
    """Assembly or solve failure (non-SPD block, CG breakdown)."""


@dataclass(frozen=True)
class LinearSolveSpec:
    """Solve strategy for mass systems."""

    method: str = "auto"          # per-block dense Cholesky | conjugate gradient
    rtol: float = 1e-14
    max_iter_factor: float = 10.0  # max iterations = factor * sqrt(n)


def _pcg(A, b, diag, rtol, max_iter):
    """Jacobi-preconditioned conjugate gradient for SPD sparse systems."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise OperatorError(
        f"CG did not reach rtol={rtol} within {max_iter} iterations "
        f"(residual {np.linalg.norm(r) / bnorm:.3e})")


class MassOperator:
    """Mass matrix of a finite element space with solve capability.

    Block spaces (DG scalars/vectors, cell-face) use per-cell dense
    Cholesky-verified blocks; the continuous scalar space assembles a
    global sparse SPD matrix solved by preconditioned CG.
    """

    def __init__(self, space, solve_spec=None):
        self.space = space
        self.spec = solve_spec or LinearSolveSpec()
        if isinstance(space, ContinuousScalarSpace):
            self._init_sparse(space)
            self.kind = "sparse"
        elif isinstance(space, CellFaceSpace):
            self._init_cellface(space)
            self.kind = "cellface"
        else:
            self._init_blocks(space)
            self.kind = "block"

    # -- assembly ------------------------------------------------------------

    @staticmethod
    def _cell_blocks(space):
        w = space.geom.weights
        val = space.tables["val"]
        if val.ndim == 4:       # vector space
            return np.einsum("cq,cqid,cqjd->cij", w, val, val)
        return np.einsum("cq,cqi,cqj->cij", w, val, val)

    @staticmethod
    def _invert_spd(blocks, what):
        if blocks.shape[-1] == 0:
            return blocks.copy()
        try:
            np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            raise OperatorError(f"non-SPD {what} mass block: {exc}")
        return np.linalg.inv(blocks)

    def _init_blocks(self, space):
        self.blocks = self._cell_blocks(space)
        self.inv_blocks = self._invert_spd(self.blocks, space.family.value)

    def _init_cellface(self, space):
        self.blocks = self._cell_blocks(space)
        self.inv_blocks = self._invert_spd(self.blocks, "cell-face cell")
        self.side_diag = space.side_mass_diagonal()

    def _init_sparse(self, space):
        blocks = self._cell_blocks(space)
        dofs = space.cell_dofs
        nl = space.n_loc
        rows = np.repeat(dofs, nl, axis=1).ravel()
        cols = np.tile(dofs, (1, nl)).ravel()
        M = sp.coo_matrix((blocks.ravel(), (rows, cols)),
                          shape=(space.n_dofs, space.n_dofs)).tocsr()
        self.matrix = M
        self.diag = M.diagonal()
        if np.any(self.diag <= 0):
            raise OperatorError("continuous mass diagonal not positive")

    # -- application ----------------------------------------------------------

    def apply(self, x):
        if self.kind == "sparse":
            return self.matrix @ x
        space = self.space
        if self.kind == "cellface":
            out = np.empty_like(x)
            cell = x[:space.n_cell_block].reshape(space.mesh.n_cells, -1)
            out[:space.n_cell_block] = np.einsum(
                "cij,cj->ci", self.blocks, cell).ravel()
            side = x[space.n_cell_block:].reshape(space.mesh.n_sides, -1)
            out[space.n_cell_block:] = (side * self.side_diag).ravel()
            return out
        loc = x.reshape(space.n_cells, space.n_loc)
        return np.einsum("cij,cj->ci", self.blocks, loc).ravel()

    def solve(self, b):
        if self.kind == "sparse":
            n = self.space.n_dofs
            max_iter = int(self.spec.max_iter_factor * np.sqrt(n)) + 20
            return _pcg(self.matrix, b, self.diag, self.spec.rtol, max_iter)
        space = self.space
        if self.kind == "cellface":
            out = np.empty_like(b)
            cell = b[:space.n_cell_block].reshape(space.mesh.n_cells, -1)
            out[:space.n_cell_block] = np.einsum(
                "cij,cj->ci", self.inv_blocks, cell).ravel()
            side = b[space.n_cell_block:].reshape(space.mesh.n_sides, -1)
            out[space.n_cell_block:] = (side / self.side_diag).ravel()
            return out
        loc = b.reshape(space.n_cells, space.n_loc)
        return np.einsum("cij,cj->ci", self.inv_blocks, loc).ravel()

    def inner(self, x, y):
        return float(x @ self.apply(y))

    def norm(self, x):
        return float(np.sqrt(max(self.inner(x, x), 0.0)))


def mass_matrix(space, solve_spec=None):
    cached = getattr(space, "_mass", None)
    if cached is None:
        cached = space._mass = MassOperator(space, solve_spec)
    return cached


# ---------------------------------------------------------------------------
# coupling matrices (assembled once per space pair, reused by the adjoints)
# ---------------------------------------------------------------------------

def _cache(space, key, builder):
    store = getattr(space, "_op_cache", None)
    if store is None:
        store = space._op_cache = {}
    if key not in store:
        store[key] = builder()
    return store[key]


def _check_same_quad(s1, s2):
    if s1.quad is not s2.quad:
        raise SpaceError(
            "spaces must share one quadrature configuration; build them "
            "with the same QuadratureConfig")


def grad_coupling(vec_space, a_space):
    """Sparse matrix B with B[i, j] = <v_i, grad f_j> (shared quadrature)."""
    return _cache(vec_space, ("grad", id(a_space)),
                  lambda: _gradlike_coupling(vec_space, a_space, perp=False))


def perp_coupling(vec_space, a_space):
    """Sparse matrix B with B[i, j] = <v_i, perp-grad f_j>."""
    return _cache(vec_space, ("perp", id(a_space)),
                  lambda: _gradlike_coupling(vec_space, a_space, perp=True))


def _gradlike_coupling(vec_space, a_space, perp):
    _check_same_quad(vec_space, a_space)
    w = vec_space.geom.weights
    vv = vec_space.tables["val"]
    ga = a_space.tables["grad"]
    if perp:
        ga = np.stack([-ga[..., 1], ga[..., 0]], axis=-1)
    blocks = np.einsum("cq,cqid,cqjd->cij", w, vv, ga)
    rows = np.repeat(vec_space.cell_dofs, a_space.n_loc, axis=1).ravel()
    cols = np.tile(a_space.cell_dofs, (1, vec_space.n_loc)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)),
                         shape=(vec_space.n_dofs, a_space.n_dofs)).tocsr()


def _cellface_pairing(vec_space, cf_space, variant):
    """T[i, m] pairing a vector basis v_i against a cell-face basis k_m.

    variant "div":  cell block int k grad.v_i, side block int k (-Jump(v_i).n)
    variant "curl": cell block int k perpdiv v_i, side block int k Jump(v_i^perp).n
    """
    _check_same_quad(vec_space, cf_space)
    mesh = vec_space.mesh
    w = vec_space.geom.weights
    cf_val = cf_space.tables["val"]
    der = vec_space.tables["div" if variant == "div" else "curl"]
    rows_list, cols_list, vals_list = [], [], []

    if cf_space.n_cell_loc:
        cell_blocks = np.einsum("cq,cqm,cqi->cim", w, cf_val, der)
        rows_list.append(np.repeat(vec_space.cell_dofs,
                                   cf_space.n_cell_loc, axis=1).ravel())
        cols_list.append(np.tile(cf_space.cell_dofs,
                                 (1, vec_space.n_loc)).ravel())
        vals_list.append(cell_blocks.ravel())

    sg = vec_space.side_geom
    tl = vec_space.side_tables["left"]
    tr = vec_space.side_tables["right"]
    n = sg.normals[:, None, :]
    if variant == "div":
        # (div_D' u)^S = -Jump(u).n
        sl = -np.einsum("sqid,sqd->sqi", tl, np.broadcast_to(n, tl.shape[:2] + (2,)))
        sr = +np.einsum("sqid,sqd->sqi", tr, np.broadcast_to(n, tr.shape[:2] + (2,)))
    else:
        # (perpdiv_D' u)^S = Jump(u^perp).n = -Jump(u).n^perp
        npr = np.stack([-n[..., 1], n[..., 0]], axis=-1)
        sl = -np.einsum("sqid,sqd->sqi", tl, np.broadcast_to(npr, tl.shape[:2] + (2,)))
        sr = +np.einsum("sqid,sqd->sqi", tr, np.broadcast_to(npr, tr.shape[:2] + (2,)))
    P = cf_space.side_basis                       # (nqs, k+1)
    ws = sg.weights                               # (ns, nqs) includes length
    side_l = np.einsum("sq,sqi,qm->sim", ws, sl, P)
    side_r = np.einsum("sq,sqi,qm->sim", ws, sr, P)
    side_cols = cf_space.all_side_dofs            # (ns, k+1)
    nsl = cf_space.n_side_loc
    for blocks, cells in ((side_l, sg.left), (side_r, sg.right)):
        rows_list.append(np.repeat(vec_space.cell_dofs[cells],
                                   nsl, axis=1).ravel())
        cols_list.append(np.tile(side_cols, (1, vec_space.n_loc)).ravel())
        vals_list.append(blocks.ravel())

    rows = np.concatenate(rows_list)
    cols = np.concatenate(cols_list)
    vals = np.concatenate(vals_list)
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(vec_space.n_dofs, cf_space.n_dofs)).tocsr()


def div_pairing(vec_space, cf_space):
    return _cache(vec_space, ("pair_div", id(cf_space)),
                  lambda: _cellface_pairing(vec_space, cf_space, "div"))


def curl_pairing(vec_space, cf_space):
    return _cache(vec_space, ("pair_curl", id(cf_space)),
                  lambda: _cellface_pairing(vec_space, cf_space, "curl"))


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def _as_xy(points):
    return points[..., 0], points[..., 1]


def l2_project(space, f):
    """L2-orthogonal projection of an analytic function onto a space.

    ``f(x, y)`` returns scalars for scalar spaces and arrays with a
    trailing component axis of size 2 for vector spaces.
    """
    w = space.geom.weights
    x, y = _as_xy(space.geom.eval_points)
    fv = np.asarray(f(x, y), dtype=float)
    val = space.tables["val"]
    if isinstance(space, VectorDGSpace):
        if fv.shape != x.shape + (2,):
            raise SpaceError(f"vector function returned shape {fv.shape}")
        rhs = np.einsum("cq,cqd,cqid->ci", w, fv, val)
    else:
        rhs = np.einsum("cq,cq,cqi->ci", w, fv, val)
    M = mass_matrix(space)
    if isinstance(space, ContinuousScalarSpace):
        glob = np.zeros(space.n_dofs)
        np.add.at(glob, space.cell_dofs.ravel(), rhs.ravel())
        return Field(space, M.solve(glob))
    return Field(space, M.solve(rhs.ravel()))


def cellface_project(cf_space, g):
    """Projection onto the cell-face space: independent per-cell and
    per-side L2 projections of g and of its trace."""
    if not isinstance(cf_space, CellFaceSpace):
        raise SpaceError("cellface_project requires a CELL_FACE space")
    coeffs = np.zeros(cf_space.n_dofs)
    if cf_space.n_cell_loc:
        w = cf_space.geom.weights
        x, y = _as_xy(cf_space.geom.eval_points)
        gv = np.asarray(g(x, y), dtype=float)
        rhs = np.einsum("cq,cq,cqm->cm", w, gv, cf_space.tables["val"])
        M = mass_matrix(cf_space)
        cell = np.einsum("cij,cj->ci", M.inv_blocks, rhs)
        coeffs[:cf_space.n_cell_block] = cell.ravel()
    sg = cf_space.side_geom
    x, y = _as_xy(sg.eval_points)
    gs = np.asarray(g(x, y), dtype=float)              # (ns, nqs)
    P = cf_space.side_basis
    w01 = sg.rule.weights                              # [0,1] weights, sum 1
    moments = np.einsum("q,sq,qm->sm", w01, gs, P)
    factors = 2.0 * np.arange(cf_space.n_side_loc) + 1.0
    coeffs[cf_space.n_cell_block:] = (moments * factors).ravel()
    return Field(cf_space, coeffs)


# ---------------------------------------------------------------------------
# distributional operators and adjoints
# ---------------------------------------------------------------------------

def _expect(space_obj, cls, what):
    if not isinstance(space_obj, cls):
        raise SpaceError(f"{what}: got {type(space_obj).__name__}")


def dist_div(u, cf_space):
    """Distributional divergence: strong divergence per cell plus
    -Jump(u).n per side, represented in the cell-face space."""
    _expect(u.space, VectorDGSpace, "dist_div needs a vector field")
    T = div_pairing(u.space, cf_space)
    return Field(cf_space, mass_matrix(cf_space).solve(T.T @ u.coeffs))


def dist_curl(u, cf_space):
    """Distributional scalar curl: strong curl per cell plus
    +Jump(u^perp).n per side."""
    _expect(u.space, VectorDGSpace, "dist_curl needs a vector field")
    T = curl_pairing(u.space, cf_space)
    return Field(cf_space, mass_matrix(cf_space).solve(T.T @ u.coeffs))


def adjoint_dist_div(f, vec_space):
    """Adjoint of dist_div: <(div)* f, u>_V = <f, div_D' u>_C."""
    _expect(f.space, CellFaceSpace, "adjoint_dist_div needs a cell-face field")
    T = div_pairing(vec_space, f.space)
    return Field(vec_space, mass_matrix(vec_space).solve(T @ f.coeffs))


def adjoint_dist_curl(f, vec_space):
    """Adjoint of dist_curl: <(perpdiv)* f, u>_V = <f, perpdiv_D' u>_C."""
    _expect(f.space, CellFaceSpace, "adjoint_dist_curl needs a cell-face field")
    T = curl_pairing(vec_space, f.space)
    return Field(vec_space, mass_matrix(vec_space).solve(T @ f.coeffs))


def adjoint_grad(u, a_space):
    """Adjoint gradient into the continuous space:
    <grad* u, f>_A = <u, grad f>_V. Its negative approximates div u."""
    _expect(u.space, VectorDGSpace, "adjoint_grad needs a vector field")
    B = grad_coupling(u.space, a_space)
    return Field(a_space, mass_matrix(a_space).solve(B.T @ u.coeffs))


def adjoint_perp(u, a_space):
    """Adjoint rotated gradient: <(perp)* u, f>_A = <u, perp-grad f>_V."""
    _expect(u.space, VectorDGSpace, "adjoint_perp needs a vector field")
    B = perp_coupling(u.space, a_space)
    return Field(a_space, mass_matrix(a_space).solve(B.T @ u.coeffs))


def divfree_init(f0, curl_space, cf_space):
    """Field whose adjoint divergence vanishes identically, built from a
    scalar potential: u0 = -(perpdiv_D')* (cell-face projection of f0)."""
    fh = cellface_project(cf_space, f0)
    u0 = adjoint_dist_curl(fh, curl_space)
    return Field(curl_space, -u0.coeffs)


# ---------------------------------------------------------------------------
# cohomology rank check (tiny meshes only)
# ---------------------------------------------------------------------------

@dataclass
class CohomologyReport:
    dim_ker_grad: int
    harmonic_dim: int
    rank_grad: int
    rank_dist_curl: int
    dim_a: int
    dim_vec: int
    dim_cf: int


def cohomology_report(mesh, degree, quad=None, max_cells=8):
    """Betti-number check by dense ranks: b0 = dim ker(grad),
    b1 = dim ker(dist_curl) - rank(grad). Guarded to tiny meshes."""
    if mesh.n_cells > max_cells:
        raise OperatorError(
            f"cohomology_report is dense; {mesh.n_cells} cells exceeds "
            f"the {max_cells}-cell guard")
    from .spaces import default_quadrature
    if quad is None:
        quad = default_quadrature(mesh, degree)
    a_space = build_space(mesh, SpaceFamily.CONTINUOUS_SCALAR, degree + 1, quad)
    vec = build_space(mesh, SpaceFamily.VECTOR_CURL_OPTIMAL, degree, quad)
    cf = build_space(mesh, SpaceFamily.CELL_FACE, degree, quad)
    B = grad_coupling(vec, a_space).toarray()
    Mv = mass_matrix(vec)
    grad_mat = np.column_stack([Mv.solve(B[:, j])
                                for j in range(a_space.n_dofs)])
    T = curl_pairing(vec, cf).toarray()
    Mc = mass_matrix(cf)
    curl_mat = np.column_stack([Mc.solve(T.T[:, i])
                                for i in range(vec.n_dofs)])
    rank_grad = np.linalg.matrix_rank(grad_mat)
    rank_curl = np.linalg.matrix_rank(curl_mat)
    b0 = a_space.n_dofs - rank_grad
    b1 = (vec.n_dofs - rank_curl) - rank_grad
    return CohomologyReport(
        dim_ker_grad=int(b0), harmonic_dim=int(b1),
        rank_grad=int(rank_grad), rank_dist_curl=int(rank_curl),
        dim_a=a_space.n_dofs, dim_vec=vec.n_dofs, dim_cf=cf.n_dofs)
