"""Finite element spaces of the nonconforming vector de-Rham complex.

Families
--------
* ``CONTINUOUS_SCALAR``  globally continuous Lagrange scalars (degree m,
  built as P_m on triangles / Q_m on quads with periodic identification);
* ``DG_SCALAR``          discontinuous scalars, dP_k / dQ_k;
* ``VECTOR_TENSOR``      plain componentwise vector DG, (dP_k)^2/(dQ_k)^2;
* ``VECTOR_DIV_OPTIMAL`` enriched Q-type monomial space whose physical
  basis is the contravariant (Piola) transform of the reference basis, so
  rotated gradients of continuous degree-(k+1) scalars are contained
  cell-wise on arbitrary straight-edged quads;
* ``VECTOR_CURL_OPTIMAL`` the mirrored set under the covariant transform,
  containing gradients of continuous degree-(k+1) scalars cell-wise;
* ``CELL_FACE``          product of a per-cell block and a per-side block
  (degree k polynomials in the side parameter), with the graph L2 inner
  product.

On triangles all three vector families coincide with the full vector dP_k
written in per-cell physical monomials (centered at the centroid, scaled
by the cell radius).

All spaces bound to one mesh must share the same quadrature configuration,
which fixes every integral in the library (mass matrices, adjoints and
residuals use identical points and weights).
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .quadrature import segment01_rule, square_rule, triangle_rule


class SpaceError(ValueError):
    """Unsupported family/degree/mesh combination."""


class SpaceFamily(Enum):
    CONTINUOUS_SCALAR = "continuous_scalar"
    DG_SCALAR = "dg_scalar"
    VECTOR_TENSOR = "vector_tensor"
    VECTOR_DIV_OPTIMAL = "vector_div_optimal"
    VECTOR_CURL_OPTIMAL = "vector_curl_optimal"
    CELL_FACE = "cell_face"


VECTOR_FAMILIES = (SpaceFamily.VECTOR_TENSOR, SpaceFamily.VECTOR_DIV_OPTIMAL,
                   SpaceFamily.VECTOR_CURL_OPTIMAL)

_QUAD_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
_QUAD_REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
_TRI_EDGES = np.array([[0, 1], [1, 2], [2, 0]])
_TRI_REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# quadrature configuration shared by all spaces on one mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    cell_rule: object
    side_rule: object


def element_kind(mesh):
    sizes = {len(c) for c in mesh.cells}
    if sizes == {4}:
        return "quad"
    if sizes == {3}:
        return "tri"
    raise SpaceError(f"mesh must be all-quad or all-triangle, got sizes {sizes}")


def default_quadrature(mesh, degree, bump=0):
    """Assembly rule: (k+3) points per axis on quads, degree 2k+4 on
    triangles, k+3 points on sides; `bump` shifts the order for
    quadrature-robustness studies."""
    k = degree
    if element_kind(mesh) == "quad":
        cell = square_rule(max(1, k + 3 + bump))
    else:
        cell = triangle_rule(max(0, 2 * k + 4 + 2 * bump))
    side = segment01_rule(max(1, k + 3 + bump))
    return QuadratureConfig(cell_rule=cell, side_rule=side)


# ---------------------------------------------------------------------------
# monomial helpers
# ---------------------------------------------------------------------------

def _exps_total(k):
    """Exponent pairs of total degree <= k (dP_k), deterministic order."""
    return [(i, j) for d in range(k + 1) for i in range(d, -1, -1)
            for j in [d - i]]


def _exps_box(kx, ky):
    """Exponent pairs with i <= kx, j <= ky (empty if either is < 0)."""
    if kx < 0 or ky < 0:
        return []
    return [(i, j) for i in range(kx + 1) for j in range(ky + 1)]


def _mono_val(exps, X, Y):
    """Evaluate monomials X^i Y^j; output (..., n)."""
    out = np.empty(X.shape + (len(exps),))
    for m, (i, j) in enumerate(exps):
        out[..., m] = X**i * Y**j
    return out


def _mono_grad(exps, X, Y):
    """Gradients of monomials with respect to (X, Y); output (..., n, 2)."""
    out = np.zeros(X.shape + (len(exps), 2))
    for m, (i, j) in enumerate(exps):
        if i > 0:
            out[..., m, 0] = i * X**(i - 1) * Y**j
        if j > 0:
            out[..., m, 1] = j * X**i * Y**(j - 1)
    return out


def quad_vector_exponents(degree, variant):
    """Monomial exponents of the optimal quad vector spaces.

    Returns (x_exps, y_exps, extra) where extra is the single enrichment
    vector given as ((cx, ex, ey), (cy, ex, ey)) sign/exponent triples.
    """
    k = degree
    box = set(_exps_box(k, k))
    if variant == "div":
        xs = sorted(box | set(_exps_box(k + 1, k - 1)))
        ys = sorted(box | set(_exps_box(k - 1, k + 1)))
        extra = ((-1.0, k + 1, k), (1.0, k, k + 1))
    elif variant == "curl":
        xs = sorted(box | set(_exps_box(k - 1, k + 1)))
        ys = sorted(box | set(_exps_box(k + 1, k - 1)))
        extra = ((1.0, k, k + 1), (1.0, k + 1, k))
    else:
        raise ValueError(variant)
    return xs, ys, extra


# ---------------------------------------------------------------------------
# per-cell geometry at the reference quadrature points
# ---------------------------------------------------------------------------

class CellGeometry:
    """Jacobian data of every cell at the cell-rule reference points."""

    def __init__(self, mesh, cell_rule):
        self.mesh = mesh
        self.kind = element_kind(mesh)
        self.rule = cell_rule
        ref = cell_rule.points
        self.ref_points = ref
        nq = len(ref)
        nc = mesh.n_cells
        corners = np.stack([mesh.cell_corners(c) for c in range(nc)])
        self.corners = corners
        if self.kind == "quad":
            c0 = corners[:, 0]
            self.c1 = corners[:, 1] - c0
            self.c2 = corners[:, 3] - c0
            self.c3 = corners[:, 0] + corners[:, 2] - corners[:, 1] - corners[:, 3]
            x, y = ref[:, 0], ref[:, 1]
            self.points = (c0[:, None, :]
                           + self.c1[:, None, :] * x[None, :, None]
                           + self.c2[:, None, :] * y[None, :, None]
                           + self.c3[:, None, :] * (x * y)[None, :, None])
            self.jac = self._quad_jacobian(np.broadcast_to(ref, (nc, nq, 2)),
                                           np.arange(nc)[:, None])
        else:
            v0 = corners[:, 0]
            e1 = corners[:, 1] - v0
            e2 = corners[:, 2] - v0
            J = np.empty((nc, 2, 2))
            J[:, :, 0] = e1
            J[:, :, 1] = e2
            self.jac_const = J
            self.points = (v0[:, None, :]
                           + e1[:, None, :] * ref[None, :, 0, None]
                           + e2[:, None, :] * ref[None, :, 1, None])
            self.jac = np.broadcast_to(J[:, None], (nc, nq, 2, 2))
            self.centroid = corners.mean(axis=1)
            self.radius = np.max(
                np.linalg.norm(corners - self.centroid[:, None, :], axis=2),
                axis=1)
        self.det = (self.jac[..., 0, 0] * self.jac[..., 1, 1]
                    - self.jac[..., 0, 1] * self.jac[..., 1, 0])
        self.inv = self._inv22(self.jac, self.det)
        self.weights = cell_rule.weights[None, :] * self.det
        self.eval_points = mesh.wrap(self.points)

    def _quad_jacobian(self, refpts, cells):
        """J at reference points; refpts (..., 2), cells broadcastable ints."""
        c1 = self.c1[cells]
        c2 = self.c2[cells]
        c3 = self.c3[cells]
        J = np.empty(refpts.shape[:-1] + (2, 2))
        J[..., :, 0] = c1 + c3 * refpts[..., 1, None]
        J[..., :, 1] = c2 + c3 * refpts[..., 0, None]
        return J

    @staticmethod
    def _inv22(J, det):
        inv = np.empty_like(J)
        inv[..., 0, 0] = J[..., 1, 1]
        inv[..., 0, 1] = -J[..., 0, 1]
        inv[..., 1, 0] = -J[..., 1, 0]
        inv[..., 1, 1] = J[..., 0, 0]
        return inv / det[..., None, None]

    def map_points(self, cells, refpts):
        """Physical coordinates of reference points in given cells."""
        if self.kind == "quad":
            c0 = self.corners[cells, 0]
            x, y = refpts[..., 0], refpts[..., 1]
            return (c0 + self.c1[cells] * x[..., None]
                    + self.c2[cells] * y[..., None]
                    + self.c3[cells] * (x * y)[..., None])
        v0 = self.corners[cells, 0]
        e1 = self.corners[cells, 1] - v0
        e2 = self.corners[cells, 2] - v0
        return (v0 + e1 * refpts[..., 0, None] + e2 * refpts[..., 1, None])

    def jacobian_at(self, cells, refpts):
        """(J, detJ, Jinv) at arbitrary reference points of given cells."""
        if self.kind == "quad":
            J = self._quad_jacobian(refpts, cells)
        else:
            J = np.broadcast_to(self.jac_const[cells],
                                refpts.shape[:-1] + (2, 2))
        det = (J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])
        return J, det, self._inv22(J, det)


def cell_geometry(mesh, cell_rule):
    cache = getattr(mesh, "_geom_cache", None)
    if cache is None:
        cache = mesh._geom_cache = {}
    key = id(cell_rule)
    if key not in cache:
        cache[key] = CellGeometry(mesh, cell_rule)
    return cache[key]


class SideGeometry:
    """Side quadrature data: physical points in the left frame, weights
    with length factors, and both incident cells' reference coordinates."""

    def __init__(self, mesh, side_rule):
        self.mesh = mesh
        self.kind = element_kind(mesh)
        self.rule = side_rule
        t = side_rule.points
        self.t = t
        ns = mesh.n_sides
        a = np.stack([s.a for s in mesh.sides])
        b = np.stack([s.b for s in mesh.sides])
        self.points = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        self.eval_points = mesh.wrap(self.points)
        lengths = np.array([s.length for s in mesh.sides])
        self.lengths = lengths
        self.weights = side_rule.weights[None, :] * lengths[:, None]
        self.normals = np.stack([s.normal for s in mesh.sides])
        self.left = np.array([s.left_cell for s in mesh.sides])
        self.right = np.array([s.right_cell for s in mesh.sides])
        ref_corners = (_QUAD_REF_CORNERS if self.kind == "quad"
                       else _TRI_REF_CORNERS)
        edges = _QUAD_EDGES if self.kind == "quad" else _TRI_EDGES
        le = np.array([s.left_edge for s in mesh.sides])
        re = np.array([s.right_edge for s in mesh.sides])
        e0l, e1l = ref_corners[edges[le, 0]], ref_corners[edges[le, 1]]
        e0r, e1r = ref_corners[edges[re, 0]], ref_corners[edges[re, 1]]
        self.ref_left = e0l[:, None, :] + t[None, :, None] * (e1l - e0l)[:, None, :]
        # the right cell traverses the shared side in the opposite direction
        self.ref_right = (e0r[:, None, :]
                          + (1.0 - t)[None, :, None] * (e1r - e0r)[:, None, :])
        self.right_shift = np.stack([s.right_shift for s in mesh.sides])


def side_geometry(mesh, side_rule):
    cache = getattr(mesh, "_side_geom_cache", None)
    if cache is None:
        cache = mesh._side_geom_cache = {}
    key = id(side_rule)
    if key not in cache:
        cache[key] = SideGeometry(mesh, side_rule)
    return cache[key]


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass
class Field:
    """Coefficient vector of a function in a finite element space."""

    space: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise SpaceError(
                f"coefficient length {self.coeffs.shape} does not match "
                f"space dimension {self.space.n_dofs}")

    def copy(self):
        return Field(self.space, self.coeffs.copy())

    def __add__(self, other):
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return Field(self.space, self.coeffs - other.coeffs)

    def __mul__(self, a):
        return Field(self.space, self.coeffs * a)

    __rmul__ = __mul__


@dataclass
class BasisEval:
    """Physical-space basis data at one point of one cell."""

    values: np.ndarray
    gradients: np.ndarray
    divergence: np.ndarray
    curl: np.ndarray


# ---------------------------------------------------------------------------
# space classes
# ---------------------------------------------------------------------------

class FiniteElementSpace:
    def __init__(self, mesh, family, degree, quad):
        self.mesh = mesh
        self.family = family
        self.degree = degree
        self.quad = quad
        self.kind = element_kind(mesh)
        self.geom = cell_geometry(mesh, quad.cell_rule)
        self.side_geom = side_geometry(mesh, quad.side_rule)

    # -- subclasses fill: n_loc, n_dofs, cell_dofs, tables ------------------

    @property
    def n_cells(self):
        return self.mesh.n_cells

    def gather(self, field_coeffs):
        """Per-cell local coefficient view, shape (nc, n_loc)."""
        return field_coeffs[self.cell_dofs]

    def zeros(self):
        return Field(self, np.zeros(self.n_dofs))


def _scaled_coords(geom, cells, phys):
    """Centered-scaled physical coordinates for triangle monomials.

    ``cells`` must broadcast against ``phys[..., 0]`` (pass a trailing
    singleton axis when phys carries a quadrature axis).
    """
    c = geom.centroid[cells]
    r = geom.radius[cells]
    return (phys[..., 0] - c[..., 0]) / r, (phys[..., 1] - c[..., 1]) / r, r


class ScalarDGSpace(FiniteElementSpace):
    """dQ_k on quads (composed reference monomials) / dP_k on triangles
    (physical centered monomials)."""

    def __init__(self, mesh, degree, quad):
        super().__init__(mesh, SpaceFamily.DG_SCALAR, degree, quad)
        if not 0 <= degree <= 2:
            raise SpaceError(f"DG scalar degree must be 0..2, got {degree}")
        if self.kind == "quad":
            self.exps = _exps_box(degree, degree)
        else:
            self.exps = _exps_total(degree)
        self.n_loc = len(self.exps)
        self.n_dofs = self.n_loc * mesh.n_cells
        self.cell_dofs = np.arange(self.n_dofs).reshape(mesh.n_cells, self.n_loc)

    def eval_cells(self, cells, refpts, phys=None):
        """Basis values and physical gradients at reference points.

        Returns (val, grad) with shapes (..., n_loc) and (..., n_loc, 2).
        """
        geom = self.geom
        if self.kind == "quad":
            xi = 2.0 * refpts[..., 0] - 1.0
            eta = 2.0 * refpts[..., 1] - 1.0
            val = _mono_val(self.exps, xi, eta)
            ghat = 2.0 * _mono_grad(self.exps, xi, eta)  # d/d(ref coords)
            _, _, inv = geom.jacobian_at(cells, refpts)
            # physical gradient J^{-T} ghat: (J^{-1})_{mn} ghat_m
            grad = np.einsum("...mn,...lm->...ln", inv, ghat)
            return val, grad
        if phys is None:
            phys = geom.map_points(cells, refpts)
        X, Y, r = _scaled_coords(geom, cells, phys)
        val = _mono_val(self.exps, X, Y)
        grad = _mono_grad(self.exps, X, Y) / r[..., None, None]
        return val, grad

    @cached_property
    def tables(self):
        nc = self.n_cells
        cells = np.arange(nc)[:, None]
        refpts = np.broadcast_to(self.geom.ref_points,
                                 (nc,) + self.geom.ref_points.shape)
        val, grad = self.eval_cells(cells, refpts, phys=self.geom.points)
        return {"val": val, "grad": grad}

    @cached_property
    def side_tables(self):
        sg = self.side_geom
        vl, _ = self.eval_cells(sg.left[:, None], sg.ref_left)
        vr, _ = self.eval_cells(sg.right[:, None], sg.ref_right)
        return {"left": vl, "right": vr}


class VectorDGSpace(FiniteElementSpace):
    """Discontinuous vector spaces; the transform fixes the family."""

    def __init__(self, mesh, family, degree, quad):
        super().__init__(mesh, family, degree, quad)
        if not 0 <= degree <= 2:
            raise SpaceError(f"vector degree must be 0..2, got {degree}")
        k = degree
        if self.kind == "tri":
            self.transform = "identity"
            exps = _exps_total(k)
            self.x_exps, self.y_exps, self.extra = exps, exps, None
        elif family == SpaceFamily.VECTOR_TENSOR:
            self.transform = "identity"
            exps = _exps_box(k, k)
            self.x_exps, self.y_exps, self.extra = exps, exps, None
        elif family == SpaceFamily.VECTOR_DIV_OPTIMAL:
            self.transform = "piola"
            self.x_exps, self.y_exps, self.extra = quad_vector_exponents(k, "div")
        elif family == SpaceFamily.VECTOR_CURL_OPTIMAL:
            self.transform = "covariant"
            self.x_exps, self.y_exps, self.extra = quad_vector_exponents(k, "curl")
        else:
            raise SpaceError(f"not a vector family: {family}")
        self.n_loc = (len(self.x_exps) + len(self.y_exps)
                      + (1 if self.extra is not None else 0))
        self.n_dofs = self.n_loc * mesh.n_cells
        self.cell_dofs = np.arange(self.n_dofs).reshape(mesh.n_cells, self.n_loc)

    # -- reference basis -----------------------------------------------------

    def _ref_basis(self, refpts):
        """Reference values and reference-coordinate derivatives.

        Returns (val, dx, dy): each (..., n_loc, 2); derivatives are with
        respect to the [0,1]^2 reference coordinates.
        """
        xi = 2.0 * refpts[..., 0] - 1.0
        eta = 2.0 * refpts[..., 1] - 1.0
        shape = refpts.shape[:-1]
        nx, ny = len(self.x_exps), len(self.y_exps)
        val = np.zeros(shape + (self.n_loc, 2))
        dx = np.zeros_like(val)
        dy = np.zeros_like(val)

        vx = _mono_val(self.x_exps, xi, eta)
        gx = 2.0 * _mono_grad(self.x_exps, xi, eta)
        val[..., :nx, 0] = vx
        dx[..., :nx, 0] = gx[..., 0]
        dy[..., :nx, 0] = gx[..., 1]

        vy = _mono_val(self.y_exps, xi, eta)
        gy = 2.0 * _mono_grad(self.y_exps, xi, eta)
        val[..., nx:nx + ny, 1] = vy
        dx[..., nx:nx + ny, 1] = gy[..., 0]
        dy[..., nx:nx + ny, 1] = gy[..., 1]

        if self.extra is not None:
            for comp, (sign, i, j) in enumerate(self.extra):
                exps = [(i, j)]
                v = _mono_val(exps, xi, eta)[..., 0] * sign
                g = 2.0 * _mono_grad(exps, xi, eta)[..., 0, :] * sign
                val[..., -1, comp] = v
                dx[..., -1, comp] = g[..., 0]
                dy[..., -1, comp] = g[..., 1]
        return val, dx, dy

    # -- physical evaluation --------------------------------------------------

    def eval_cells(self, cells, refpts, phys=None):
        """Physical values, gradients, divergence and scalar curl.

        Shapes: val (..., n_loc, 2), grad (..., n_loc, 2, 2) with
        grad[..., i, m] = d u_i / d x_m, div and curl (..., n_loc).
        """
        geom = self.geom
        if self.kind == "tri":
            if phys is None:
                phys = geom.map_points(cells, refpts)
            X, Y, r = _scaled_coords(geom, cells, phys)
            nx = len(self.x_exps)
            shape = X.shape
            val = np.zeros(shape + (self.n_loc, 2))
            grad = np.zeros(shape + (self.n_loc, 2, 2))
            val[..., :nx, 0] = _mono_val(self.x_exps, X, Y)
            val[..., nx:, 1] = _mono_val(self.y_exps, X, Y)
            grad[..., :nx, 0, :] = _mono_grad(self.x_exps, X, Y) / r[..., None, None]
            grad[..., nx:, 1, :] = _mono_grad(self.y_exps, X, Y) / r[..., None, None]
            div = grad[..., 0, 0] + grad[..., 1, 1]
            curl = grad[..., 1, 0] - grad[..., 0, 1]
            return val, grad, div, curl

        vhat, dxh, dyh = self._ref_basis(refpts)
        J, det, inv = geom.jacobian_at(cells, refpts)
        # reference divergence/curl of the reference basis
        div_hat = dxh[..., 0] + dyh[..., 1]
        curl_hat = dxh[..., 1] - dyh[..., 0]

        if self.transform == "identity":
            val = vhat
            # grad u_i = J^{-T} grad_hat u_i
            gh = np.stack([dxh, dyh], axis=-1)          # (..., n_loc, 2, 2)
            grad = np.einsum("...nm,...ldn->...ldm", inv, gh)
        elif self.transform == "covariant":
            A = np.swapaxes(inv, -1, -2)                # J^{-T}
            val = np.einsum("...im,...lm->...li", A, vhat)
            grad = self._transform_gradient(A, self._dA, cells, refpts,
                                            vhat, dxh, dyh, inv)
        else:  # piola
            B = J / det[..., None, None]
            val = np.einsum("...im,...lm->...li", B, vhat)
            grad = self._transform_gradient(B, self._dB, cells, refpts,
                                            vhat, dxh, dyh, inv)

        if self.transform == "covariant":
            curl = curl_hat / det[..., None]
            div = grad[..., 0, 0] + grad[..., 1, 1]
        elif self.transform == "piola":
            div = div_hat / det[..., None]
            curl = grad[..., 1, 0] - grad[..., 0, 1]
        else:
            div = grad[..., 0, 0] + grad[..., 1, 1]
            curl = grad[..., 1, 0] - grad[..., 0, 1]
        return val, grad, div, curl

    def _jac_derivatives(self, cells, refpts):
        """dJ/dref_x and dJ/dref_y of the bilinear map (constant columns)."""
        c3 = self.geom.c3[cells]
        shape = refpts.shape[:-1] + (2, 2)
        dJx = np.zeros(shape)
        dJy = np.zeros(shape)
        dJx[..., :, 1] = c3
        dJy[..., :, 0] = c3
        return dJx, dJy

    def _dA(self, cells, refpts, J, det, inv, A):
        """Reference derivatives of the covariant factor A = J^{-T}."""
        dJx, dJy = self._jac_derivatives(cells, refpts)
        dAx = -np.einsum("...ij,...kj,...kl->...il", A, dJx, A)
        dAy = -np.einsum("...ij,...kj,...kl->...il", A, dJy, A)
        return dAx, dAy

    def _dB(self, cells, refpts, J, det, inv, B):
        """Reference derivatives of the Piola factor B = J / det J."""
        dJx, dJy = self._jac_derivatives(cells, refpts)
        c1, c2, c3 = (self.geom.c1[cells], self.geom.c2[cells],
                      self.geom.c3[cells])
        cross = lambda a, b: a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        ddet_x = cross(c1, c3)
        ddet_y = cross(c3, c2)
        dBx = dJx / det[..., None, None] - J * (ddet_x / det**2)[..., None, None]
        dBy = dJy / det[..., None, None] - J * (ddet_y / det**2)[..., None, None]
        return dBx, dBy

    def _transform_gradient(self, T, dT_fn, cells, refpts, vhat, dxh, dyh, inv):
        """Physical gradients of u = T(ref) uhat(ref) by the chain rule."""
        J, det, _ = self.geom.jacobian_at(cells, refpts)
        dTx, dTy = dT_fn(cells, refpts, J, det, inv, T)
        # du/dref_n = dT/dref_n uhat + T duhat/dref_n      (..., n_loc, 2)
        dux = (np.einsum("...im,...lm->...li", dTx, vhat)
               + np.einsum("...im,...lm->...li", T, dxh))
        duy = (np.einsum("...im,...lm->...li", dTy, vhat)
               + np.einsum("...im,...lm->...li", T, dyh))
        gh = np.stack([dux, duy], axis=-1)                # (..., n_loc, 2, 2)
        return np.einsum("...nm,...lin->...lim", inv, gh)

    @cached_property
    def tables(self):
        nc = self.n_cells
        cells = np.arange(nc)[:, None]
        refpts = np.broadcast_to(self.geom.ref_points,
                                 (nc,) + self.geom.ref_points.shape)
        val, grad, div, curl = self.eval_cells(cells, refpts,
                                               phys=self.geom.points)
        return {"val": val, "div": div, "curl": curl}

    @cached_property
    def side_tables(self):
        sg = self.side_geom
        vl, _, _, _ = self.eval_cells(sg.left[:, None], sg.ref_left)
        vr, _, _, _ = self.eval_cells(sg.right[:, None], sg.ref_right)
        return {"left": vl, "right": vr}


class ContinuousScalarSpace(FiniteElementSpace):
    """Globally continuous Lagrange space of polynomial degree m on the
    periodic torus (P_m on triangles, Q_m on quads)."""

    def __init__(self, mesh, degree, quad):
        super().__init__(mesh, SpaceFamily.CONTINUOUS_SCALAR, degree, quad)
        if not 1 <= degree <= 3:
            raise SpaceError(
                f"continuous scalar degree must be 1..3, got {degree}")
        m = degree
        self.m = m
        if self.kind == "quad":
            nodes1d = np.linspace(0.0, 1.0, m + 1)
            ref_nodes = np.array([[a, b] for a in nodes1d for b in nodes1d])
            exps = _exps_box(m, m)
        else:
            ref_nodes = np.array([[i / m, j / m]
                                  for i in range(m + 1)
                                  for j in range(m + 1 - i)])
            exps = _exps_total(m)
        self.ref_nodes = ref_nodes
        self.exps = exps
        V = _mono_val(exps, ref_nodes[:, 0], ref_nodes[:, 1])
        self.coef = np.linalg.inv(V)  # columns: monomial coeffs per basis fn
        self.n_loc = len(ref_nodes)
        self._build_dof_map()

    def _classify_node(self, node):
        """(kind, data): vertex local index, (edge, slot) or interior."""
        m = self.m
        tol = 1e-12
        on = lambda v, t: abs(v - t) < tol
        x, y = node
        if self.kind == "quad":
            corners = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
            cx = 0 if on(x, 0) else (1 if on(x, 1) else None)
            cy = 0 if on(y, 0) else (1 if on(y, 1) else None)
            if cx is not None and cy is not None:
                return "vertex", corners[(cx, cy)]
            a, b = round(x * m), round(y * m)
            if cy == 0:
                return "edge", (0, a - 1)
            if cx == 1:
                return "edge", (1, b - 1)
            if cy == 1:
                return "edge", (2, m - 1 - a)
            if cx == 0:
                return "edge", (3, m - 1 - b)
            return "interior", None
        # triangle
        i, j = round(x * m), round(y * m)
        if (i, j) == (0, 0):
            return "vertex", 0
        if (i, j) == (m, 0):
            return "vertex", 1
        if (i, j) == (0, m):
            return "vertex", 2
        if j == 0:
            return "edge", (0, i - 1)
        if i + j == m:
            return "edge", (1, j - 1)
        if i == 0:
            return "edge", (2, m - 1 - j)
        return "interior", None

    def _build_dof_map(self):
        mesh = self.mesh
        m = self.m
        k_edge = m - 1
        nv, ns, nc = mesh.n_vertices, mesh.n_sides, mesh.n_cells
        n_int = sum(1 for node in self.ref_nodes
                    if self._classify_node(node)[0] == "interior")
        self.n_dofs = nv + ns * k_edge + nc * n_int
        # local edge -> (side, is_left) lookup per cell
        edge_of = [dict() for _ in range(nc)]
        for si, s in enumerate(mesh.sides):
            edge_of[s.left_cell][s.left_edge] = (si, True)
            edge_of[s.right_cell][s.right_edge] = (si, False)
        cell_dofs = np.empty((nc, self.n_loc), dtype=int)
        for c in range(nc):
            interior_seen = 0
            for ln, node in enumerate(self.ref_nodes):
                kind, data = self._classify_node(node)
                if kind == "vertex":
                    cell_dofs[c, ln] = mesh.cells[c][data]
                elif kind == "edge":
                    e, slot = data
                    si, is_left = edge_of[c][e]
                    gslot = slot if is_left else k_edge - 1 - slot
                    cell_dofs[c, ln] = nv + si * k_edge + gslot
                else:
                    cell_dofs[c, ln] = (nv + ns * k_edge + c * n_int
                                        + interior_seen)
                    interior_seen += 1
        self.cell_dofs = cell_dofs
        self.n_interior = n_int

    def eval_cells(self, cells, refpts, phys=None):
        """Lagrange basis values and physical gradients."""
        x, y = refpts[..., 0], refpts[..., 1]
        mono = _mono_val(self.exps, x, y)
        mono_g = _mono_grad(self.exps, x, y)
        val = mono @ self.coef
        ghat = np.einsum("...em,el->...lm", mono_g, self.coef)
        _, _, inv = self.geom.jacobian_at(cells, refpts)
        grad = np.einsum("...nm,...ln->...lm", inv, ghat)
        return val, grad

    @cached_property
    def tables(self):
        nc = self.n_cells
        cells = np.arange(nc)[:, None]
        refpts = np.broadcast_to(self.geom.ref_points,
                                 (nc,) + self.geom.ref_points.shape)
        val, grad = self.eval_cells(cells, refpts)
        return {"val": val, "grad": grad}

    @cached_property
    def side_tables(self):
        sg = self.side_geom
        vl, _ = self.eval_cells(sg.left[:, None], sg.ref_left)
        vr, _ = self.eval_cells(sg.right[:, None], sg.ref_right)
        return {"left": vl, "right": vr}


class CellFaceSpace(FiniteElementSpace):
    """Cartesian product of a per-cell polynomial block and a per-side
    polynomial block with the graph L2 inner product.

    Cell block: dP_{k-1} on triangles; on quads, all dQ_k monomials except
    the top corner one, divided by the Jacobian determinant (so strong
    divergences/curls of the optimal vector spaces are contained exactly
    even on bilinear cells). Side block: degree-k polynomials in the side
    parameter, stored in the shifted Legendre basis.
    """

    def __init__(self, mesh, degree, quad):
        super().__init__(mesh, SpaceFamily.CELL_FACE, degree, quad)
        if not 0 <= degree <= 2:
            raise SpaceError(f"cell-face degree must be 0..2, got {degree}")
        k = degree
        if self.kind == "quad":
            self.cell_exps = [e for e in _exps_box(k, k) if e != (k, k)]
        else:
            self.cell_exps = _exps_total(k - 1) if k >= 1 else []
        self.n_cell_loc = len(self.cell_exps)
        self.n_side_loc = k + 1
        self.n_cell_block = self.n_cell_loc * mesh.n_cells
        self.n_dofs = self.n_cell_block + self.n_side_loc * mesh.n_sides
        self.cell_dofs = np.arange(self.n_cell_block).reshape(
            mesh.n_cells, self.n_cell_loc)

    def side_dofs(self, side_idx):
        base = self.n_cell_block + side_idx * self.n_side_loc
        return np.arange(base, base + self.n_side_loc)

    @cached_property
    def all_side_dofs(self):
        return (self.n_cell_block
                + np.arange(self.mesh.n_sides * self.n_side_loc
                            ).reshape(self.mesh.n_sides, self.n_side_loc))

    def cell_block_values(self, cells, refpts, det=None):
        """Cell-block basis values at reference points, (..., n_cell_loc)."""
        if self.n_cell_loc == 0:
            return np.zeros(refpts.shape[:-1] + (0,))
        if self.kind == "quad":
            xi = 2.0 * refpts[..., 0] - 1.0
            eta = 2.0 * refpts[..., 1] - 1.0
            val = _mono_val(self.cell_exps, xi, eta)
            if det is None:
                _, det, _ = self.geom.jacobian_at(cells, refpts)
            return val / det[..., None]
        phys = self.geom.map_points(cells, refpts)
        X, Y, _ = _scaled_coords(self.geom, cells, phys)
        return _mono_val(self.cell_exps, X, Y)

    @cached_property
    def tables(self):
        nc = self.n_cells
        cells = np.arange(nc)[:, None]
        refpts = np.broadcast_to(self.geom.ref_points,
                                 (nc,) + self.geom.ref_points.shape)
        val = self.cell_block_values(cells, refpts, det=self.geom.det)
        return {"val": val}

    @cached_property
    def side_basis(self):
        """Shifted Legendre values at the side rule points, (nqs, k+1)."""
        t = self.side_geom.t
        x = 2.0 * t - 1.0
        out = np.empty((len(t), self.n_side_loc))
        for m in range(self.n_side_loc):
            c = np.zeros(m + 1)
            c[m] = 1.0
            out[:, m] = np.polynomial.legendre.legval(x, c)
        return out

    def side_mass_diagonal(self):
        """Graph-product side mass is diagonal: length / (2m + 1)."""
        lengths = self.side_geom.lengths
        factors = 1.0 / (2.0 * np.arange(self.n_side_loc) + 1.0)
        return lengths[:, None] * factors[None, :]


# ---------------------------------------------------------------------------
# public constructors and point APIs
# ---------------------------------------------------------------------------

def build_space(mesh, family, degree, quad=None):
    """Construct a finite element space on a mesh.

    ``degree`` is the complex degree k for DG/cell-face families and the
    polynomial degree m for the continuous scalar family (the complex at
    degree k pairs vector degree k with continuous degree k + 1).
    """
    if quad is None:
        base_k = degree - 1 if family == SpaceFamily.CONTINUOUS_SCALAR else degree
        quad = default_quadrature(mesh, max(base_k, 0))
    if family == SpaceFamily.CONTINUOUS_SCALAR:
        return ContinuousScalarSpace(mesh, degree, quad)
    if family == SpaceFamily.DG_SCALAR:
        return ScalarDGSpace(mesh, degree, quad)
    if family in VECTOR_FAMILIES:
        return VectorDGSpace(mesh, family, degree, quad)
    if family == SpaceFamily.CELL_FACE:
        return CellFaceSpace(mesh, degree, quad)
    raise SpaceError(f"unknown family {family}")


def evaluate_basis(space, cell, ref_point):
    """All local basis functions of one cell at one reference point."""
    refpts = np.asarray(ref_point, dtype=float)[None, :]
    cells = np.array([cell])
    if isinstance(space, VectorDGSpace):
        val, grad, div, curl = space.eval_cells(cells, refpts)
        return BasisEval(val[0], grad[0], div[0], curl[0])
    if isinstance(space, (ScalarDGSpace, ContinuousScalarSpace)):
        val, grad = space.eval_cells(cells, refpts)
        return BasisEval(val[0], grad[0], None, None)
    if isinstance(space, CellFaceSpace):
        val = space.cell_block_values(cells, refpts)
        return BasisEval(val[0], None, None, None)
    raise SpaceError(f"cannot evaluate basis of {space.family}")


def trace_on_side(space, side_idx, t):
    """Left and right basis traces at parameter t of one side.

    Both traces are evaluated at the same physical point (the right cell
    handles any periodic wrap through its own unwrapped frame).
    """
    mesh = space.mesh
    side = mesh.sides[side_idx]
    t = float(t)
    ref_corners = (_QUAD_REF_CORNERS if space.kind == "quad"
                   else _TRI_REF_CORNERS)
    edges = _QUAD_EDGES if space.kind == "quad" else _TRI_EDGES
    e0l, e1l = ref_corners[edges[side.left_edge]]
    e0r, e1r = ref_corners[edges[side.right_edge]]
    ref_l = (e0l + t * (e1l - e0l))[None, :]
    ref_r = (e0r + (1.0 - t) * (e1r - e0r))[None, :]
    vl = space.eval_cells(np.array([side.left_cell]), ref_l)[0][0]
    vr = space.eval_cells(np.array([side.right_cell]), ref_r)[0][0]
    return vl, vr
