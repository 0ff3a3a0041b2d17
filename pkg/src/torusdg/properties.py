"""Machine-checkable operator invariants, shared by the CLI and tests.

Each check returns its measured residual together with the tolerance it
must meet; the drivers render pass/fail from these numbers.
"""

import numpy as np

from .mesh import generate_cartesian, generate_perturbed_quad, split_into_triangles
from .operators import (
    adjoint_dist_curl,
    adjoint_dist_div,
    adjoint_grad,
    adjoint_perp,
    cellface_project,
    cohomology_report,
    dist_curl,
    dist_div,
    grad_coupling,
    l2_project,
    mass_matrix,
    perp_coupling,
)
from .spaces import Field, SpaceFamily, build_space, default_quadrature

F = SpaceFamily

_POLY_DATA = {
    0: (lambda x, y: np.full_like(x, 0.7), lambda x, y: (0 * x, 0 * y)),
    1: (lambda x, y: 0.3 + 2 * x - y, lambda x, y: (2 + 0 * x, -1 + 0 * y)),
    2: (lambda x, y: 1 + x * y - y**2 + 0.5 * x**2,
        lambda x, y: (y + x, x - 2 * y)),
}


def _spaces(mesh, k, bump=0):
    quad = default_quadrature(mesh, k, bump=bump)
    return {
        "A": build_space(mesh, F.CONTINUOUS_SCALAR, k + 1, quad),
        "curl": build_space(mesh, F.VECTOR_CURL_OPTIMAL, k, quad),
        "div": build_space(mesh, F.VECTOR_DIV_OPTIMAL, k, quad),
        "cf": build_space(mesh, F.CELL_FACE, k, quad),
    }


def _seam_free_cells(mesh):
    bad = set()
    for s in mesh.sides:
        if np.any(s.right_shift != 0):
            bad.add(s.left_cell)
            bad.add(s.right_cell)
    for c in range(mesh.n_cells):
        if np.any(mesh.cell_shifts[c] != 0):
            bad.add(c)
    return np.array(sorted(set(range(mesh.n_cells)) - bad))


def adjoint_identity_residual(sp, rng):
    """Worst relative defect of the four transpose identities."""
    MA = mass_matrix(sp["A"])
    Mcf = mass_matrix(sp["cf"])
    worst = 0.0
    for key, adj, coupling in (("curl", adjoint_grad, grad_coupling),
                               ("div", adjoint_perp, perp_coupling)):
        V = sp[key]
        MV = mass_matrix(V)
        u = Field(V, rng.standard_normal(V.n_dofs))
        fc = rng.standard_normal(sp["A"].n_dofs)
        lhs = MA.inner(adj(u, sp["A"]).coeffs, fc)
        rhs = MV.inner(u.coeffs, MV.solve(coupling(V, sp["A"]) @ fc))
        worst = max(worst, abs(lhs - rhs) / (MV.norm(u.coeffs) * MA.norm(fc)))
    for key, fwd, adj in (("curl", dist_curl, adjoint_dist_curl),
                          ("div", dist_div, adjoint_dist_div)):
        V = sp[key]
        MV = mass_matrix(V)
        u = Field(V, rng.standard_normal(V.n_dofs))
        f = Field(sp["cf"], rng.standard_normal(sp["cf"].n_dofs))
        lhs = MV.inner(adj(f, V).coeffs, u.coeffs)
        rhs = Mcf.inner(f.coeffs, fwd(u, sp["cf"]).coeffs)
        worst = max(worst, abs(lhs - rhs)
                    / (MV.norm(u.coeffs) * Mcf.norm(f.coeffs)))
    return worst


def complex_exactness_residual(sp, rng):
    """dist_curl(grad f) and dist_div(perp-grad f), relative."""
    coef = rng.standard_normal(sp["A"].n_dofs)
    Mcf = mass_matrix(sp["cf"])
    Mc, Md = mass_matrix(sp["curl"]), mass_matrix(sp["div"])
    gradf = Field(sp["curl"], Mc.solve(grad_coupling(sp["curl"], sp["A"]) @ coef))
    perpf = Field(sp["div"], Md.solve(perp_coupling(sp["div"], sp["A"]) @ coef))
    r1 = Mcf.norm(dist_curl(gradf, sp["cf"]).coeffs) / Mc.norm(gradf.coeffs)
    r2 = Mcf.norm(dist_div(perpf, sp["cf"]).coeffs) / Md.norm(perpf.coeffs)
    return max(r1, r2)


def kernel_chain_residual(sp, rng):
    """grad* (perpdiv_D')* and (perp)* (div_D')*, relative."""
    MA = mass_matrix(sp["A"])
    f = Field(sp["cf"], rng.standard_normal(sp["cf"].n_dofs))
    u = adjoint_dist_curl(f, sp["curl"])
    r1 = (MA.norm(adjoint_grad(u, sp["A"]).coeffs)
          / max(mass_matrix(sp["curl"]).norm(u.coeffs), 1e-300))
    g = Field(sp["cf"], rng.standard_normal(sp["cf"].n_dofs))
    v = adjoint_dist_div(g, sp["div"])
    r2 = (MA.norm(adjoint_perp(v, sp["A"]).coeffs)
          / max(mass_matrix(sp["div"]).norm(v.coeffs), 1e-300))
    return max(r1, r2)


def commutation_polynomial_residual(mesh, k):
    """Both projection/adjoint diagrams on polynomial data, checked on
    seam-free cells (non-periodic data is two-valued at the seam)."""
    sp = _spaces(mesh, k)
    g, gg = _POLY_DATA[k]
    fh = cellface_project(sp["cf"], g)
    inner = _seam_free_cells(mesh)
    worst = 0.0
    for key, adj, sign_map in (
            ("div", adjoint_dist_div, lambda gx, gy: (-gx, -gy)),
            ("curl", adjoint_dist_curl, lambda gx, gy: (gy, -gx))):
        V = sp[key]
        lhs = adj(fh, V)
        rhs = l2_project(V, lambda x, y: np.stack(sign_map(*gg(x, y)), axis=-1))
        diff = (lhs.coeffs - rhs.coeffs).reshape(mesh.n_cells, V.n_loc)
        scale = max(1.0, np.abs(rhs.coeffs).max())
        worst = max(worst, np.abs(diff[inner]).max() / scale)
    return worst


def commutation_smooth_residual(mesh, k, bump=1):
    """Divergence diagram on smooth periodic data, global, quadrature
    limited (one extra point per axis by default)."""
    sp = _spaces(mesh, k, bump=bump)
    g = lambda x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    gg = lambda x, y: (2 * np.pi * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y),
                       -2 * np.pi * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    fh = cellface_project(sp["cf"], g)
    lhs = adjoint_dist_div(fh, sp["div"])
    rhs = l2_project(sp["div"], lambda x, y: -np.stack(gg(x, y), axis=-1))
    scale = max(1.0, np.abs(rhs.coeffs).max())
    return np.abs(lhs.coeffs - rhs.coeffs).max() / scale


def property_report():
    """All operator invariants with measured residuals.

    Returns a list of (name, measured, threshold, ok) tuples.
    """
    rng = np.random.default_rng(123)
    meshes = {
        "cart": generate_cartesian(3, 3),
        "pert": generate_perturbed_quad(3, 3, 0.2, 42),
        "tri": split_into_triangles(generate_perturbed_quad(3, 3, 0.2, 42), 7),
    }
    report = []
    for mname, mesh in meshes.items():
        for k in (0, 1, 2):
            sp = _spaces(mesh, k)
            report.append((f"adjoint_identities[{mname},k={k}]",
                           adjoint_identity_residual(sp, rng), 1e-12))
            report.append((f"complex_exactness[{mname},k={k}]",
                           complex_exactness_residual(sp, rng), 1e-12))
            report.append((f"kernel_chain[{mname},k={k}]",
                           kernel_chain_residual(sp, rng), 1e-11))
    for k in (0, 1, 2):
        report.append((f"commutation_polynomial[cart,k={k}]",
                       commutation_polynomial_residual(
                           generate_cartesian(5, 5), k), 1e-12))
        report.append((f"commutation_polynomial[tri,k={k}]",
                       commutation_polynomial_residual(
                           split_into_triangles(generate_cartesian(5, 5), 3),
                           k), 1e-12))
    report.append(("commutation_smooth[pert,k=2]",
                   commutation_smooth_residual(
                       generate_perturbed_quad(10, 10, 0.2, 42), 2), 1e-8))
    rep = cohomology_report(generate_cartesian(2, 2), 1)
    report.append(("betti_b0[2x2,k=1]", abs(rep.dim_ker_grad - 1), 0.5))
    report.append(("betti_b1[2x2,k=1]", abs(rep.harmonic_dim - 2), 0.5))
    return [(name, float(measured), float(thresh), measured <= thresh)
            for name, measured, thresh in report]
