"""L2 errors, constraint-drift norms, discrete energy and rate tables."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .operators import adjoint_grad, adjoint_perp, mass_matrix
from .spaces import ContinuousScalarSpace, SpaceError, VectorDGSpace


class DriftKind(Enum):
    ADJOINT_CURL = "adjoint_curl"   # wave: perp-grad* u against its start
    ADJOINT_DIV = "adjoint_div"     # Maxwell/induction: grad* u


def l2_error(field, exact, t=0.0, component=None):
    """Quadrature L2 norm of (field - exact(., t)) over all cells.

    For vector fields ``component`` restricts the error to one component;
    the default measures the full vector difference.
    """
    space = field.space
    x, y = space.geom.eval_points[..., 0], space.geom.eval_points[..., 1]
    w = space.geom.weights
    if isinstance(space, VectorDGSpace):
        vals = np.einsum("cqid,ci->cqd", space.tables["val"],
                         space.gather(field.coeffs))
        target = np.asarray(exact(x, y, t), dtype=float)
        diff = vals - target
        if component is None:
            sq = (diff**2).sum(-1)
        else:
            sq = diff[..., component] ** 2
        return float(np.sqrt(np.sum(w * sq)))
    vals = np.einsum("cqi,ci->cq", space.tables["val"],
                     space.gather(field.coeffs))
    diff = vals - np.asarray(exact(x, y, t), dtype=float)
    return float(np.sqrt(np.sum(w * diff**2)))


def constraint_drift(u, u0, kind, a_space):
    """Mass norm in the continuous space of adjoint(u) - adjoint(u0)."""
    if u.space is not u0.space:
        raise SpaceError("drift requires both fields in the same space")
    if not isinstance(a_space, ContinuousScalarSpace):
        raise SpaceError("drift norm lives in the continuous scalar space")
    adj = adjoint_perp if kind == DriftKind.ADJOINT_CURL else adjoint_grad
    a = adj(u, a_space)
    b = adj(u0, a_space)
    return mass_matrix(a_space).norm(a.coeffs - b.coeffs)


def energy(u):
    """Discrete energy 0.5 <u, u> of a field."""
    M = mass_matrix(u.space)
    return 0.5 * M.inner(u.coeffs, u.coeffs)


@dataclass
class ConvergenceTable:
    """Mesh sizes, per-variable errors, pairwise rates and LSQ slopes."""

    hs: np.ndarray
    errors: dict           # name -> array of errors, one per mesh
    rates: dict            # name -> array of len(hs) - 1 pairwise rates
    slopes: dict           # name -> least-squares slope over all rows

    def row_count(self):
        return len(self.hs)


def convergence_table(errors, hs):
    """Pairwise log-ratio rates plus a least-squares slope per variable.

    ``errors`` maps variable names to one error per mesh; ``hs`` must be
    strictly decreasing with at least two entries.
    """
    hs = np.asarray(hs, dtype=float)
    if len(hs) < 2:
        raise ValueError("need at least two meshes for a rate")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    rates, slopes = {}, {}
    for name, errs in errors.items():
        errs = np.asarray(errs, dtype=float)
        if errs.shape != hs.shape:
            raise ValueError(f"{name}: {len(errs)} errors for {len(hs)} meshes")
        rates[name] = (np.log(errs[:-1] / errs[1:])
                       / np.log(hs[:-1] / hs[1:]))
        slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
        slopes[name] = float(slope)
    return ConvergenceTable(hs=hs, errors={k: np.asarray(v, dtype=float)
                                           for k, v in errors.items()},
                            rates=rates, slopes=slopes)
