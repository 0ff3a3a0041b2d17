"""The three linear systems, their numerical fluxes and benchmark cases.

Systems (all on the periodic unit torus, perp = rotation by +pi/2):

* wave:      d_t p + div u = 0,  d_t u + c^2 grad p = 0
             (u in the div-optimal space; flux diffusion must stay
             parallel to the side normal to conserve the adjoint curl);
* maxwell:   d_t b + perpdiv e = 0,  d_t e + c^2 perpgrad b = 0
             (e in the curl-optimal space; flux diffusion must stay
             orthogonal to the side normal to conserve the adjoint
             divergence);
* induction: d_t u + perpgrad(b . u^perp) + b div u = 0 for a given
             advecting field b, discretized with the adjoint-divergence
             coupling term.

Flux families: Godunov (exact normal Riemann solver; equals the
restricted-diffusion Lax-Friedrichs variant with lambda = c), plain
Lax-Friedrichs, and the Lax-Friedrichs variants with purely normal or
purely tangential diffusion.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np


class SystemError(ValueError):
    """Bad system/flux/test-case configuration."""


class FluxFamily(Enum):
    GODUNOV = "godunov"
    LAX_FRIEDRICH = "lax_friedrich"
    LF_NORMAL = "lf_normal"
    LF_TANGENTIAL = "lf_tangential"


@dataclass(frozen=True)
class FluxSpec:
    """Flux family plus the wave speed used in the diffusion term.

    ``lam=None`` takes the system's own speed (c for wave/Maxwell, the
    local side maximum of |b| for induction)."""

    family: FluxFamily
    lam: Optional[float] = None


@dataclass(frozen=True)
class SystemDef:
    kind: str                       # "wave" | "maxwell" | "induction"
    c: float = 1.0
    b_field: Optional[Callable] = None   # induction advecting field b(x, y)

    def __post_init__(self):
        if self.kind not in ("wave", "maxwell", "induction"):
            raise SystemError(f"unknown system kind {self.kind!r}")
        if self.kind == "induction" and self.b_field is None:
            raise SystemError("induction system needs an advecting field")

    @property
    def has_scalar(self):
        return self.kind in ("wave", "maxwell")

    @property
    def flux_direction(self):
        """Diffusion direction that preserves this system's constraint."""
        return "normal" if self.kind == "wave" else "tangential"

    def lambda_max(self, points=None):
        if self.kind == "induction":
            x, y = points[..., 0], points[..., 1]
            b = np.asarray(self.b_field(x, y))
            return float(np.sqrt((b**2).sum(-1)).max())
        return self.c


def vector_numerical_flux(spec, g_l, g_r, u_l, u_r, normal, direction,
                          lam=None):
    """Numerical flux of the vector equation, vectorized over leading axes.

    Central part: mean of g times n (normal direction, systems with a
    grad flux) or times n^perp (tangential direction, perp-grad flux).
    Diffusion: lambda/2 (u_l - u_r), restricted to n n^T for the normal
    variant, to I - n n^T for the tangential variant, unrestricted for
    plain Lax-Friedrichs. The Godunov family is the restricted variant.
    """
    normal = np.asarray(normal, dtype=float)
    if not np.allclose((normal**2).sum(-1), 1.0, atol=1e-13):
        raise SystemError("side normal is not unit length")
    if direction not in ("normal", "tangential"):
        raise SystemError(f"bad flux direction {direction!r}")
    lam = spec.lam if spec.lam is not None else lam
    if lam is None:
        raise SystemError("no wave speed available for the diffusion term")
    g_c = 0.5 * (np.asarray(g_l) + np.asarray(g_r))
    if direction == "normal":
        carrier = normal
    else:
        carrier = np.stack([-normal[..., 1], normal[..., 0]], axis=-1)
    flux = g_c[..., None] * carrier
    du = np.asarray(u_l) - np.asarray(u_r)
    lam = np.asarray(lam)[..., None] if np.ndim(lam) else lam
    family = spec.family
    if family == FluxFamily.LAX_FRIEDRICH:
        return flux + 0.5 * lam * du
    if family == FluxFamily.LF_NORMAL:
        restricted = "normal"
    elif family == FluxFamily.LF_TANGENTIAL:
        restricted = "tangential"
    elif family == FluxFamily.GODUNOV:
        restricted = direction
    else:
        raise SystemError(f"unknown flux family {family}")
    un = (du * normal).sum(-1)[..., None] * normal
    if restricted == "normal":
        return flux + 0.5 * lam * un
    return flux + 0.5 * lam * (du - un)


def scalar_numerical_flux(system, spec, scalar_l, scalar_r, u_l, u_r, normal):
    """Upwind flux of the scalar companion equation.

    Wave: flux of p is (u.n)* = mean(u).n + c/2 (p_l - p_r).
    Maxwell: flux of b is (e.n^perp)* = mean(e).n^perp + c/2 (b_l - b_r).
    ``spec`` is accepted for symmetry but the expression is the same for
    every flux family (the families only change the vector equation's
    diffusion)."""
    del spec
    if not system.has_scalar:
        raise SystemError(f"{system.kind} system has no scalar unknown")
    u_c = 0.5 * (np.asarray(u_l) + np.asarray(u_r))
    jump = np.asarray(scalar_l) - np.asarray(scalar_r)
    normal = np.asarray(normal, dtype=float)
    if system.kind == "wave":
        carrier = normal
    else:
        carrier = np.stack([-normal[..., 1], normal[..., 0]], axis=-1)
    return (u_c * carrier).sum(-1) + 0.5 * system.c * jump


# ---------------------------------------------------------------------------
# benchmark cases
# ---------------------------------------------------------------------------

@dataclass
class TestCase:
    name: str
    system: SystemDef
    t_final: float
    scalar_init: Optional[Callable] = None          # f(x, y)
    vector_init: Callable = None                    # f(x, y) -> (..., 2)
    scalar_exact: Optional[Callable] = None         # f(x, y, t)
    vector_exact: Optional[Callable] = None         # f(x, y, t) -> (..., 2)
    potential: Optional[Callable] = None            # for divergence-free init
    params: dict = field(default_factory=dict)


def _gaussian_bump(x, y, xc, yc, r0):
    xb = (x - xc) / r0
    yb = (y - yc) / r0
    return xb, yb, np.exp(-(xb**2 + yb**2) / 2.0)


def _cutoff_vortex(x, y, K0, alpha, xc, yc, r0):
    """Amplitude 2 K0 alpha exp(-alpha/(1-rb^2)) / (1-rb^2)^2 inside the
    support disk, zero outside; returns (xb, yb, amplitude)."""
    xb = (x - xc) / r0
    yb = (y - yc) / r0
    r2 = xb**2 + yb**2
    amp = np.zeros_like(r2)
    inside = r2 < 1.0
    q = 1.0 - r2[inside]
    amp[inside] = 2.0 * K0 * alpha * np.exp(-alpha / q) / q**2
    return xb, yb, amp


def _cutoff_potential(x, y, K0, alpha, xc, yc, r0):
    r2 = ((x - xc)**2 + (y - yc)**2) / r0**2
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = -K0 * r0 * np.exp(-alpha / (1.0 - r2[inside]))
    return out


def _wavetrain_fields(kind, c, k_par, k_perp):
    """Traveling-wave exact solutions with omega^2 = pi^2 c^2 (kpar^2+kperp^2)."""
    om = math.pi * c * math.sqrt(k_par**2 + k_perp**2)
    kp = k_par * math.pi
    kt = k_perp * math.pi
    if kind == "maxwell":
        def scalar(x, y, t=0.0):
            return om / c**2 * np.cos(kt * y) * np.sin(kp * x - om * t)

        def vector(x, y, t=0.0):
            ex = -kt * np.sin(kt * y) * np.cos(kp * x - om * t)
            ey = kp * np.cos(kt * y) * np.sin(kp * x - om * t)
            return np.stack([ex, ey], axis=-1)
    else:
        def scalar(x, y, t=0.0):
            return om / c**2 * np.sin(kt * y - om * t) * np.cos(kp * x)

        def vector(x, y, t=0.0):
            ux = kp * np.cos(kt * y - om * t) * np.sin(kp * x)
            uy = kt * np.sin(kt * y - om * t) * np.cos(kp * x)
            return np.stack([ux, uy], axis=-1)
    return om, scalar, vector


def _rotation(t, xc=0.5, yc=0.5):
    ct, st = np.cos(t), np.sin(t)

    def rot(x, y):
        dx, dy = x - xc, y - yc
        return xc + ct * dx - st * dy, yc + st * dx + ct * dy

    return ct, st, rot


CASE_NAMES = (
    "maxwell_stationary", "maxwell_wavetrain", "maxwell_wavetrain_plus_vortex",
    "wave_stationary", "wave_wavetrain", "wave_wavetrain_plus_vortex",
    "induction_rotating_loop", "induction_discontinuous_loop",
)


def make_test_case(name, **overrides):
    """Construct one of the benchmark cases with its standard parameters.

    Recognized overrides: t_final, and the case parameters named below
    (c, r0, K0, alpha, xc, yc, k_par, k_perp).
    """
    if name not in CASE_NAMES:
        raise SystemError(f"unknown test case {name!r}")

    if name.startswith(("maxwell", "wave")):
        kind = "maxwell" if name.startswith("maxwell") else "wave"
        c = float(overrides.pop("c", 1.0))
        system = SystemDef(kind=kind, c=c)

        if name.endswith("stationary"):
            p = dict(r0=0.15, xc=0.5, yc=0.5)
            p.update({k: overrides.pop(k) for k in list(overrides)
                      if k in p})
            t_final = float(overrides.pop("t_final", 3.0))
            _check_exhausted(overrides, name)

            if kind == "maxwell":
                def vec(x, y, t=0.0):
                    xb, yb, g = _gaussian_bump(x, y, p["xc"], p["yc"], p["r0"])
                    return np.stack([xb * g, yb * g], axis=-1)
            else:
                def vec(x, y, t=0.0):
                    xb, yb, g = _gaussian_bump(x, y, p["xc"], p["yc"], p["r0"])
                    return np.stack([-yb * g, xb * g], axis=-1)

            zero = lambda x, y, t=0.0: np.zeros_like(x)
            return TestCase(
                name=name, system=system, t_final=t_final,
                scalar_init=zero, vector_init=vec,
                scalar_exact=zero, vector_exact=vec, params=dict(p, c=c))

        k_par = float(overrides.pop("k_par", 2.0))
        k_perp = float(overrides.pop("k_perp", 2.0))
        om, scalar, vector = _wavetrain_fields(kind, c, k_par, k_perp)
        t_final = float(overrides.pop("t_final", 1.0))
        params = dict(c=c, k_par=k_par, k_perp=k_perp, omega=om)

        if name.endswith("plus_vortex"):
            vp = dict(K0=100.0, alpha=4.0, xc=0.5, yc=0.5, r0=0.35)
            vp.update({k: overrides.pop(k) for k in list(overrides)
                       if k in vp})
            _check_exhausted(overrides, name)
            if kind == "maxwell":
                def addon(x, y):
                    xb, yb, amp = _cutoff_vortex(x, y, **vp)
                    return np.stack([xb * amp, yb * amp], axis=-1)
            else:
                def addon(x, y):
                    xb, yb, amp = _cutoff_vortex(x, y, **vp)
                    return np.stack([-yb * amp, xb * amp], axis=-1)

            def vec_full(x, y, t=0.0):
                return vector(x, y, t) + addon(x, y)

            params.update(vp)
            return TestCase(
                name=name, system=system, t_final=t_final,
                scalar_init=scalar, vector_init=vec_full,
                scalar_exact=scalar, vector_exact=vec_full, params=params)

        _check_exhausted(overrides, name)
        return TestCase(
            name=name, system=system, t_final=t_final,
            scalar_init=scalar, vector_init=vector,
            scalar_exact=scalar, vector_exact=vector, params=params)

    if name == "induction_rotating_loop":
        p = dict(K0=2.0, alpha=4.0, xc=0.5, yc=0.75, r0=0.125)
        p.update({k: overrides.pop(k) for k in list(overrides) if k in p})
        t_final = float(overrides.pop("t_final", math.pi))
        _check_exhausted(overrides, name)
        # counterclockwise rigid field with angular velocity 1; the loop
        # pattern of the exact solution below then rotates clockwise
        # (the physical velocity is -b), and the pair satisfies the
        # induction equation exactly (checked by finite differences)
        b_field = lambda x, y: np.stack([0.5 - y, x - 0.5], axis=-1)
        system = SystemDef(kind="induction", b_field=b_field)

        def u0(x, y):
            xb, yb, amp = _cutoff_vortex(x, y, **p)
            return np.stack([-yb * amp, xb * amp], axis=-1)

        def exact(x, y, t=0.0):
            ct, st, rot = _rotation(t)
            xr, yr = rot(x, y)
            v = u0(xr, yr)
            vx = ct * v[..., 0] + st * v[..., 1]
            vy = -st * v[..., 0] + ct * v[..., 1]
            return np.stack([vx, vy], axis=-1)

        return TestCase(
            name=name, system=system, t_final=t_final,
            vector_init=u0, vector_exact=exact,
            potential=lambda x, y: _cutoff_potential(x, y, **p),
            params=dict(p))

    # induction_discontinuous_loop
    p = dict(K0=0.01, xc=0.5, yc=0.5, r0=0.3)
    p.update({k: overrides.pop(k) for k in list(overrides) if k in p})
    t_final = float(overrides.pop("t_final", 2.0))
    _check_exhausted(overrides, name)
    b_field = lambda x, y: np.stack([np.ones_like(x), np.ones_like(y)],
                                    axis=-1)
    system = SystemDef(kind="induction", b_field=b_field)
    K0, xc, yc, r0 = p["K0"], p["xc"], p["yc"], p["r0"]

    def u0(x, y):
        xb = (x - xc) / r0
        yb = (y - yc) / r0
        inside = (xb**2 + yb**2) < 1.0
        return np.stack([np.where(inside, -K0 * yb, 0.0),
                         np.where(inside, K0 * xb, 0.0)], axis=-1)

    def pot(x, y):
        r2 = ((x - xc)**2 + (y - yc)**2) / r0**2
        return 0.5 * K0 * r0 * np.minimum(r2, 1.0)

    def exact(x, y, t=0.0):
        # the loop pattern travels along -b for this sign convention
        return u0(x + t, y + t)

    return TestCase(
        name=name, system=system, t_final=t_final,
        vector_init=u0, vector_exact=exact, potential=pot, params=dict(p))


def _check_exhausted(overrides, name):
    unknown = set(overrides) - {"t_final"}
    if unknown:
        raise SystemError(f"unknown parameters for {name}: {sorted(unknown)}")
