"""Configuration-driven command line interface.

Subcommands: ``mesh-gen``, ``run``, ``convergence``, ``properties``.
Configs are key=value lines with '#' comments; every run writes a
manifest sufficient to reproduce it bit-identically.

Heavy imports stay inside the command functions so that ``--threads``
can cap the BLAS pool before numpy is first loaded.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field

__version__ = "0.1.0"

_SPACE_NAMES = {
    "dBdiv": "vector_div_optimal",
    "dBcurl": "vector_curl_optimal",
    "dQ": "vector_tensor",
    "dP": "vector_tensor",
    "tensor": "vector_tensor",
}
_FLUXES = ("godunov", "lax_friedrich", "lf_normal", "lf_tangential")
_MESH_KINDS = ("cartesian", "perturbed", "triangle", "file")
_CASES = (
    "maxwell_stationary", "maxwell_wavetrain", "maxwell_wavetrain_plus_vortex",
    "wave_stationary", "wave_wavetrain", "wave_wavetrain_plus_vortex",
    "induction_rotating_loop", "induction_discontinuous_loop",
)
_CFL_TABLE = {0: 0.5, 1: 0.33, 2: 0.2}

_KEYS = ("case", "mesh.kind", "mesh.nx", "mesh.ny", "mesh.file",
         "mesh.perturb", "mesh.seed", "space", "degree", "flux",
         "rk_order", "cfl", "t_final", "stride", "init", "out")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str
    mesh_kind: str = "cartesian"
    mesh_nx: tuple = (10,)
    mesh_ny: tuple = ()
    mesh_file: str = ""
    mesh_perturb: float = 0.2
    mesh_seed: int = 42
    space: str = "dBcurl"
    degree: int = 1
    flux: str = "godunov"
    rk_order: int = 0              # 0: default degree + 1
    cfl: float = 0.0               # 0: default table value
    t_final: float = -1.0          # <0: case default
    stride: int = 1
    init: str = "default"
    out: str = "out"
    warnings: list = field(default_factory=list)

    def resolved_rk_order(self):
        return self.rk_order if self.rk_order else self.degree + 1

    def resolved_cfl(self):
        return self.cfl if self.cfl else _CFL_TABLE[self.degree]


def parse_config(text):
    """Validate a key=value config and apply the standard defaults."""
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        values[key] = val

    if "case" not in values:
        raise ConfigError("missing required key 'case'")
    case = values.pop("case")
    if case not in _CASES:
        raise ConfigError(f"unknown case {case!r}")
    cfg = RunConfig(case=case)

    def intval(key, val, lo=None, hi=None):
        try:
            n = int(val)
        except ValueError:
            raise ConfigError(f"{key}: expected integer, got {val!r}")
        if (lo is not None and n < lo) or (hi is not None and n > hi):
            raise ConfigError(f"{key}: {n} outside [{lo}, {hi}]")
        return n

    def floatval(key, val):
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"{key}: expected number, got {val!r}")

    for key, val in values.items():
        if key == "mesh.kind":
            if val not in _MESH_KINDS:
                raise ConfigError(f"mesh.kind: unknown kind {val!r}")
            cfg.mesh_kind = val
        elif key == "mesh.nx":
            cfg.mesh_nx = tuple(intval("mesh.nx", v, lo=2)
                                for v in val.split(","))
        elif key == "mesh.ny":
            cfg.mesh_ny = tuple(intval("mesh.ny", v, lo=2)
                                for v in val.split(","))
        elif key == "mesh.file":
            cfg.mesh_file = val
        elif key == "mesh.perturb":
            cfg.mesh_perturb = floatval(key, val)
        elif key == "mesh.seed":
            cfg.mesh_seed = intval(key, val)
        elif key == "space":
            if val not in _SPACE_NAMES:
                raise ConfigError(f"space: unknown space {val!r} "
                                  f"(choose from {sorted(_SPACE_NAMES)})")
            cfg.space = val
        elif key == "degree":
            cfg.degree = intval(key, val, lo=0, hi=2)
        elif key == "flux":
            if val not in _FLUXES:
                raise ConfigError(f"flux: unknown flux {val!r}")
            cfg.flux = val
        elif key == "rk_order":
            cfg.rk_order = intval(key, val, lo=1, hi=3)
        elif key == "cfl":
            cfg.cfl = floatval(key, val)
        elif key == "t_final":
            cfg.t_final = floatval(key, val)
        elif key == "stride":
            cfg.stride = intval(key, val, lo=1)
        elif key == "init":
            if val not in ("default", "l2", "divfree"):
                raise ConfigError(f"init: unknown mode {val!r}")
            cfg.init = val
        elif key == "out":
            cfg.out = val

    # physically wrong flux-direction pairings are experiments, not errors
    preserving = {"wave": ("godunov", "lf_normal"),
                  "maxwell": ("godunov", "lf_tangential"),
                  "induction": ("godunov", "lf_tangential")}
    kind = case.split("_", 1)[0]
    if cfg.flux not in preserving[kind] + ("lax_friedrich",):
        cfg.warnings.append(
            f"flux {cfg.flux!r} diffuses in the wrong direction for "
            f"{kind!r}: the preserved constraint will drift")
    if cfg.flux == "lax_friedrich":
        cfg.warnings.append(
            "plain Lax-Friedrichs diffusion is not direction-restricted: "
            "the preserved constraint will drift")
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _build_mesh(cfg, nx=None):
    from .mesh import (generate_cartesian, generate_perturbed_quad,
                       load_mesh, split_into_triangles)
    nx = nx if nx is not None else cfg.mesh_nx[0]
    ny = cfg.mesh_ny[0] if cfg.mesh_ny else nx
    if cfg.mesh_kind == "cartesian":
        return generate_cartesian(nx, ny)
    if cfg.mesh_kind == "perturbed":
        return generate_perturbed_quad(nx, ny, cfg.mesh_perturb, cfg.mesh_seed)
    if cfg.mesh_kind == "triangle":
        quad = generate_perturbed_quad(nx, ny, cfg.mesh_perturb, cfg.mesh_seed)
        return split_into_triangles(quad, cfg.mesh_seed)
    with open(cfg.mesh_file) as fh:
        return load_mesh(fh.read())


def _build_spaces(cfg, mesh):
    from .solver import make_case_spaces
    from .spaces import SpaceFamily
    fam = SpaceFamily(_SPACE_NAMES[cfg.space])
    return make_case_spaces(mesh, cfg.degree, vector_family=fam)


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, str) else _fmt(c)
                              for c in row) + "\n")


def _write_manifest(path, cfg, extra):
    lines = [f"torusdg {__version__}"]
    pairs = [("case", cfg.case), ("mesh.kind", cfg.mesh_kind),
             ("mesh.nx", ",".join(str(n) for n in cfg.mesh_nx)),
             ("mesh.ny", ",".join(str(n) for n in cfg.mesh_ny)),
             ("mesh.file", cfg.mesh_file),
             ("mesh.perturb", cfg.mesh_perturb), ("mesh.seed", cfg.mesh_seed),
             ("space", cfg.space), ("degree", cfg.degree),
             ("flux", cfg.flux), ("rk_order", cfg.resolved_rk_order()),
             ("cfl", cfg.resolved_cfl()), ("t_final", cfg.t_final),
             ("stride", cfg.stride), ("init", cfg.init), ("out", cfg.out)]
    lines += [f"{k}={v}" for k, v in pairs]
    lines += [f"{k}={v}" for k, v in extra.items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_vtk(path, state):
    """Legacy ASCII point-sampled output: every cell contributes its
    volume quadrature points as vertices with the field values there."""
    import numpy as np
    vec_space = state.unknowns["vector"].space
    pts = vec_space.geom.points.reshape(-1, 2)
    n = len(pts)
    lines = ["# vtk DataFile Version 3.0",
             "torusdg cell-sampled fields", "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in pts]
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    lines.append(f"POINT_DATA {n}")
    uq = np.einsum("cqid,ci->cqd", vec_space.tables["val"],
                   vec_space.gather(state.unknowns["vector"].coeffs))
    uq = uq.reshape(-1, 2)
    lines.append("VECTORS vector double")
    lines += [f"{_fmt(a)} {_fmt(b)} 0.0" for a, b in uq]
    if "scalar" in state.unknowns:
        sp = state.unknowns["scalar"].space
        pq = np.einsum("cqi,ci->cq", sp.tables["val"],
                       sp.gather(state.unknowns["scalar"].coeffs)).ravel()
        lines.append("SCALARS scalar double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_fmt(v) for v in pq]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_mesh_gen(args):
    cfg = _config_from_args(args)
    from .mesh import dump_mesh, validate
    mesh = _build_mesh(cfg)
    rep = validate(mesh)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "mesh.txt")
    with open(path, "w") as fh:
        fh.write(dump_mesh(mesh))
    print(f"wrote {path}: {rep.n_cells} cells, {rep.n_sides} sides, "
          f"h_min={rep.h_min:.6g}, ok={rep.ok}")
    return 0 if rep.ok else 1


def cmd_run(args):
    cfg = _config_from_args(args)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    from .solver import ProbeSchedule, TimeIntegrator, run_case
    from .systems import FluxFamily, FluxSpec, make_test_case
    mesh = _build_mesh(cfg)
    case = make_test_case(cfg.case, **({} if cfg.t_final < 0
                                       else {"t_final": cfg.t_final}))
    spaces = _build_spaces(cfg, mesh)
    integ = TimeIntegrator(order=cfg.resolved_rk_order(),
                           cfl=cfg.resolved_cfl())
    res = run_case(case, mesh, spaces, FluxSpec(FluxFamily(cfg.flux)),
                   integ, probes=ProbeSchedule(stride=cfg.stride),
                   init=cfg.init)
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "drift.csv"), ["t", "drift"],
               zip(res.times, res.drift))
    _write_csv(os.path.join(cfg.out, "energy.csv"), ["t", "energy_ratio"],
               zip(res.times, res.energy))
    _write_csv(os.path.join(cfg.out, "errors.csv"), ["variable", "l2_error"],
               [(k, v) for k, v in sorted(res.errors.items())])
    _write_vtk(os.path.join(cfg.out, "fields.vtk"), res.state)
    _write_manifest(os.path.join(cfg.out, "manifest.txt"), cfg,
                    {"n_steps": res.n_steps, "dt": _fmt(res.dt),
                     "drift_max": _fmt(res.drift.max() if len(res.drift) else 0.0)})
    print(f"{cfg.case}: {res.n_steps} steps, dt={res.dt:.6g}, "
          f"max drift={res.drift.max() if len(res.drift) else 0.0:.3e}")
    return 0


def cmd_convergence(args):
    cfg = _config_from_args(args)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if len(cfg.mesh_nx) < 2:
        raise ConfigError("convergence needs mesh.nx=<n1>,<n2>,... ladder")
    from .diagnostics import convergence_table
    from .solver import ProbeSchedule, TimeIntegrator, run_case
    from .systems import FluxFamily, FluxSpec, make_test_case
    case = make_test_case(cfg.case, **({} if cfg.t_final < 0
                                       else {"t_final": cfg.t_final}))
    integ = TimeIntegrator(order=cfg.resolved_rk_order(),
                           cfl=cfg.resolved_cfl())
    errors, hs = {}, []
    for nx in cfg.mesh_nx:
        mesh = _build_mesh(cfg, nx=nx)
        spaces = _build_spaces(cfg, mesh)
        res = run_case(case, mesh, spaces, FluxSpec(FluxFamily(cfg.flux)),
                       integ, probes=ProbeSchedule(stride=10**9, drift=False,
                                                   energy=False),
                       init=cfg.init)
        hs.append(mesh.h_min())
        for name, err in res.errors.items():
            errors.setdefault(name, []).append(err)
        print(f"nx={nx}: h={hs[-1]:.6g} " +
              " ".join(f"{k}={v:.4e}" for k, v in sorted(res.errors.items())))
    tab = convergence_table(errors, hs)
    os.makedirs(cfg.out, exist_ok=True)
    header = ["h"]
    for name in sorted(errors):
        header += [f"{name}_error", f"{name}_rate"]
    rows = []
    for i, h in enumerate(tab.hs):
        row = [h]
        for name in sorted(errors):
            rate = "" if i == 0 else _fmt(tab.rates[name][i - 1])
            row += [_fmt(tab.errors[name][i]), rate]
        rows.append(row)
    rows.append(["slope"] + sum(([_fmt(tab.slopes[name]), ""]
                                 for name in sorted(errors)), []))
    _write_csv(os.path.join(cfg.out, "table.csv"), header, rows)
    _write_manifest(os.path.join(cfg.out, "manifest.txt"), cfg,
                    {f"slope_{k}": _fmt(v) for k, v in tab.slopes.items()})
    for name in sorted(errors):
        print(f"{name}: rates " +
              " ".join(f"{r:.3f}" for r in tab.rates[name]) +
              f" slope {tab.slopes[name]:.3f}")
    return 0


def cmd_properties(args):
    out = args.out or "out"
    from . import properties as props
    report = props.property_report()
    os.makedirs(out, exist_ok=True)
    rows = [(name, _fmt(measured), _fmt(threshold),
             "pass" if ok else "FAIL")
            for name, measured, threshold, ok in report]
    _write_csv(os.path.join(out, "properties.csv"),
               ["check", "measured", "threshold", "status"], rows)
    n_fail = sum(1 for *_, ok in report if not ok)
    for name, measured, threshold, ok in report:
        print(f"{'pass' if ok else 'FAIL'}  {name}: {measured:.3e} "
              f"(<= {threshold:.0e})")
    print(f"{len(report) - n_fail}/{len(report)} checks passed")
    return 0 if n_fail == 0 else 1


def _config_from_args(args):
    if not args.config:
        raise ConfigError("--config is required")
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    cfg = parse_config(text)
    if args.out:
        cfg.out = args.out
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="torusdg",
        description="Structure-preserving DG solver on periodic torus meshes")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap the BLAS/OpenMP worker count")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("mesh-gen", "run", "convergence", "properties"):
        p = sub.add_parser(name)
        p.add_argument("--config", default="")
        p.add_argument("--out", default="")
    args = parser.parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        handler = {"mesh-gen": cmd_mesh_gen, "run": cmd_run,
                   "convergence": cmd_convergence,
                   "properties": cmd_properties}[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
