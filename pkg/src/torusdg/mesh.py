"""Periodic torus meshes with globally oriented sides.

A mesh lives on the flat torus [0, Lx) x [0, Ly). Vertices are stored once;
cells reference them together with integer lattice shifts so that every
cell owns an unwrapped local frame in which its geometry (areas, normals,
side endpoints) is computed without seam artifacts.

Every side has exactly two incident cells. The cell with the smaller index
is the *left* cell, the side normal ``n`` points out of it, and jumps are
always left value minus right value.
"""

from dataclasses import dataclass, field

import numpy as np

_ORIENT_TOL = 1e-14


class MeshError(Exception):
    """Base class for mesh construction failures."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""


class MeshTopologyError(MeshError):
    """Side incidence or periodic pairing is broken."""


class MeshOrientationError(MeshError):
    """A cell is inverted (clockwise) or non-convex."""


@dataclass
class Side:
    """One oriented interior side of the torus mesh.

    ``a`` and ``b`` are the endpoint coordinates in the left cell's
    unwrapped frame; ``right_shift`` translates right-frame coordinates
    into the left frame (as an integer number of torus periods).
    """

    v0: int
    v1: int
    left_cell: int
    right_cell: int
    left_edge: int
    right_edge: int
    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray
    length: float
    right_shift: np.ndarray


@dataclass
class Mesh:
    """Periodic 2D mesh made of triangles or quadrangles (not mixed checks
    are deliberate: generators emit one kind, loaders accept either).

    Attributes
    ----------
    torus_lengths : (Lx, Ly)
    vertices : ndarray (nv, 2), coordinates in [0, Lx) x [0, Ly)
    cells : list of vertex-index tuples, counterclockwise
    cell_shifts : list of int arrays (nvert, 2); corner coordinates are
        ``vertices[v] + shift * (Lx, Ly)``
    sides : list of Side
    cell_to_sides : per cell, list of (side index, +1 if left else -1)
    """

    torus_lengths: tuple
    vertices: np.ndarray
    cells: list
    cell_shifts: list
    sides: list = field(default_factory=list)
    cell_to_sides: list = field(default_factory=list)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_sides(self):
        return len(self.sides)

    def cell_corners(self, c):
        """Unwrapped corner coordinates of cell ``c``, shape (nvert, 2)."""
        L = np.asarray(self.torus_lengths)
        idx = np.asarray(self.cells[c])
        return self.vertices[idx] + self.cell_shifts[c] * L

    def wrap(self, points):
        """Canonical torus coordinates in [0, Lx) x [0, Ly).

        Analytic data (initial conditions, advecting fields, exact
        solutions) is always evaluated at wrapped coordinates, so cells
        whose local frame pokes past the fundamental domain still see
        single-valued data."""
        L = np.asarray(self.torus_lengths)
        return points - np.floor(points / L) * L

    def cell_area(self, c):
        return _signed_area(self.cell_corners(c))

    def cell_centroid(self, c):
        return _polygon_centroid(self.cell_corners(c))

    def areas(self):
        return np.array([self.cell_area(c) for c in range(self.n_cells)])

    def h_min(self):
        """Square root of the smallest cell area."""
        return float(np.sqrt(self.areas().min()))


def _signed_area(corners):
    x, y = corners[:, 0], corners[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon_centroid(corners):
    x, y = corners[:, 0], corners[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _is_convex_ccw(corners):
    n = len(corners)
    for i in range(n):
        e1 = corners[(i + 1) % n] - corners[i]
        e2 = corners[(i + 2) % n] - corners[(i + 1) % n]
        if e1[0] * e2[1] - e1[1] * e2[0] <= 0:
            return False
    return True


def _half_edge_key(va, sa, vb, sb):
    """Canonical key for a physical side, invariant under endpoint swap
    and whole-lattice translation."""
    d = (sb[0] - sa[0], sb[1] - sa[1])
    k1 = (va, vb, d)
    k2 = (vb, va, (-d[0], -d[1]))
    return min(k1, k2)


def _derive_sides(mesh):
    """Pair half-edges into sides; fills mesh.sides and mesh.cell_to_sides.

    Raises MeshTopologyError when a side does not have exactly two
    incident cells or pairs a cell with itself.
    """
    L = np.asarray(mesh.torus_lengths, dtype=float)
    buckets = {}
    for c, cell in enumerate(mesh.cells):
        shifts = mesh.cell_shifts[c]
        nv = len(cell)
        for e in range(nv):
            va, vb = cell[e], cell[(e + 1) % nv]
            sa, sb = tuple(shifts[e]), tuple(shifts[(e + 1) % nv])
            key = _half_edge_key(va, sa, vb, sb)
            buckets.setdefault(key, []).append((c, e))

    bad = {k: v for k, v in buckets.items() if len(v) != 2}
    if bad:
        k, v = next(iter(bad.items()))
        raise MeshTopologyError(
            f"side {k} has {len(v)} incident cells (expected 2)")

    mesh.sides = []
    mesh.cell_to_sides = [[] for _ in range(mesh.n_cells)]
    for key in sorted(buckets):
        (c1, e1), (c2, e2) = sorted(buckets[key])
        if c1 == c2:
            raise MeshTopologyError(
                f"cell {c1} is adjacent to itself across side {key}")
        left, right = c1, c2
        le, re = e1, e2
        lcell, lsh = mesh.cells[left], mesh.cell_shifts[left]
        nvl = len(lcell)
        va, vb = lcell[le], lcell[(le + 1) % nvl]
        sa = np.asarray(lsh[le], dtype=float)
        sb = np.asarray(lsh[(le + 1) % nvl], dtype=float)
        a = mesh.vertices[va] + sa * L
        b = mesh.vertices[vb] + sb * L
        t = b - a
        length = float(np.hypot(t[0], t[1]))
        normal = np.array([t[1], -t[0]]) / length
        # Right half-edge runs vb -> va in the right cell's own frame.
        rcell, rsh = mesh.cells[right], mesh.cell_shifts[right]
        nvr = len(rcell)
        if rcell[re] != vb or rcell[(re + 1) % nvr] != va:
            raise MeshTopologyError(
                f"paired half-edges disagree on side {key}")
        shift_lr = sb - np.asarray(rsh[re], dtype=float)
        side = Side(
            v0=va, v1=vb, left_cell=left, right_cell=right,
            left_edge=le, right_edge=re, a=a, b=b, normal=normal,
            length=length, right_shift=shift_lr.astype(int),
        )
        idx = len(mesh.sides)
        mesh.sides.append(side)
        mesh.cell_to_sides[left].append((idx, +1))
        mesh.cell_to_sides[right].append((idx, -1))
    return mesh


def _check_cells(mesh, require_convex_quads=True):
    for c in range(mesh.n_cells):
        corners = mesh.cell_corners(c)
        if _signed_area(corners) <= 0:
            raise MeshOrientationError(f"inverted cell {c} (signed area <= 0)")
        if len(corners) == 4 and require_convex_quads:
            if not _is_convex_ccw(corners):
                raise MeshOrientationError(f"non-convex quad cell {c}")


def build_mesh(torus_lengths, vertices, cells, cell_shifts,
               require_convex_quads=True):
    """Assemble a Mesh from explicit per-cell unwrap shifts.

    Cell frames are canonicalized so the first vertex of every loop has
    shift (0, 0); frames then agree between generators and the loader.
    """
    mesh = Mesh(
        torus_lengths=tuple(float(t) for t in torus_lengths),
        vertices=np.asarray(vertices, dtype=float),
        cells=[tuple(int(v) for v in cell) for cell in cells],
        cell_shifts=[np.asarray(s, dtype=int) - np.asarray(s, dtype=int)[0]
                     for s in cell_shifts],
    )
    _check_cells(mesh, require_convex_quads)
    _derive_sides(mesh)
    return mesh


def generate_cartesian(nx, ny, Lx=1.0, Ly=1.0):
    """Uniform nx x ny grid of axis-aligned square cells on the torus."""
    if nx < 2 or ny < 2:
        raise MeshError(f"need nx, ny >= 2 for periodic pairing, "
                        f"got ({nx}, {ny})")
    hx, hy = Lx / nx, Ly / ny
    xs = np.arange(nx) * hx
    ys = np.arange(ny) * hy
    vid = lambda i, j: (i % nx) + nx * (j % ny)
    verts = np.array([[xs[i % nx], ys[j % ny]]
                      for j in range(ny) for i in range(nx)])
    cells, shifts = [], []
    for j in range(ny):
        for i in range(nx):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            cells.append(tuple(vid(ii, jj) for ii, jj in corners))
            shifts.append(np.array([[ii // nx, jj // ny]
                                    for ii, jj in corners], dtype=int))
    return build_mesh((Lx, Ly), verts, cells, shifts)


def generate_perturbed_quad(nx, ny, amplitude, seed, Lx=1.0, Ly=1.0):
    """Cartesian mesh whose vertices are jittered by a seeded uniform
    displacement of size amplitude * h per coordinate.

    The displacement is applied to the stored vertex, so all periodic
    copies move together. Vertices on the two wrap lines keep their
    transverse coordinate (the periodic seam stays a pair of matched
    straight lines, as in practical periodic unstructured meshes).
    Cells must stay convex and positively oriented.
    """
    if not 0 <= amplitude < 0.5:
        raise MeshError(f"amplitude must be in [0, 0.5), got {amplitude}")
    base = generate_cartesian(nx, ny, Lx, Ly)
    rng = np.random.default_rng(seed)
    disp = rng.uniform(-1.0, 1.0, size=base.vertices.shape)
    disp[:, 0] *= amplitude * Lx / nx
    disp[:, 1] *= amplitude * Ly / ny
    idx = np.arange(nx * ny)
    disp[idx % nx == 0, 0] = 0.0    # x = 0 seam column
    disp[idx // nx == 0, 1] = 0.0   # y = 0 seam row
    moved = base.vertices + disp
    # wrap back into [0, L) and fold the wrap count into the cell shifts
    L = np.array([Lx, Ly])
    wrap = np.floor(moved / L).astype(int)
    verts = moved - wrap * L
    shifts = [s + wrap[list(cell)]
              for cell, s in zip(base.cells, base.cell_shifts)]
    return build_mesh((Lx, Ly), verts, base.cells, shifts)


def split_into_triangles(mesh, seed):
    """Split every quad along one pseudo-randomly chosen diagonal."""
    for cell in mesh.cells:
        if len(cell) != 4:
            raise MeshError("split_into_triangles expects a quad mesh")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, 2, size=mesh.n_cells)
    cells, shifts = [], []
    for c, cell in enumerate(mesh.cells):
        s = mesh.cell_shifts[c]
        if pick[c] == 0:  # diagonal v0-v2
            tri_ids = [(0, 1, 2), (0, 2, 3)]
        else:             # diagonal v1-v3
            tri_ids = [(0, 1, 3), (1, 2, 3)]
        for ids in tri_ids:
            cells.append(tuple(cell[i] for i in ids))
            shifts.append(s[list(ids)])
    return build_mesh(mesh.torus_lengths, mesh.vertices, cells, shifts)


def _unwrap_candidates(vertices, cell, L):
    """All admissible per-vertex lattice shifts for one cell from a file.

    Walks the vertex loop with nearest-image unwrapping. Steps of exactly
    half a period are ambiguous, so every combination of ambiguous choices
    is enumerated; positively oriented candidates whose edges all stay
    within half a period survive. Candidates are ordered so the generator
    convention (small, nonnegative shifts) comes first.
    """
    n = len(cell)

    def walk(bits):
        shifts = [np.zeros(2)]
        amb = 0
        for k in range(1, n):
            prev = vertices[cell[k - 1]] + shifts[k - 1] * L
            cur = vertices[cell[k]]
            s = np.zeros(2)
            for d in range(2):
                delta = prev[d] - cur[d]
                sd = np.floor(delta / L[d] + 0.5)
                if abs(abs(delta - sd * L[d]) - L[d] / 2) < 1e-9 * L[d]:
                    if bits >> amb & 1:
                        sd += 1.0 if delta - sd * L[d] > 0 else -1.0
                    amb += 1
                s[d] = sd
            shifts.append(s)
        return np.array(shifts), amb

    _, n_amb = walk(0)
    valid = {}
    for bits in range(1 << n_amb):
        alt, _ = walk(bits)
        corners = vertices[list(cell)] + alt * L
        edges = np.roll(corners, -1, axis=0) - corners
        if np.any(np.abs(edges) > L / 2 + 1e-9 * L):
            continue
        if _signed_area(corners) <= 0:
            continue
        if len(cell) == 4 and not _is_convex_ccw(corners):
            continue
        key = tuple(map(tuple, alt.astype(int)))
        valid[key] = alt.astype(int)

    def preference(key):
        flat = [x for pair in key for x in pair]
        return (sum(abs(x) for x in flat),
                sum(1 for x in flat if x < 0), flat)

    return [valid[k] for k in sorted(valid, key=preference)]


def _resolve_unwraps(torus_lengths, vertices, cells):
    """Pick one unwrap per cell so that side pairing succeeds.

    Non-degenerate meshes give a single candidate per cell. Exactly
    half-period cells (2-cell-wide grids) can be locally ambiguous, so a
    small backtracking search over the ambiguous cells repairs them.
    """
    L = np.asarray(torus_lengths, dtype=float)
    cand = []
    for cell in cells:
        options = _unwrap_candidates(vertices, cell, L)
        if not options:
            raise MeshOrientationError(
                f"inverted cell or no valid periodic unwrap for cell {cell}")
        cand.append(options)

    free = [i for i, opts in enumerate(cand) if len(opts) > 1]
    choice = [0] * len(cells)

    def attempt():
        shifts = [cand[i][choice[i]] for i in range(len(cells))]
        mesh = Mesh(torus_lengths=tuple(float(t) for t in torus_lengths),
                    vertices=np.asarray(vertices, dtype=float),
                    cells=[tuple(cell) for cell in cells],
                    cell_shifts=shifts)
        _derive_sides(mesh)
        return shifts

    def score(shifts):
        flat = np.concatenate([s.ravel() for s in shifts])
        return (int(np.sum(flat < 0)), int(np.sum(np.abs(flat))),
                tuple(flat.tolist()))

    budget = 4096
    err = None
    consistent = []
    while True:
        try:
            shifts = attempt()
            consistent.append((score(shifts), shifts))
        except MeshTopologyError as exc:
            err = exc
        if not free:
            break
        # odometer over the assignments of the ambiguous cells
        budget -= 1
        if budget <= 0:
            break
        k = 0
        while k < len(free):
            i = free[k]
            choice[i] += 1
            if choice[i] < len(cand[i]):
                break
            choice[i] = 0
            k += 1
        if k == len(free):
            break
    if not consistent:
        raise err
    # generator convention: smallest, nonnegative shifts win
    consistent.sort(key=lambda pair: pair[0])
    return consistent[0][1]


def load_mesh(text):
    """Parse the line-oriented mesh format (see dump_mesh) into a Mesh."""
    lines = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((ln, stripped))
    it = iter(lines)

    def next_line(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}")

    ln, header = next_line("header")
    if header != "meshformat 1":
        raise MeshFormatError(f"line {ln}: expected 'meshformat 1'")
    ln, torus = next_line("torus line")
    parts = torus.split()
    if len(parts) != 3 or parts[0] != "torus":
        raise MeshFormatError(f"line {ln}: expected 'torus <Lx> <Ly>'")
    try:
        Lx, Ly = float(parts[1]), float(parts[2])
    except ValueError:
        raise MeshFormatError(f"line {ln}: bad torus lengths")
    if Lx <= 0 or Ly <= 0:
        raise MeshFormatError(f"line {ln}: torus lengths must be positive")

    ln, vhead = next_line("vertex count")
    parts = vhead.split()
    if len(parts) != 2 or parts[0] != "vertices":
        raise MeshFormatError(f"line {ln}: expected 'vertices <N>'")
    try:
        nv = int(parts[1])
    except ValueError:
        raise MeshFormatError(f"line {ln}: bad vertex count")
    verts = np.empty((nv, 2))
    for i in range(nv):
        ln, row = next_line("vertex")
        parts = row.split()
        if len(parts) != 2:
            raise MeshFormatError(f"line {ln}: expected '<x> <y>'")
        try:
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(f"line {ln}: bad vertex coordinates")
    if nv and (np.any(verts < -1e-12) or np.any(verts[:, 0] >= Lx)
               or np.any(verts[:, 1] >= Ly)):
        raise MeshFormatError("vertex coordinates outside [0,Lx)x[0,Ly)")

    ln, chead = next_line("cell count")
    parts = chead.split()
    if len(parts) != 2 or parts[0] != "cells":
        raise MeshFormatError(f"line {ln}: expected 'cells <M>'")
    try:
        nc = int(parts[1])
    except ValueError:
        raise MeshFormatError(f"line {ln}: bad cell count")
    cells = []
    for _ in range(nc):
        ln, row = next_line("cell")
        parts = row.split()
        sizes = {"tri": 3, "quad": 4}
        if not parts or parts[0] not in sizes:
            raise MeshFormatError(f"line {ln}: expected 'tri ...' or 'quad ...'")
        if len(parts) != 1 + sizes[parts[0]]:
            raise MeshFormatError(
                f"line {ln}: {parts[0]} needs {sizes[parts[0]]} vertices")
        try:
            ids = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise MeshFormatError(f"line {ln}: bad vertex index")
        if any(i < 0 or i >= nv for i in ids):
            raise MeshFormatError(f"line {ln}: vertex index out of range")
        cells.append(ids)

    shifts = _resolve_unwraps((Lx, Ly), verts, cells)
    return build_mesh((Lx, Ly), verts, cells, shifts)


def dump_mesh(mesh):
    """Serialize to the mesh text format. Sides are derived, never written."""
    out = ["meshformat 1",
           f"torus {float(mesh.torus_lengths[0])!r} "
           f"{float(mesh.torus_lengths[1])!r}",
           f"vertices {mesh.n_vertices}"]
    out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    out.append(f"cells {mesh.n_cells}")
    kind = {3: "tri", 4: "quad"}
    out += [f"{kind[len(c)]} " + " ".join(str(v) for v in c)
            for c in mesh.cells]
    return "\n".join(out) + "\n"


@dataclass
class ValidationReport:
    n_vertices: int
    n_sides: int
    n_cells: int
    euler_characteristic: int
    min_area: float
    max_area: float
    h_min: float
    total_area: float
    failures: list

    @property
    def ok(self):
        return not self.failures


def validate(mesh):
    """Re-check mesh invariants independently of the construction path."""
    failures = []
    L = np.asarray(mesh.torus_lengths)

    # Incidence recomputed from the raw cells (catches hand-built breakage).
    counts = {}
    for c, cell in enumerate(mesh.cells):
        shifts = mesh.cell_shifts[c]
        n = len(cell)
        for e in range(n):
            key = _half_edge_key(cell[e], tuple(shifts[e]),
                                 cell[(e + 1) % n], tuple(shifts[(e + 1) % n]))
            counts[key] = counts.get(key, 0) + 1
    bad = {k: v for k, v in counts.items() if v != 2}
    for k, v in bad.items():
        failures.append(f"incidence: side {k} has {v} incident cells")

    areas = mesh.areas()
    for c, a in enumerate(areas):
        if a <= 0:
            failures.append(f"orientation: cell {c} has signed area {a}")

    total = float(np.sum(areas))
    if abs(total - L[0] * L[1]) > 1e-12 * L[0] * L[1]:
        failures.append(f"area: cells cover {total}, torus is {L[0] * L[1]}")

    euler = mesh.n_vertices - len(counts) + mesh.n_cells
    if euler != 0:
        failures.append(f"euler: V - E + F = {euler}, expected 0")

    for i, s in enumerate(mesh.sides):
        if abs(np.hypot(*s.normal) - 1.0) > _ORIENT_TOL:
            failures.append(f"side {i}: non-unit normal")
        t = s.b - s.a
        if abs(np.dot(s.normal, t)) > _ORIENT_TOL * s.length:
            failures.append(f"side {i}: normal not orthogonal to side")
        cl = mesh.cell_centroid(s.left_cell)
        cr = mesh.cell_centroid(s.right_cell) + s.right_shift * L
        if np.dot(s.normal, cr - cl) <= 0:
            failures.append(f"side {i}: normal does not point left -> right")

    return ValidationReport(
        n_vertices=mesh.n_vertices, n_sides=len(counts),
        n_cells=mesh.n_cells, euler_characteristic=euler,
        min_area=float(areas.min()) if len(areas) else 0.0,
        max_area=float(areas.max()) if len(areas) else 0.0,
        h_min=float(np.sqrt(areas.min())) if len(areas) else 0.0,
        total_area=total, failures=failures,
    )
