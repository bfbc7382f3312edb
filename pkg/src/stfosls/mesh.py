"""Conforming simplicial meshes of space-time polytopes with tagged bisection.

Cells are stored as ordered vertex tuples ``(z_0, ..., z_n)`` with a type
``gamma in {0, ..., n-1}`` (n = d+1 is the space-time dimension).  The
refinement edge of a cell is ``z_0 z_n``; bisecting at its midpoint ``m``
produces the children

    (z_0, m, z_1, ..., z_gamma, z_{gamma+1}, ..., z_{n-1})   and
    (z_n, m, z_1, ..., z_gamma, z_{n-1}, ..., z_{gamma+1}),

both of type ``(gamma+1) mod n``.  Uniform refinement applies n rounds of
"bisect every cell once"; the built-in initial meshes are tagged so that no
conformity closure is ever triggered (each round exactly doubles the cell
count).
"""

from dataclasses import dataclass, field

import numpy as np

INITIAL = "INITIAL"
LATERAL = "LATERAL"
FINAL = "FINAL"

_TAG_NAMES = (INITIAL, LATERAL, FINAL)
TAG_INITIAL, TAG_LATERAL, TAG_FINAL = 0, 1, 2

_COINCIDENCE_TOL = 1e-12


class MeshError(Exception):
    pass


@dataclass
class SpaceTimeMesh:
    """Immutable conforming simplicial mesh of a space-time polytope."""

    dim: int                       # spatial dimension d
    vertices: np.ndarray           # (nv, d+1), coordinates (t, x_1..x_d)
    cells: np.ndarray              # (nc, d+2) ordered vertex indices
    cell_type: np.ndarray          # (nc,) bisection type gamma
    generation: np.ndarray         # (nc,) refinement level per cell
    end_time: float
    boundary_facets: np.ndarray = field(default=None)   # (nbf, d+1)
    boundary_tags: np.ndarray = field(default=None)     # (nbf,)
    # refinement bookkeeping relative to the mesh this one was refined from
    parent_cells: np.ndarray = field(default=None)      # (nc,)
    vertex_parents: np.ndarray = field(default=None)    # (nv, 2)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.cell_type = np.ascontiguousarray(self.cell_type, dtype=np.int64)
        self.generation = np.ascontiguousarray(self.generation, dtype=np.int64)
        if self.boundary_facets is None:
            bf, bt = _classify(self.vertices, self.cells, self.end_time)
            self.boundary_facets, self.boundary_tags = bf, bt
        for arr in (self.vertices, self.cells, self.cell_type, self.generation,
                    self.boundary_facets, self.boundary_tags):
            arr.setflags(write=False)

    # -- queries ---------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_volumes(self) -> np.ndarray:
        """Unsigned (d+1)-volumes of all cells."""
        v = self.vertices[self.cells]                       # (nc, d+2, d+1)
        edges = v[:, 1:, :] - v[:, :1, :]                   # (nc, d+1, d+1)
        det = np.linalg.det(edges)
        return np.abs(det) / _factorial(self.dim + 1)

    def total_volume(self) -> float:
        return float(self.cell_volumes().sum())

    def facet_tag_counts(self) -> dict:
        return {name: int(np.sum(self.boundary_tags == i))
                for i, name in enumerate(_TAG_NAMES)}

    def facets_with_tag(self, tag: str) -> np.ndarray:
        idx = _TAG_NAMES.index(tag)
        return self.boundary_facets[self.boundary_tags == idx]

    def refinement_edges(self) -> np.ndarray:
        return np.stack([self.cells[:, 0], self.cells[:, -1]], axis=1)

    # -- refinement ------------------------------------------------------

    def refine_uniform(self) -> "SpaceTimeMesh":
        """Split every cell into 2^(d+1) children by d+1 bisection rounds."""
        verts = [tuple(p) for p in self.vertices]
        cells = [tuple(c) for c in self.cells]
        types = list(self.cell_type)
        gens = list(self.generation)
        parents = list(range(len(cells)))
        vparents = [(i, i) for i in range(len(verts))]
        n = self.dim + 1
        for _ in range(n):
            cells, types, gens, parents = _bisect_round(
                verts, cells, types, gens, parents, vparents, n)
        mesh = SpaceTimeMesh(
            dim=self.dim,
            vertices=np.array(verts, dtype=float),
            cells=np.array(cells, dtype=np.int64),
            cell_type=np.array(types, dtype=np.int64),
            generation=np.array(gens, dtype=np.int64),
            end_time=self.end_time,
            parent_cells=np.array(parents, dtype=np.int64),
            vertex_parents=np.array(vparents, dtype=np.int64),
        )
        return mesh

    # -- integrity checks --------------------------------------------------

    def check_conformity(self):
        """Raise MeshError unless every facet is shared by exactly two cells
        or is a recorded boundary facet."""
        counts = {}
        for c in self.cells:
            for f in _cell_facets(c):
                counts[f] = counts.get(f, 0) + 1
        bad = [f for f, k in counts.items() if k > 2]
        if bad:
            raise MeshError(f"facet shared by >2 cells: {bad[0]}")
        single = {f for f, k in counts.items() if k == 1}
        recorded = {tuple(sorted(f)) for f in self.boundary_facets}
        if single != recorded:
            raise MeshError("boundary facets do not match single-cell facets")
        if np.any(self.cell_volumes() <= 0.0):
            raise MeshError("degenerate cell (zero volume)")

    # -- persistence -----------------------------------------------------

    def export_text(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {self.num_vertices} {self.num_cells} "
                     f"{self.boundary_facets.shape[0]}\n")
            for p in self.vertices:
                fh.write(" ".join(f"{x:.17g}" for x in p) + "\n")
            for c, g in zip(self.cells, self.cell_type):
                fh.write(" ".join(str(i) for i in c) + f" {g}\n")
            for f, t in zip(self.boundary_facets, self.boundary_tags):
                fh.write(" ".join(str(i) for i in f) + f" {_TAG_NAMES[t]}\n")


def import_text(path, end_time=None) -> SpaceTimeMesh:
    with open(path) as fh:
        toks = fh.read().split("\n")
    dim, nv, nc, nbf = (int(s) for s in toks[0].split())
    line = 1
    verts = np.array([[float(x) for x in toks[line + i].split()]
                      for i in range(nv)])
    line += nv
    rows = [[int(x) for x in toks[line + i].split()] for i in range(nc)]
    line += nc
    cells = np.array([r[:-1] for r in rows], dtype=np.int64)
    ctype = np.array([r[-1] for r in rows], dtype=np.int64)
    facets, tags = [], []
    for i in range(nbf):
        parts = toks[line + i].split()
        facets.append([int(x) for x in parts[:-1]])
        tags.append(_TAG_NAMES.index(parts[-1]))
    T = float(verts[:, 0].max()) if end_time is None else end_time
    return SpaceTimeMesh(
        dim=dim, vertices=verts, cells=cells, cell_type=ctype,
        generation=np.zeros(nc, dtype=np.int64), end_time=T,
        boundary_facets=np.array(facets, dtype=np.int64),
        boundary_tags=np.array(tags, dtype=np.int64),
    )


@dataclass(frozen=True)
class TensorGrid:
    """Tensor-product grid (time x space) for the spectral-type truth space."""

    breakpoints_t: np.ndarray
    breakpoints_x: np.ndarray
    degree: int = 3

    def __post_init__(self):
        for bp in (self.breakpoints_t, self.breakpoints_x):
            if np.any(np.diff(bp) <= 0):
                raise MeshError("breakpoints must be strictly increasing")

    @property
    def end_time(self) -> float:
        return float(self.breakpoints_t[-1])


def unit_tensor_grid(n: int, end_time: float = 1.0, degree: int = 3) -> TensorGrid:
    return TensorGrid(np.linspace(0.0, end_time, n + 1),
                      np.linspace(0.0, 1.0, n + 1), degree)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_unit_cylinder_mesh(d: int, variant: str = "control-init") -> SpaceTimeMesh:
    """Initial meshes of the unit space-time cube: 2 triangles (d=1) or 12
    tetrahedra (d=2), with bisection tags that keep uniform refinement
    closure-free."""
    if variant != "control-init":
        raise MeshError(f"unknown mesh variant: {variant!r}")
    if d == 1:
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        # both triangles tagged on the (0,0)-(1,1) diagonal
        cells = np.array([[0, 1, 2], [0, 3, 2]])
        ctype = np.zeros(2, dtype=np.int64)
        return SpaceTimeMesh(1, verts, cells, ctype,
                             np.zeros(2, dtype=np.int64), 1.0)
    if d == 2:
        # two Kuhn-subdivided boxes stacked along t, glued at t = 1/2
        corners_lo = _box_corners((0.0, 0.5), (0.0, 1.0), (0.0, 1.0))
        corners_hi = _box_corners((0.5, 1.0), (0.0, 1.0), (0.0, 1.0))
        return _glue_kuhn_boxes([corners_lo, corners_hi], end_time=1.0)
    raise MeshError(f"unsupported spatial dimension: {d}")


def build_moving_domain_mesh(d: int) -> SpaceTimeMesh:
    """Initial meshes of the moving-domain polytopes: the 6-triangle hexagon
    (d=1) or the 12-tet double frustum (d=2); no cell straddles t = 1/2."""
    if d == 1:
        # time-mirror-symmetric hexagon layout: the initial and final edges
        # carry midpoints, each quadrilateral half is fanned into 3 cells
        verts = np.array([
            [0.0, 0.0],    # 0
            [0.5, 0.25],   # 1
            [1.0, 0.0],    # 2
            [1.0, 1.0],    # 3
            [0.5, 0.75],   # 4
            [0.0, 1.0],    # 5
            [0.0, 0.5],    # 6  midpoint of the initial edge
            [1.0, 0.5],    # 7  midpoint of the final edge
        ])
        cells = np.array([
            [6, 0, 1],   # tag (0,.5)-(.5,.25)
            [6, 4, 1],   # tag (0,.5)-(.5,.25)
            [5, 4, 6],   # tag (0,1)-(0,.5)   (initial edge)
            [7, 2, 1],   # tag (1,.5)-(.5,.25)
            [7, 4, 1],   # tag (1,.5)-(.5,.25)
            [3, 4, 7],   # tag (1,1)-(1,.5)   (final edge)
        ])
        ctype = np.zeros(6, dtype=np.int64)
        return SpaceTimeMesh(1, verts, cells, ctype,
                             np.zeros(6, dtype=np.int64), 1.0)
    if d == 2:
        # frustums are trilinear images of boxes; map only corner vertices
        def frustum_corners(t0, t1):
            pts = {}
            for i, tt in enumerate((t0, t1)):
                s = abs(tt - 0.5) + 0.5
                for xh in (0.0, 1.0):
                    for yh in (0.0, 1.0):
                        pts[(float(i), xh, yh)] = (
                            tt, (xh - 0.5) * s + 0.5, (yh - 0.5) * s + 0.5)
            return pts

        return _glue_kuhn_boxes(
            [frustum_corners(0.0, 0.5), frustum_corners(0.5, 1.0)],
            end_time=1.0)
    raise MeshError(f"unsupported spatial dimension: {d}")


def refine_uniform(mesh: SpaceTimeMesh) -> SpaceTimeMesh:
    return mesh.refine_uniform()


def classify_boundary(mesh: SpaceTimeMesh, end_time: float) -> SpaceTimeMesh:
    """Return a mesh with boundary facets (re)classified for the given end
    time; idempotent."""
    bf, bt = _classify(mesh.vertices, mesh.cells, end_time)
    return SpaceTimeMesh(
        dim=mesh.dim, vertices=mesh.vertices, cells=mesh.cells,
        cell_type=mesh.cell_type, generation=mesh.generation,
        end_time=end_time, boundary_facets=bf, boundary_tags=bt,
        parent_cells=mesh.parent_cells, vertex_parents=mesh.vertex_parents)


# ---------------------------------------------------------------------------
# internals
# ---------------------------------------------------------------------------

def _factorial(n: int) -> int:
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def _cell_facets(cell):
    cell = tuple(cell)
    return [tuple(sorted(cell[:i] + cell[i + 1:])) for i in range(len(cell))]


def _classify(vertices, cells, end_time):
    counts = {}
    for c in cells:
        c = tuple(int(v) for v in c)
        for f in _cell_facets(c):
            counts[f] = counts.get(f, 0) + 1
    facets = sorted(f for f, k in counts.items() if k == 1)
    if not facets:
        raise MeshError("mesh has no boundary facets")
    tags = []
    t = vertices[:, 0]
    for f in facets:
        tf = t[list(f)]
        on0 = np.all(np.abs(tf) <= _COINCIDENCE_TOL)
        onT = np.all(np.abs(tf - end_time) <= _COINCIDENCE_TOL)
        if on0 and onT:
            raise MeshError(f"boundary facet {f} matches no classification rule")
        tags.append(TAG_INITIAL if on0 else TAG_FINAL if onT else TAG_LATERAL)
    return (np.array(facets, dtype=np.int64), np.array(tags, dtype=np.int64))


def _bisect_children(cell, gamma, n):
    """Children orderings and type for one tagged bisection; the midpoint id
    is inserted by the caller."""
    z = cell
    mid_slot = None  # placeholder, caller substitutes
    c1 = (z[0], mid_slot) + z[1:n]
    c2 = (z[n], mid_slot) + z[1:gamma + 1] + tuple(reversed(z[gamma + 1:n]))
    return c1, c2, (gamma + 1) % n


def _bisect_round(verts, cells, types, gens, parents, vparents, n):
    """Bisect every input cell once, with recursive conformity closure.

    Cells created during the round stay bisectable (closure may need them)
    but are not themselves queued for splitting.
    """
    nc0 = len(cells)
    store = list(cells)
    stypes = list(types)
    sgens = list(gens)
    sparents = list(parents)
    alive = [True] * nc0

    edge_to_cells = {}

    def register(ci, cell):
        for a in range(n + 1):
            for b in range(a + 1, n + 1):
                key = (cell[a], cell[b]) if cell[a] < cell[b] else (cell[b], cell[a])
                edge_to_cells.setdefault(key, set()).add(ci)

    for ci, cell in enumerate(store):
        register(ci, cell)

    midpoint_cache = {}

    def midpoint(key):
        if key not in midpoint_cache:
            pa, pb = verts[key[0]], verts[key[1]]
            verts.append(tuple(0.5 * (np.asarray(pa) + np.asarray(pb))))
            vparents.append(key)
            midpoint_cache[key] = len(verts) - 1
        return midpoint_cache[key]

    def ref_edge(ci):
        c = store[ci]
        return (c[0], c[-1]) if c[0] < c[-1] else (c[-1], c[0])

    def bisect(ci):
        cell, gamma = store[ci], stypes[ci]
        m = midpoint(ref_edge(ci))
        c1, c2, gnew = _bisect_children(cell, gamma, n)
        c1 = tuple(m if v is None else v for v in c1)
        c2 = tuple(m if v is None else v for v in c2)
        alive[ci] = False
        for child in (c1, c2):
            store.append(child)
            stypes.append(gnew)
            sgens.append(sgens[ci] + 1)
            sparents.append(sparents[ci])
            alive.append(True)
            register(len(store) - 1, child)

    budget = 100 * nc0 * (n + 2)
    stack = list(range(nc0))
    while stack:
        ci = stack[-1]
        if not alive[ci]:
            stack.pop()
            continue
        key = ref_edge(ci)
        sharers = [cj for cj in edge_to_cells[key] if alive[cj]]
        incompatible = [cj for cj in sharers if ref_edge(cj) != key]
        if incompatible:
            stack.extend(incompatible)
        else:
            for cj in sharers:
                bisect(cj)
            stack.pop()
        budget -= 1
        if budget < 0 or len(store) > 100 * nc0:
            raise MeshError("bisection closure does not terminate: "
                            "incompatible refinement-edge tags")

    keep = [i for i, a in enumerate(alive) if a]
    return ([store[i] for i in keep], [stypes[i] for i in keep],
            [sgens[i] for i in keep], [sparents[i] for i in keep])


def _box_corners(tr, xr, yr):
    pts = {}
    for i, tt in enumerate(tr):
        for xh in (0.0, 1.0):
            for yh in (0.0, 1.0):
                pts[(float(i), xh, yh)] = (tt,
                                           xr[0] + xh * (xr[1] - xr[0]),
                                           yr[0] + yh * (yr[1] - yr[0]))
    return pts


_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def _glue_kuhn_boxes(corner_maps, end_time):
    """Mesh a stack of (possibly trilinearly deformed) boxes, six Kuhn
    tetrahedra each, with shared vertices deduplicated.

    ``corner_maps`` are dicts keyed by reference corner (tau, xh, yh) with
    tau in {0,1} denoting the lower/upper face of each box in the stack.
    """
    verts = []
    index = {}

    def vid(p):
        key = tuple(round(x, 14) for x in p)
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    cells, ctype = [], []
    for corners in corner_maps:
        for perm in _KUHN_PERMS:
            path = [np.zeros(3)]
            for ax in perm:
                nxt = path[-1].copy()
                nxt[ax] = 1.0
                path.append(nxt)
            ids = [vid(corners[tuple(p)]) for p in path]
            cells.append(ids)
            ctype.append(0)
    mesh = SpaceTimeMesh(
        2, np.array(verts, dtype=float), np.array(cells, dtype=np.int64),
        np.array(ctype, dtype=np.int64),
        np.zeros(len(cells), dtype=np.int64), end_time)
    return mesh
