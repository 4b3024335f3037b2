"""Unstructured triangle meshes with tagged boundaries.

A :class:`TriangleMesh` couples vertex coordinates with an immutable
:class:`Topology` (cells, tagged boundary facets, edge numbering).  Deformed
copies produced by :func:`deform_mesh` share the topology object, so degree of
freedom maps and sparsity patterns cached on it are reused across shape
iterations.

The obstacle boundary (facets tagged ``shape``) is exposed as a
:class:`ShapeBoundary`: a closed vertex loop ordered counterclockwise around
the obstacle, i.e. the obstacle lies to the left of the loop.  The unit normal
``n`` used everywhere in the package is the outward normal of the fluid domain,
which on the shape points into the obstacle (the left normal of the loop).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GeometryError,
    InvertedMeshError,
    MeshConfigError,
    MeshParseError,
    TopologyError,
)

logger = logging.getLogger(__name__)

TAGS = ("inflow", "walls", "outflow", "shape")
DEFAULT_TAG_NAMES = {tag: tag for tag in TAGS}

# local edge k of a cell is opposite local vertex k
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


def signed_areas(vertices, cells):
    p0 = vertices[cells[:, 0]]
    e1 = vertices[cells[:, 1]] - p0
    e2 = vertices[cells[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


class Topology:
    """Connectivity shared by a mesh and all of its deformed copies."""

    def __init__(self, n_vertices, cells, facets, facet_tags):
        self.n_vertices = int(n_vertices)
        self.cells = _frozen(np.asarray(cells, dtype=np.int64).reshape(-1, 3))
        self.facets = _frozen(np.asarray(facets, dtype=np.int64).reshape(-1, 2))
        self.facet_tags = _frozen(np.asarray(facet_tags, dtype="<U8"))
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= n_vertices):
            raise TopologyError("cell references a vertex index out of range")
        bad = set(np.unique(self.facet_tags)) - set(TAGS)
        if bad:
            raise TopologyError(f"unknown facet tags {sorted(bad)}")
        self._build_edges()
        self._check_facets()
        self.cache = {}
        self._shape_loop = None
        if np.any(self.facet_tags == "shape"):
            self._shape_loop = _order_loop(self.facets[self.facet_tags == "shape"])

    def _build_edges(self):
        nc = len(self.cells)
        local = self.cells[:, LOCAL_EDGES]  # (nc, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise TopologyError("non-manifold edge shared by more than two cells")
        self.edges = _frozen(edges)
        self.cell_edges = _frozen(inverse.reshape(nc, 3))
        self.edge_cell_count = counts
        self.boundary_edges = np.flatnonzero(counts == 1)
        # cell adjacent to each boundary edge
        owner = np.repeat(np.arange(nc), 3)
        edge_owner = np.full(len(edges), -1, dtype=np.int64)
        edge_owner[inverse.ravel()] = owner
        self._edge_owner = edge_owner
        self._edge_index = {tuple(e): i for i, e in enumerate(edges)}

    def _check_facets(self):
        facet_edges = np.empty(len(self.facets), dtype=np.int64)
        for i, (a, b) in enumerate(self.facets):
            key = (min(a, b), max(a, b))
            idx = self._edge_index.get(key)
            if idx is None:
                raise TopologyError(f"boundary facet {a}-{b} is not an edge of any cell")
            if self.edge_cell_count[idx] != 1:
                raise TopologyError(f"boundary facet {a}-{b} is shared by two cells")
            facet_edges[i] = idx
        if len(np.unique(facet_edges)) != len(facet_edges):
            raise TopologyError("a boundary facet carries more than one tag")
        untagged = np.setdiff1d(self.boundary_edges, facet_edges)
        if len(untagged):
            a, b = self.edges[untagged[0]]
            raise TopologyError(
                f"{len(untagged)} boundary edges carry no tag (first: {a}-{b})"
            )
        self.facet_edges = _frozen(facet_edges)
        self.facet_cells = _frozen(self._edge_owner[facet_edges])

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edges)

    def tagged_vertices(self, tag):
        return np.unique(self.facets[self.facet_tags == tag])

    def tagged_edges(self, tag):
        return self.facet_edges[self.facet_tags == tag]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _order_loop(segments):
    """Chain unordered segments into one closed loop of vertex indices."""
    adj = {}
    for a, b in segments:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    for v, nb in adj.items():
        if len(nb) != 2:
            raise TopologyError(
                f"shape boundary is not a closed simple loop (vertex {v} has degree {len(nb)})"
            )
    start = min(adj)
    loop = [start]
    prev, cur = start, adj[start][0]
    while cur != start:
        loop.append(cur)
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        prev, cur = cur, nxt
        if len(loop) > len(adj):
            raise TopologyError("shape boundary loop does not close")
    if len(loop) != len(adj):
        raise TopologyError("shape facets form more than one loop")
    return np.array(loop, dtype=np.int64)


class TriangleMesh:
    """Triangle mesh of the flow domain.

    Parameters
    ----------
    vertices : (nv, 2) array_like
    cells : (nc, 3) array_like
        Vertex indices; clockwise cells are flipped at construction.
    facets : (nb, 2) array_like
        Boundary facets as vertex pairs.
    facet_tags : sequence of str
        One tag from :data:`TAGS` per facet.
    """

    def __init__(self, vertices, cells, facets, facet_tags, *, _topology=None):
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.vertices = _frozen(vertices)
        if _topology is None:
            cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
            area = signed_areas(vertices, cells)
            tol = 1e-14 * max(1.0, np.ptp(vertices, axis=0).max() ** 2) if len(vertices) else 0
            if np.any(np.abs(area) <= tol):
                raise GeometryError("mesh contains a degenerate (zero-area) cell")
            flip = area < 0
            if np.any(flip):
                logger.debug("repairing orientation of %d cells", flip.sum())
                cells[flip] = cells[flip][:, [0, 2, 1]]
            _topology = Topology(len(vertices), cells, facets, facet_tags)
            self._check_shape_simple(_topology)
        self.topology = _topology
        self._cache = {}

    def _check_shape_simple(self, topo):
        if topo._shape_loop is None:
            return
        pts = self.vertices[topo._shape_loop]
        if not _polygon_is_simple(pts):
            raise TopologyError("shape boundary loop self-intersects")

    # convenience accessors
    @property
    def cells(self):
        return self.topology.cells

    @property
    def facets(self):
        return self.topology.facets

    @property
    def facet_tags(self):
        return self.topology.facet_tags

    @property
    def facet_cells(self):
        return self.topology.facet_cells

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return self.topology.n_cells

    @property
    def cache(self):
        """Per-geometry cache (cleared on every deformation)."""
        return self._cache

    def cell_areas(self):
        return signed_areas(self.vertices, self.cells)

    def has_shape(self):
        return self.topology._shape_loop is not None

    def shape_boundary(self) -> "ShapeBoundary":
        loop = self.topology._shape_loop
        if loop is None:
            raise TopologyError("mesh has no facets tagged 'shape'")
        if _shoelace(self.vertices[loop]) < 0:
            loop = loop[::-1].copy()
        edges = np.column_stack([loop, np.roll(loop, -1)])
        keys = np.sort(edges, axis=1)
        index = self.topology._edge_index
        edge_ids = np.array([index[(a, b)] for a, b in keys], dtype=np.int64)
        cells = self.topology._edge_owner[edge_ids]
        return ShapeBoundary(loop=loop, edges=edges, edge_cells=cells)

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh(vertices, None, None, None, _topology=self.topology)

    def __repr__(self):
        return f"TriangleMesh(vertices={self.n_vertices}, cells={self.n_cells}, facets={len(self.facets)})"


@dataclass(frozen=True)
class ShapeBoundary:
    """Counterclockwise vertex loop around the obstacle.

    ``edges[i] = (loop[i], loop[i+1])`` (cyclic) and ``edge_cells[i]`` is the
    fluid cell adjacent to that edge.
    """

    loop: np.ndarray
    edges: np.ndarray = field(repr=False)
    edge_cells: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.loop)

    def points(self, mesh):
        return mesh.vertices[self.loop]

    def edge_normals(self, mesh):
        """Unit fluid-outward normals and lengths of the shape edges."""
        a = mesh.vertices[self.edges[:, 0]]
        b = mesh.vertices[self.edges[:, 1]]
        t = b - a
        length = np.hypot(t[:, 0], t[:, 1])
        n = np.column_stack([-t[:, 1], t[:, 0]]) / length[:, None]
        return n, length


# ---------------------------------------------------------------------------
# polygon geometry


def _shoelace(pts):
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * np.sum(x * yn - xn * y)


def polygon_area(pts):
    return abs(_shoelace(np.asarray(pts, dtype=float)))


def polygon_centroid(pts):
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if abs(a) <= np.finfo(float).eps * max(1.0, np.abs(pts).max()) ** 2:
        raise GeometryError("polygon has zero area")
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def polygon_perimeter(pts):
    pts = np.asarray(pts, dtype=float)
    d = np.roll(pts, -1, axis=0) - pts
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _polygon_is_simple(pts):
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, pts[j], pts[(j + 1) % n]):
                return False
    return True


def volume(shape: ShapeBoundary, mesh: TriangleMesh) -> float:
    """Area enclosed by the shape loop."""
    area = polygon_area(shape.points(mesh))
    scale = np.ptp(mesh.vertices, axis=0).max() ** 2
    if area <= np.finfo(float).eps * scale:
        raise GeometryError("shape loop encloses no area")
    return area


def barycenter(shape: ShapeBoundary, mesh: TriangleMesh) -> np.ndarray:
    return polygon_centroid(shape.points(mesh))


def perimeter(shape: ShapeBoundary, mesh: TriangleMesh) -> float:
    return polygon_perimeter(shape.points(mesh))


def constraint_vector(shape, mesh, targets) -> np.ndarray:
    """Deviation ``(vol - V, bary_x - Bx, bary_y - By, peri - P)``.

    ``targets`` is ``(V, (Bx, By), P)``.
    """
    vol_t, bary_t, peri_t = targets
    b = barycenter(shape, mesh)
    return np.array(
        [
            volume(shape, mesh) - vol_t,
            b[0] - bary_t[0],
            b[1] - bary_t[1],
            perimeter(shape, mesh) - peri_t,
        ]
    )


# ---------------------------------------------------------------------------
# deformation and quality


def deform_mesh(mesh: TriangleMesh, V, t: float) -> TriangleMesh:
    """Perturbation of identity ``x -> x + t V(x)`` on the vertices.

    Raises
    ------
    InvertedMeshError
        If any cell ends up with nonpositive signed area.
    """
    if t < 0:
        raise ValueError("step size must be nonnegative")
    V = np.asarray(V, dtype=float).reshape(-1, 2)
    if V.shape[0] != mesh.n_vertices:
        raise ValueError("deformation field must have one 2-vector per vertex")
    if t == 0:
        return mesh.with_vertices(mesh.vertices.copy())
    new = mesh.vertices + t * V
    area = signed_areas(new, mesh.cells)
    bad = np.flatnonzero(area <= 0)
    if len(bad):
        raise InvertedMeshError(f"{len(bad)} cells inverted by the mesh update", cells=bad)
    return mesh.with_vertices(new)


def cell_quality(mesh: TriangleMesh) -> np.ndarray:
    """``2 r_in / r_circ`` per cell; 1 for equilateral triangles."""
    v = mesh.vertices[mesh.cells]
    a = np.linalg.norm(v[:, 1] - v[:, 2], axis=1)
    b = np.linalg.norm(v[:, 2] - v[:, 0], axis=1)
    c = np.linalg.norm(v[:, 0] - v[:, 1], axis=1)
    return (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)


def mesh_quality(mesh: TriangleMesh) -> float:
    return float(cell_quality(mesh).min())


# ---------------------------------------------------------------------------
# MSH 2.2 ASCII


_ELEMENT_NODES = {1: 2, 2: 3, 3: 4, 4: 4, 8: 3, 9: 6, 15: 1}


def load_msh(path, tag_names=None) -> TriangleMesh:
    """Read a 2D MSH 2.2 ASCII file.

    Parameters
    ----------
    path : str or path-like
    tag_names : dict, optional
        Maps each boundary role in :data:`TAGS` to the physical-group name
        used in the file.  Defaults to the role names themselves.  Roles
        absent from the file are allowed; line elements in a physical group
        that maps to no role raise :class:`MeshConfigError`.
    """
    tag_names = dict(DEFAULT_TAG_NAMES if tag_names is None else tag_names)
    name_to_role = {}
    for role, name in tag_names.items():
        if role not in TAGS:
            raise MeshConfigError(f"unknown boundary role '{role}'")
        name_to_role[name] = role

    with open(path) as fh:
        lines = fh.read().splitlines()

    sections = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            start = i + 1
            end_tag = "$End" + name
            j = start
            while j < len(lines) and lines[j].strip() != end_tag:
                j += 1
            if j == len(lines):
                raise MeshParseError(f"section ${name} is not terminated", i + 1)
            sections[name] = (start, lines[start:j])
            i = j + 1
        else:
            if line:
                raise MeshParseError(f"unexpected content {line!r}", i + 1)
            i += 1

    if "MeshFormat" not in sections:
        raise MeshParseError("missing $MeshFormat section", 1)
    start, body = sections["MeshFormat"]
    parts = body[0].split() if body else []
    if len(parts) < 3 or not parts[0].startswith("2"):
        raise MeshParseError("only MSH format version 2.2 is supported", start + 1)
    if parts[1] != "0":
        raise MeshParseError("binary MSH files are not supported", start + 1)

    phys_names = {}
    if "PhysicalNames" in sections:
        start, body = sections["PhysicalNames"]
        for k, line in enumerate(body[1:], start=start + 2):
            tok = line.split(maxsplit=2)
            if len(tok) < 3:
                raise MeshParseError("malformed physical name", k)
            try:
                phys_names[(int(tok[0]), int(tok[1]))] = tok[2].strip().strip('"')
            except ValueError:
                raise MeshParseError("malformed physical name", k) from None

    if "Nodes" not in sections:
        raise MeshParseError("missing $Nodes section", len(lines))
    start, body = sections["Nodes"]
    try:
        n_nodes = int(body[0])
    except (IndexError, ValueError):
        raise MeshParseError("malformed node count", start + 1) from None
    if len(body) - 1 != n_nodes:
        raise MeshParseError(f"expected {n_nodes} nodes, found {len(body) - 1}", start + 1)
    node_ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 3))
    for k, line in enumerate(body[1:]):
        tok = line.split()
        try:
            node_ids[k] = int(tok[0])
            coords[k] = [float(t) for t in tok[1:4]]
        except (ValueError, IndexError):
            raise MeshParseError("malformed node record", start + 2 + k) from None
    if np.any(np.abs(coords[:, 2]) > 0.0):
        raise MeshParseError("nodes must lie in the z = 0 plane", start + 2)

    if "Elements" not in sections:
        raise MeshParseError("missing $Elements section", len(lines))
    start, body = sections["Elements"]
    try:
        n_elem = int(body[0])
    except (IndexError, ValueError):
        raise MeshParseError("malformed element count", start + 1) from None
    if len(body) - 1 != n_elem:
        raise MeshParseError(f"expected {n_elem} elements, found {len(body) - 1}", start + 1)
    id_map = {int(n): k for k, n in enumerate(node_ids)}
    tris, lines_el, line_phys, line_no = [], [], [], []
    for k, line in enumerate(body[1:]):
        lineno = start + 2 + k
        try:
            tok = [int(t) for t in line.split()]
            etype, ntags = tok[1], tok[2]
            tags = tok[3 : 3 + ntags]
            nodes = tok[3 + ntags :]
        except (ValueError, IndexError):
            raise MeshParseError("malformed element record", lineno) from None
        if etype not in _ELEMENT_NODES or len(nodes) != _ELEMENT_NODES[etype]:
            raise MeshParseError(f"unsupported or malformed element type {etype}", lineno)
        try:
            local = [id_map[n] for n in nodes]
        except KeyError as exc:
            raise MeshParseError(f"element references unknown node {exc.args[0]}", lineno) from None
        if etype == 2:
            tris.append(local)
        elif etype == 1:
            if not tags:
                raise MeshConfigError(f"line {lineno}: boundary element without physical tag")
            lines_el.append(local)
            line_phys.append(tags[0])
            line_no.append(lineno)
        elif etype in (3, 4, 8, 9):
            raise MeshParseError("only linear triangles and lines are supported", lineno)

    if not tris:
        raise MeshParseError("mesh contains no triangles", start + 1)

    facet_tags = []
    for phys, lineno in zip(line_phys, line_no):
        name = phys_names.get((1, phys), str(phys))
        role = name_to_role.get(name)
        if role is None:
            raise MeshConfigError(
                f"line {lineno}: physical group '{name}' is not mapped to a boundary role"
            )
        facet_tags.append(role)

    # drop nodes not referenced by any triangle (e.g. geometry points)
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    renum = np.full(n_nodes, -1, dtype=np.int64)
    renum[used] = np.arange(len(used))
    facets = np.array(lines_el, dtype=np.int64).reshape(-1, 2)
    if facets.size and np.any(renum[facets] < 0):
        raise TopologyError("boundary facet references a node not in any triangle")
    return TriangleMesh(coords[used, :2], renum[tris], renum[facets], facet_tags)


def write_msh(mesh: TriangleMesh, path, tag_names=None):
    """Write ``mesh`` as MSH 2.2 ASCII with one physical group per role."""
    tag_names = dict(DEFAULT_TAG_NAMES if tag_names is None else tag_names)
    roles = [r for r in TAGS if np.any(mesh.facet_tags == r)]
    phys_id = {r: k + 1 for k, r in enumerate(roles)}
    surface_id = len(roles) + 1
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames"]
    out.append(str(len(roles) + 1))
    for r in roles:
        out.append(f'1 {phys_id[r]} "{tag_names[r]}"')
    out.append(f'2 {surface_id} "fluid"')
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    for k, (x, y) in enumerate(mesh.vertices, start=1):
        out.append(f"{k} {float(x)!r} {float(y)!r} 0")
    out += ["$EndNodes", "$Elements", str(len(mesh.facets) + mesh.n_cells)]
    eid = 1
    for (a, b), tag in zip(mesh.facets, mesh.facet_tags):
        p = phys_id[str(tag)]
        out.append(f"{eid} 1 2 {p} {p} {a + 1} {b + 1}")
        eid += 1
    for a, b, c in mesh.cells:
        out.append(f"{eid} 2 2 {surface_id} 1 {a + 1} {b + 1} {c + 1}")
        eid += 1
    out.append("$EndElements")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
