"""Small structured meshes for tests, examples and the benchmark.

General mesh generation is left to external tools (write MSH 2.2 and load it
with :func:`binghamopt.mesh.load_msh`).  The generators here only cover the
channel-with-square-obstacle setup and a ring between two polygons.
"""
import numpy as np

from .mesh import TriangleMesh


def _split_quads(quads, pattern):
    """Split quads ``(ll, lr, ur, ul)`` into two counterclockwise triangles."""
    tris = []
    for k, (ll, lr, ur, ul, parity) in enumerate(quads):
        if pattern == "alternating" and parity:
            tris += [(ll, lr, ul), (lr, ur, ul)]
        else:
            tris += [(ll, lr, ur), (ll, ur, ul)]
    return np.array(tris, dtype=np.int64)


def channel_mesh(n=20, hole=((0.3, 0.45), 0.1), pattern="alternating"):
    """Unit-square channel on an ``n x n`` grid, optionally with a square hole.

    The left side is ``inflow``, the right side ``outflow``, top and bottom
    are ``walls``.  ``hole = (center, edge)`` removes the grid cells covered
    by an axis-aligned square whose sides must lie on grid lines; pass
    ``hole=None`` for an empty channel.
    """
    h = 1.0 / n
    removed = np.zeros((n, n), dtype=bool)
    if hole is not None:
        (cx, cy), edge = hole
        lo = np.array([cx - edge / 2, cy - edge / 2]) / h
        hi = np.array([cx + edge / 2, cy + edge / 2]) / h
        ilo, ihi = np.rint(lo).astype(int), np.rint(hi).astype(int)
        if not (np.allclose(lo, ilo, atol=1e-9) and np.allclose(hi, ihi, atol=1e-9)):
            raise ValueError("hole sides must lie on grid lines")
        if ilo.min() < 1 or ihi.max() > n - 1:
            raise ValueError("hole must lie strictly inside the channel")
        removed[ilo[0] : ihi[0], ilo[1] : ihi[1]] = True

    def vid(i, j):
        return j * (n + 1) + i

    quads = []
    for j in range(n):
        for i in range(n):
            if not removed[i, j]:
                quads.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1), (i + j) % 2))
    cells = _split_quads(quads, pattern)

    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    facets, tags = [], []
    for i in range(n):
        facets.append((vid(i, 0), vid(i + 1, 0)))
        tags.append("walls")
        facets.append((vid(i, n), vid(i + 1, n)))
        tags.append("walls")
    for j in range(n):
        facets.append((vid(0, j), vid(0, j + 1)))
        tags.append("inflow")
        facets.append((vid(n, j), vid(n, j + 1)))
        tags.append("outflow")
    # hole boundary: grid edges between a removed and a kept cell
    for j in range(n):
        for i in range(n):
            if not removed[i, j]:
                continue
            if not removed[i, j - 1]:
                facets.append((vid(i, j), vid(i + 1, j)))
                tags.append("shape")
            if not removed[i, j + 1]:
                facets.append((vid(i, j + 1), vid(i + 1, j + 1)))
                tags.append("shape")
            if not removed[i - 1, j]:
                facets.append((vid(i, j), vid(i, j + 1)))
                tags.append("shape")
            if not removed[i + 1, j]:
                facets.append((vid(i + 1, j), vid(i + 1, j + 1)))
                tags.append("shape")

    used = np.unique(cells)
    renum = np.full(len(vertices), -1, dtype=np.int64)
    renum[used] = np.arange(len(used))
    facets = np.array(facets, dtype=np.int64)
    return TriangleMesh(vertices[used], renum[cells], renum[facets], tags)


def polygon_annulus(n_sides=6, r_inner=0.1, r_outer=0.4, rings=4, subdiv=2, outer_tag="walls"):
    """Ring mesh between two concentric regular polygons centred at 0.

    The inner loop is tagged ``shape`` and is exactly the regular
    ``n_sides``-gon of circumradius ``r_inner`` with ``subdiv`` segments
    per side.
    """
    m = n_sides * subdiv
    corners = 2 * np.pi * np.arange(n_sides) / n_sides
    unit = np.column_stack([np.cos(corners), np.sin(corners)])
    # points on the unit-circumradius polygon boundary
    poly = []
    for k in range(n_sides):
        a, b = unit[k], unit[(k + 1) % n_sides]
        for s in range(subdiv):
            poly.append(a + (b - a) * s / subdiv)
    poly = np.array(poly)
    radii = np.linspace(r_inner, r_outer, rings + 1)
    vertices = np.concatenate([r * poly for r in radii])

    def vid(ring, k):
        return ring * m + (k % m)

    quads = []
    for r in range(rings):
        for k in range(m):
            quads.append((vid(r, k), vid(r + 1, k), vid(r + 1, k + 1), vid(r, k + 1), (r + k) % 2))
    cells = _split_quads(quads, "alternating")
    facets, tags = [], []
    for k in range(m):
        facets.append((vid(0, k), vid(0, k + 1)))
        tags.append("shape")
        facets.append((vid(rings, k), vid(rings, k + 1)))
        tags.append(outer_tag)
    return TriangleMesh(vertices, cells, facets, tags)
