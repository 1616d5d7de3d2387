"""Conforming P1 triangulations of the unit square, the periodic unit cell with
a circular hole, and the periodically perforated square.

All generators start from the same structured grid with alternating diagonals
(so the meshes are symmetric under x <-> y and under the reflections of the
cell), cut away the disk and snap the near-circle nodes radially onto it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Tag(enum.IntEnum):
    EXTERIOR = 1
    HOLE = 2


class MeshFormatError(ValueError):
    """Raised by :func:`read_mesh` for malformed files."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RefinementTooCoarse(ValueError):
    pass


# nodes closer than SNAP_FRACTION * h to the circle are moved onto it
SNAP_FRACTION = 0.3
MERGE_TOL = 1e-12


@dataclass(eq=False)
class Mesh:
    """Triangulation with tagged boundary edges.

    ``boundary_edges`` is an (m, 2) int array, ``boundary_tags`` the matching
    tags, ``periodic_pairs`` an optional (q, 2) array of (master, slave).
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    periodic_pairs: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=np.int64).reshape(-1)
        if self.periodic_pairs is not None:
            self.periodic_pairs = np.asarray(self.periodic_pairs, dtype=np.int64).reshape(-1, 2)
        for arr in (self.nodes, self.triangles, self.boundary_edges, self.boundary_tags):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return np.stack([np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)], axis=1)

    def max_h(self) -> float:
        """Largest element diameter (longest edge)."""
        return float(self.edge_lengths().max())

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.nodes[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

    def edges(self):
        """Unique edges and, per edge, the number of incident triangles."""
        if "edges" not in self._cache:
            all_edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
            uniq, counts = np.unique(all_edges, axis=0, return_counts=True)
            self._cache["edges"] = (uniq, counts)
        return self._cache["edges"]

    def nodes_with_tag(self, tag) -> np.ndarray:
        tag = Tag(tag)
        return np.unique(self.boundary_edges[self.boundary_tags == tag])

    def has_tag(self, tag) -> bool:
        return bool(np.any(self.boundary_tags == Tag(tag)))

    def check(self):
        """Raise ValueError if any mesh invariant is violated."""
        if np.any(self.signed_areas() <= 0):
            raise ValueError("mesh has triangles with non-positive signed area")
        uniq, counts = self.edges()
        if np.any(counts > 2):
            raise ValueError("non-conforming mesh: edge shared by more than two triangles")
        bnd = uniq[counts == 1]
        tagged = np.sort(self.boundary_edges, axis=1)
        if len(tagged) != len(bnd) or len(np.unique(tagged, axis=0)) != len(tagged):
            raise ValueError("every boundary edge must carry exactly one tag")
        if not np.array_equal(np.unique(tagged, axis=0), bnd):
            raise ValueError("tagged edges do not match the mesh boundary")
        if not np.all(np.isin(self.boundary_tags, [t.value for t in Tag])):
            raise ValueError("unknown boundary tag")
        if self.periodic_pairs is not None and len(self.periodic_pairs):
            d = self.nodes[self.periodic_pairs[:, 1]] - self.nodes[self.periodic_pairs[:, 0]]
            ok = ((d[:, 0] == 1.0) & (d[:, 1] == 0.0)) | ((d[:, 0] == 0.0) & (d[:, 1] == 1.0))
            if not np.all(ok):
                raise ValueError("periodic pairs must differ by exactly (1,0) or (0,1)")
        return self

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        pp_self = self.periodic_pairs if self.periodic_pairs is not None else np.zeros((0, 2), int)
        pp_other = other.periodic_pairs if other.periodic_pairs is not None else np.zeros((0, 2), int)
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.boundary_tags, other.boundary_tags)
            and np.array_equal(pp_self, pp_other)
        )

    __hash__ = None


@dataclass(frozen=True)
class PerforationSpec:
    """Cell size ``epsilon`` (1/epsilon integer) and hole radius in cell units."""

    epsilon: float
    hole_radius: float = 0.4

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        m = 1.0 / self.epsilon
        if abs(m - round(m)) > 1e-9 * m:
            raise ValueError(f"1/epsilon must be a positive integer, got 1/{self.epsilon} = {m:g}")
        if not (0.0 < self.hole_radius < 0.5):
            raise ValueError(f"hole radius must lie in (0, 0.5), got {self.hole_radius}")

    @classmethod
    def from_cells(cls, cells_per_side: int, hole_radius: float = 0.4):
        return cls(1.0 / cells_per_side, hole_radius)

    @property
    def cells_per_side(self) -> int:
        return int(round(1.0 / self.epsilon))

    @property
    def porosity(self) -> float:
        return 1.0 - math.pi * self.hole_radius**2


def _grid(n):
    """Structured (n+1)^2 grid of [0,1]^2 with alternating diagonals."""
    t = np.arange(n + 1) / n
    x, y = np.meshgrid(t, t, indexing="xy")
    nodes = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i          # (i, j)
    b = a + 1                    # (i+1, j)
    c = a + n + 2                # (i+1, j+1)
    d = a + n + 1                # (i, j+1)
    even = (i + j) % 2 == 0
    # even squares split along a-c, odd ones along b-d
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2
    return nodes, tris


def _boundary_edges(triangles):
    all_edges = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(all_edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    # keep the orientation the edge has in its (single) triangle
    return all_edges[counts[inv.ravel()] == 1]


def generate_square(n: int) -> Mesh:
    """Structured triangulation of the unit square with n subdivisions per side."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    nodes, tris = _grid(int(n))
    bnd = _boundary_edges(tris)
    return Mesh(nodes, tris, bnd, np.full(len(bnd), Tag.EXTERIOR.value)).check()


def _on_unit_boundary(p):
    return (p[:, 0] == 0.0) | (p[:, 0] == 1.0) | (p[:, 1] == 0.0) | (p[:, 1] == 1.0)


def _circle_cut(a, b, center, r):
    """Point where segment a -> b crosses the circle (a inside, b outside)."""
    d = b - a
    f = a - center
    qa = d @ d
    qb = 2.0 * (f @ d)
    qc = f @ f - r * r
    disc = max(qb * qb - 4.0 * qa * qc, 0.0)
    t = (-qb + math.sqrt(disc)) / (2.0 * qa)
    p = a + t * d
    # project to remove the rounding of the quadratic formula
    v = p - center
    return center + r * v / math.hypot(v[0], v[1])


def _angle_min(p0, p1, p2):
    pts = (p0, p1, p2)
    best = math.pi
    for i in range(3):
        a = pts[(i + 1) % 3] - pts[i]
        b = pts[(i + 2) % 3] - pts[i]
        c = (a @ b) / (math.hypot(*a) * math.hypot(*b))
        best = min(best, math.acos(max(-1.0, min(1.0, c))))
    return best


def _cut_hole(n, r, center=(0.5, 0.5)):
    """Grid of the unit cell with the disk removed; returns nodes, triangles."""
    center = np.asarray(center, dtype=float)
    h = 1.0 / n
    nodes, tris = _grid(n)
    nodes = nodes.copy()
    dist = np.hypot(nodes[:, 0] - center[0], nodes[:, 1] - center[1])
    phi = dist - r
    snap = (np.abs(phi) < SNAP_FRACTION * h) & ~_on_unit_boundary(nodes) & (dist > 0)
    nodes[snap] = center + r * (nodes[snap] - center) / dist[snap, None]
    phi[snap] = 0.0
    sign = np.sign(phi).astype(int)

    new_nodes = [nodes]
    n_total = len(nodes)
    cut_index = {}

    def cut(i, j):
        nonlocal n_total
        key = (min(i, j), max(i, j))
        if key not in cut_index:
            a, b = (i, j) if sign[i] < 0 else (j, i)
            new_nodes.append(_circle_cut(nodes[a], nodes[b], center, r)[None, :])
            cut_index[key] = n_total
            n_total += 1
        return cut_index[key]

    def coords(k):
        if k < len(nodes):
            return nodes[k]
        return new_nodes[k - len(nodes) + 1][0]

    out = []
    s = sign[tris]
    n_minus = (s < 0).sum(axis=1)
    n_plus = (s > 0).sum(axis=1)
    keep_whole = (n_minus == 0) & (n_plus > 0)
    out.append(tris[keep_whole])
    extra = []
    for t in tris[(n_minus > 0) & (n_plus > 0)]:
        # rotate so the vertex ordering stays counterclockwise
        sv = sign[t]
        if (sv < 0).sum() == 1 and (sv > 0).sum() == 1:
            k = int(np.flatnonzero(sv == 0)[0])
            z, u, v = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
            c = cut(u, v)
            extra.append((z, u, c) if sign[u] > 0 else (z, c, v))
        elif (sv < 0).sum() == 2:
            k = int(np.flatnonzero(sv > 0)[0])
            pnode, u, v = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
            extra.append((pnode, cut(pnode, u), cut(pnode, v)))
        else:
            k = int(np.flatnonzero(sv < 0)[0])
            m, u, v = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
            cu, cv = cut(m, u), cut(m, v)
            # quad (cu, u, v, cv); pick the diagonal with the better min angle
            q = [cu, u, v, cv]
            P = [coords(x) for x in q]
            opt_a = min(_angle_min(P[0], P[1], P[2]), _angle_min(P[0], P[2], P[3]))
            opt_b = min(_angle_min(P[0], P[1], P[3]), _angle_min(P[1], P[2], P[3]))
            if opt_a >= opt_b:
                extra.extend([(cu, u, v), (cu, v, cv)])
            else:
                extra.extend([(cu, u, cv), (u, v, cv)])
    if extra:
        out.append(np.asarray(extra, dtype=np.int64))
    all_nodes = np.vstack(new_nodes)
    all_tris = np.vstack(out)
    # drop nodes no longer referenced and renumber in first-use-free order
    used = np.zeros(len(all_nodes), dtype=bool)
    used[all_tris.ravel()] = True
    renum = -np.ones(len(all_nodes), dtype=np.int64)
    renum[used] = np.arange(used.sum())
    return all_nodes[used], renum[all_tris]


def _tag_edges(nodes, tris, on_exterior):
    bnd = _boundary_edges(tris)
    ext = on_exterior(nodes[bnd[:, 0]]) & on_exterior(nodes[bnd[:, 1]])
    mid = 0.5 * (nodes[bnd[:, 0]] + nodes[bnd[:, 1]])
    ext &= on_exterior(mid)
    tags = np.where(ext, Tag.EXTERIOR.value, Tag.HOLE.value)
    return bnd, tags


def _periodic_pairs(nodes):
    pairs = []
    for axis in (0, 1):
        lo = np.flatnonzero(nodes[:, axis] == 0.0)
        hi = np.flatnonzero(nodes[:, axis] == 1.0)
        other = 1 - axis
        lo_sorted = lo[np.argsort(nodes[lo, other], kind="stable")]
        hi_sorted = hi[np.argsort(nodes[hi, other], kind="stable")]
        if len(lo_sorted) != len(hi_sorted) or not np.array_equal(
            nodes[lo_sorted, other], nodes[hi_sorted, other]
        ):
            raise ValueError("opposite cell faces carry different node traces")
        pairs.append(np.column_stack([lo_sorted, hi_sorted]))
    return np.vstack(pairs)


def generate_cell(n: int, r: float) -> Mesh:
    """Periodic unit cell Y minus the disk of radius ``r`` centred at (0.5, 0.5)."""
    if int(n) != n or n < 8:
        raise ValueError(f"cell mesh needs n >= 8 subdivisions, got {n}")
    if not (0.0 < r < 0.5):
        raise ValueError(f"hole radius must lie in (0, 0.5) so the hole stays inside the cell, got {r}")
    if r * n < 0.5:
        raise ValueError(f"hole radius {r} is not resolved by a grid with n={n}")
    nodes, tris = _cut_hole(int(n), float(r))
    bnd, tags = _tag_edges(nodes, tris, lambda p: _on_unit_boundary(p))
    return Mesh(nodes, tris, bnd, tags, _periodic_pairs(nodes)).check()


def generate_periodic_square(n: int) -> Mesh:
    """The unperforated unit cell with periodic pairs (the r -> 0 limit)."""
    sq = generate_square(n)
    return Mesh(sq.nodes, sq.triangles, sq.boundary_edges, sq.boundary_tags, _periodic_pairs(sq.nodes)).check()


def generate_perforated(n_per_cell: int, spec: PerforationSpec) -> Mesh:
    """Unit square with one hole of radius epsilon*r per epsilon-cell.

    The cell mesh is scaled and tiled; interface nodes are merged by
    coordinate hashing.
    """
    if int(n_per_cell) != n_per_cell or n_per_cell < 8:
        raise ValueError(f"n_per_cell must be an integer >= 8, got {n_per_cell}")
    m = spec.cells_per_side
    cell_nodes, cell_tris = _cut_hole(int(n_per_cell), spec.hole_radius)
    nc = len(cell_nodes)
    ci, cj = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    shifts = np.column_stack([ci.ravel(), cj.ravel()]).astype(float)
    raw = ((cell_nodes[None, :, :] + shifts[:, None, :]) / m).reshape(-1, 2)
    raw_tris = (cell_tris[None, :, :] + nc * np.arange(m * m)[:, None, None]).reshape(-1, 3)

    keys = np.round(raw / MERGE_TOL).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    # number merged nodes in order of first appearance for a stable layout
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    nodes = raw[first[order]]
    tris = rank[inv][raw_tris]

    def on_ext(p):
        return (p[:, 0] == 0.0) | (p[:, 0] == 1.0) | (p[:, 1] == 0.0) | (p[:, 1] == 1.0)

    bnd, tags = _tag_edges(nodes, tris, on_ext)
    mesh = Mesh(nodes, tris, bnd, tags).check()
    if mesh.max_h() >= spec.epsilon:
        raise RefinementTooCoarse(
            f"max element diameter {mesh.max_h():.4g} is not below epsilon={spec.epsilon:g}"
        )
    return mesh


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text NODES/TRIANGLES/BOUNDARY/PERIODIC format."""
    lines = ["# lscheme_homog mesh", f"NODES {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(f"BOUNDARY {len(mesh.boundary_edges)}")
    lines += [
        f"{a} {b} {Tag(t).name}" for (a, b), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist())
    ]
    pairs = mesh.periodic_pairs if mesh.periodic_pairs is not None else np.zeros((0, 2), int)
    lines.append(f"PERIODIC {len(pairs)}")
    lines += [f"{a} {b}" for a, b in pairs.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


_SECTIONS = ("NODES", "TRIANGLES", "BOUNDARY", "PERIODIC")


def read_mesh(path) -> Mesh:
    """Parse a mesh file written by :func:`write_mesh`.

    Raises MeshFormatError naming the offending line or missing section.
    """
    records = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            records.append((lineno, text.split()))
    pos = 0
    data = {}
    for section in _SECTIONS:
        if pos >= len(records):
            if section == "PERIODIC":
                data[section] = []
                break
            raise MeshFormatError(f"missing section {section}")
        lineno, tok = records[pos]
        if tok[0] != section or len(tok) != 2:
            raise MeshFormatError(f"expected '{section} <count>', got {' '.join(tok)!r}", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad record count {tok[1]!r}", lineno) from None
        body = records[pos + 1 : pos + 1 + count]
        if len(body) < count or any(t[0] in _SECTIONS for _, t in body):
            raise MeshFormatError(f"section {section} truncated: expected {count} records", lineno)
        data[section] = body
        pos += 1 + count
    if pos < len(records):
        raise MeshFormatError("unexpected trailing content", records[pos][0])

    def parse(section, width, conv):
        out = []
        for lineno, tok in data[section]:
            if len(tok) != width:
                raise MeshFormatError(f"{section} record needs {width} fields", lineno)
            try:
                out.append([conv[i](v) for i, v in enumerate(tok)])
            except (ValueError, KeyError):
                raise MeshFormatError(f"unparsable {section} record {' '.join(tok)!r}", lineno) from None
        return out

    nodes = np.asarray(parse("NODES", 2, (float, float)), dtype=float).reshape(-1, 2)
    tris = np.asarray(parse("TRIANGLES", 3, (int, int, int)), dtype=np.int64).reshape(-1, 3)
    bnd = parse("BOUNDARY", 3, (int, int, lambda s: Tag[s].value))
    pairs = np.asarray(parse("PERIODIC", 2, (int, int)), dtype=np.int64).reshape(-1, 2)

    for (lineno, _), t in zip(data["TRIANGLES"], tris):
        if np.any(t < 0) or np.any(t >= len(nodes)):
            raise MeshFormatError("triangle references an unknown node", lineno)
        p = nodes[t]
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area <= 0:
            raise MeshFormatError("triangle is not counterclockwise (orientation error)", lineno)
    bnd_arr = np.asarray(bnd, dtype=np.int64).reshape(-1, 3)
    mesh = Mesh(nodes, tris, bnd_arr[:, :2], bnd_arr[:, 2], pairs if len(pairs) else None)
    try:
        mesh.check()
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None
    return mesh
