"""Forest of quadtrees over straight-sided quadrilateral trees.

Each tree is a bilinear image of the unit square given by four corners ordered
(xi-, eta-), (xi+, eta-), (xi-, eta+), (xi+, eta+). Leaves are addressed by
(tree, level, ix, iy) with integer positions at their level. Local faces are
0: xi = -1, 1: xi = +1, 2: eta = -1, 3: eta = +1; faces 0/1 run along eta and
faces 2/3 along xi.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .dg.reference import ReferenceElement, build_reference_element

FACE_CORNERS = ((0, 2), (1, 3), (0, 1), (2, 3))


class TopologyError(ValueError):
    pass


class Leaf(NamedTuple):
    tree: int
    level: int
    ix: int
    iy: int

    def parent(self) -> "Leaf":
        return Leaf(self.tree, self.level - 1, self.ix // 2, self.iy // 2)

    def children(self):
        t, l, x, y = self
        return [Leaf(t, l + 1, 2 * x + a, 2 * y + b) for b in (0, 1) for a in (0, 1)]

    def morton(self, depth: int = 30) -> int:
        x = self.ix << (depth - self.level)
        y = self.iy << (depth - self.level)
        code = 0
        for b in range(depth):
            code |= ((x >> b) & 1) << (2 * b) | ((y >> b) & 1) << (2 * b + 1)
        return code


def _sort_key(leaf: Leaf):
    return (leaf.tree, leaf.morton(), leaf.level)


@dataclass(frozen=True)
class TreeLink:
    tree: int
    face: int
    flip: bool


def connect_trees(corners, periodic_x: float | None = None, periodic_y: float | None = None,
                  tol: float = 1e-9):
    """Match tree edges sharing endpoints; returns links[t][f] (TreeLink or None)."""
    corners = np.asarray(corners, dtype=float)
    scale = max(1.0, float(np.abs(corners).max()))
    q = tol * scale * 10

    def key(p):
        return (int(round(p[0] / q)), int(round(p[1] / q)))

    shifts = [np.zeros(2)]
    if periodic_x:
        shifts += [np.array([periodic_x, 0.0]), np.array([-periodic_x, 0.0])]
    if periodic_y:
        shifts += [np.array([0.0, periodic_y]), np.array([0.0, -periodic_y])]
    table = {}
    for t, c in enumerate(corners):
        for f, (a, b) in enumerate(FACE_CORNERS):
            table.setdefault((key(c[a]), key(c[b])), []).append((t, f))
    links = [[None] * 4 for _ in corners]
    for t, c in enumerate(corners):
        for f, (a, b) in enumerate(FACE_CORNERS):
            for s in shifts:
                pa, pb = key(c[a] + s), key(c[b] + s)
                for flip, k in ((False, (pa, pb)), (True, (pb, pa))):
                    for (t2, f2) in table.get(k, ()):
                        if (t2, f2) != (t, f):
                            links[t][f] = TreeLink(t2, f2, flip)
    return links


class Neighbor(NamedTuple):
    kind: str  # "boundary", "same", "coarser", "finer"
    leaves: tuple  # neighbor leaves (two for "finer", ordered along this face)
    face: int  # neighbor's local face
    flip: bool


@dataclass
class ForestMesh:
    corners: np.ndarray  # (n_trees, 4, 2)
    links: list
    boundary_tags: list  # tags[t][f] for unlinked tree faces
    leaves: list = field(default_factory=list)

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float)
        self.leaves = sorted(self.leaves, key=_sort_key) if self.leaves else [
            Leaf(t, 0, 0, 0) for t in range(len(self.corners))]
        self._index = {leaf: i for i, leaf in enumerate(self.leaves)}
        for t, row in enumerate(self.links):
            for f, link in enumerate(row):
                if link is None and self.boundary_tags[t][f] is None:
                    raise TopologyError(f"tree {t} face {f} has neither neighbor nor boundary tag")

    # construction -----------------------------------------------------------------
    @classmethod
    def from_trees(cls, corners, tag_fn: Callable | None = None, periodic_x=None,
                   periodic_y=None, level: int = 0):
        corners = np.asarray(corners, dtype=float)
        links = connect_trees(corners, periodic_x, periodic_y)
        tags = []
        for t, c in enumerate(corners):
            row = []
            for f, (a, b) in enumerate(FACE_CORNERS):
                if links[t][f] is not None:
                    row.append(None)
                else:
                    row.append(tag_fn(t, f, c[a], c[b]) if tag_fn else "wall")
            tags.append(row)
        mesh = cls(corners, links, tags)
        for _ in range(level):
            mesh = mesh.refined(mesh.leaves)
        return mesh

    @classmethod
    def rectangle(cls, x0, x1, y0, y1, nx, ny, level=0, periodic=(False, False), tag_fn=None):
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        corners = []
        for j in range(ny):
            for i in range(nx):
                corners.append([[xs[i], ys[j]], [xs[i + 1], ys[j]],
                                [xs[i], ys[j + 1]], [xs[i + 1], ys[j + 1]]])

        def default_tag(t, f, a, b):
            return ("left", "right", "bottom", "top")[f]

        return cls.from_trees(corners, tag_fn or default_tag,
                              periodic_x=(x1 - x0) if periodic[0] else None,
                              periodic_y=(y1 - y0) if periodic[1] else None, level=level)

    def with_leaves(self, leaves) -> "ForestMesh":
        return ForestMesh(self.corners, self.links, self.boundary_tags, list(leaves))

    def refined(self, targets) -> "ForestMesh":
        targets = set(targets)
        new = []
        for leaf in self.leaves:
            new.extend(leaf.children() if leaf in targets else [leaf])
        return self.with_leaves(new)

    # queries ------------------------------------------------------------------------
    def __len__(self):
        return len(self.leaves)

    def index(self, leaf: Leaf) -> int:
        return self._index[leaf]

    def has(self, leaf: Leaf) -> bool:
        return leaf in self._index

    @property
    def levels(self):
        return np.array([leaf.level for leaf in self.leaves])

    def _across(self, leaf: Leaf, face: int):
        """Same-level cell across ``face`` as (cell, neighbor face, flip) or a boundary tag."""
        t, l, x, y = leaf
        n = 1 << l
        dx, dy = ((-1, 0), (1, 0), (0, -1), (0, 1))[face]
        nx_, ny_ = x + dx, y + dy
        if 0 <= nx_ < n and 0 <= ny_ < n:
            return Leaf(t, l, nx_, ny_), face ^ 1, False
        link = self.links[t][face]
        if link is None:
            return self.boundary_tags[t][face]
        s = y if face in (0, 1) else x
        if link.flip:
            s = n - 1 - s
        f2 = link.face
        if f2 == 0:
            cell = Leaf(link.tree, l, 0, s)
        elif f2 == 1:
            cell = Leaf(link.tree, l, n - 1, s)
        elif f2 == 2:
            cell = Leaf(link.tree, l, s, 0)
        else:
            cell = Leaf(link.tree, l, s, n - 1)
        return cell, f2, link.flip

    @staticmethod
    def _face_children(cell: Leaf, face: int):
        """Children of ``cell`` touching its ``face``, ordered along that face."""
        ch = cell.children()  # order: (0,0),(1,0),(0,1),(1,1)
        return {0: (ch[0], ch[2]), 1: (ch[1], ch[3]), 2: (ch[0], ch[1]), 3: (ch[2], ch[3])}[face]

    def neighbor(self, leaf: Leaf, face: int) -> Neighbor:
        res = self._across(leaf, face)
        if isinstance(res, str):
            return Neighbor("boundary", (), -1, False)
        cell, f2, flip = res
        if self.has(cell):
            return Neighbor("same", (cell,), f2, flip)
        if cell.level > 0 and self.has(cell.parent()):
            return Neighbor("coarser", (cell.parent(),), f2, flip)
        kids = self._face_children(cell, f2)
        if all(self.has(k) for k in kids):
            kids = kids[::-1] if flip else kids
            return Neighbor("finer", tuple(kids), f2, flip)
        raise TopologyError(f"leaf {leaf} face {face}: neighbor not found (unbalanced mesh?)")

    def boundary_tag(self, leaf: Leaf, face: int):
        res = self._across(leaf, face)
        return res if isinstance(res, str) else None

    def _max_adjacent_level(self, leaf: Leaf, face: int) -> int:
        res = self._across(leaf, face)
        if isinstance(res, str):
            return -1
        cell, f2, _ = res
        anc = cell
        while anc.level > 0:
            anc = anc.parent()
            if self.has(anc):
                return anc.level
        best = -1
        stack = [cell]
        while stack:
            c = stack.pop()
            if self.has(c):
                best = max(best, c.level)
                continue
            if c.level > 40:
                raise TopologyError("runaway descent while searching neighbors")
            stack.extend(self._face_children(c, f2))
        return best

    def is_balanced(self) -> bool:
        return all(self._max_adjacent_level(leaf, f) <= leaf.level + 1
                   for leaf in self.leaves for f in range(4))

    # geometry -----------------------------------------------------------------------
    def leaf_ref_box(self, leaf: Leaf):
        n = 1 << leaf.level
        h = 2.0 / n
        return -1.0 + h * leaf.ix, -1.0 + h * leaf.iy, h

    def tree_map(self, t: int, xi, eta):
        c = self.corners[t]
        a = 0.5 * (1 - xi)
        b = 0.5 * (1 + xi)
        cl = 0.5 * (1 - eta)
        d = 0.5 * (1 + eta)
        x = a * cl * c[0, 0] + b * cl * c[1, 0] + a * d * c[2, 0] + b * d * c[3, 0]
        y = a * cl * c[0, 1] + b * cl * c[1, 1] + a * d * c[2, 1] + b * d * c[3, 1]
        return x, y

    def leaf_corners(self, leaf: Leaf):
        x0, y0, h = self.leaf_ref_box(leaf)
        pts = [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h)]
        return np.array([self.tree_map(leaf.tree, a, b) for a, b in pts])

    def node_coordinates(self, ref: ReferenceElement):
        """Physical node coordinates, shape (n_elem, 2, n, n) with [e, :, i(xi), j(eta)]."""
        r = ref.nodes
        out = np.empty((len(self.leaves), 2, ref.n, ref.n))
        for e, leaf in enumerate(self.leaves):
            x0, y0, h = self.leaf_ref_box(leaf)
            XI, ETA = np.meshgrid(x0 + 0.5 * h * (r + 1), y0 + 0.5 * h * (r + 1), indexing="ij")
            out[e, 0], out[e, 1] = self.tree_map(leaf.tree, XI, ETA)
        return out

    def edge_lengths(self):
        c = np.array([self.leaf_corners(leaf) for leaf in self.leaves])
        e = [np.linalg.norm(c[:, b] - c[:, a], axis=1) for a, b in FACE_CORNERS]
        return np.stack(e, axis=1)

    def min_edge_length(self) -> float:
        return float(self.edge_lengths().min())

    def to_json(self) -> str:
        elems = []
        for e, leaf in enumerate(self.leaves):
            tags = [self.boundary_tag(leaf, f) for f in range(4)]
            elems.append({"id": e, "tree": leaf.tree, "level": leaf.level,
                          "corners": self.leaf_corners(leaf).round(12).tolist(),
                          "boundary_tags": tags})
        return json.dumps({"format": "unstart-mesh", "version": 1,
                           "corner_order": ["xi-eta-", "xi+eta-", "xi-eta+", "xi+eta+"],
                           "n_elements": len(elems), "elements": elems}, indent=1)

    def export(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def balance_2to1(mesh: ForestMesh) -> ForestMesh:
    """Refine leaves until face-adjacent leaves differ by at most one level."""
    while True:
        marks = [leaf for leaf in mesh.leaves
                 if any(mesh._max_adjacent_level(leaf, f) > leaf.level + 1 for f in range(4))]
        if not marks:
            return mesh
        mesh = mesh.refined(marks)


# ---------------------------------------------------------------------------------
# solution transfer and refinement indicator


def _tensor(A, B, U):
    # U: (4, n, n) -> A along xi, B along eta
    return np.einsum("ai,bj,vij->vab", A, B, U)


def refine_solution(ref: ReferenceElement, U):
    """Interpolate one element's nodal data onto its four children (leaf child order)."""
    th = ref.to_half
    return [_tensor(th[a], th[b], U) for b in (0, 1) for a in (0, 1)]


def coarsen_solution(ref: ReferenceElement, children):
    """L2 projection of four children (leaf child order) onto the parent."""
    fh = ref.from_half
    out = 0.0
    k = 0
    for b in (0, 1):
        for a in (0, 1):
            out = out + _tensor(fh[a], fh[b], children[k])
            k += 1
    return out


def transfer(old: ForestMesh, new: ForestMesh, ref: ReferenceElement, U):
    """Move nodal data between two leaf sets of the same forest."""
    out = np.empty((len(new.leaves),) + U.shape[1:])

    def value(leaf: Leaf):
        if old.has(leaf):
            return U[old.index(leaf)]
        # descendant of an old leaf: interpolate down
        anc = leaf
        path = []
        while not old.has(anc):
            if anc.level == 0:
                break
            path.append(anc)
            anc = anc.parent()
        if old.has(anc):
            val = U[old.index(anc)]
            for node in reversed(path):
                kids = refine_solution(ref, val)
                par = node.parent()
                k = (node.ix - 2 * par.ix) + 2 * (node.iy - 2 * par.iy)
                val = kids[k]
            return val
        # ancestor of old leaves: project up
        return coarsen_solution(ref, [value(c) for c in leaf.children()])

    for i, leaf in enumerate(new.leaves):
        out[i] = value(leaf)
    return out


@dataclass(frozen=True)
class RefinementControl:
    refine_threshold: float = 0.5
    coarsen_threshold: float = 0.1
    max_level: int = 3
    min_level: int = 0
    epsilon: float | None = None  # None: 1e-3 x domain max |grad rho|
    every: int = 100

    def __post_init__(self):
        if not self.coarsen_threshold < self.refine_threshold:
            raise ValueError("coarsen_threshold must be below refine_threshold")
        if not self.min_level <= self.max_level:
            raise ValueError("min_level must not exceed max_level")


def element_derivative_ops(ref: ReferenceElement, X):
    """Metric terms for nodal coordinates X (n_e, 2, n, n)."""
    D = ref.diff_matrix
    x_xi = np.einsum("ik,ekj->eij", D, X[:, 0])
    x_eta = np.einsum("jk,eik->eij", D, X[:, 0])
    y_xi = np.einsum("ik,ekj->eij", D, X[:, 1])
    y_eta = np.einsum("jk,eik->eij", D, X[:, 1])
    J = x_xi * y_eta - x_eta * y_xi
    return x_xi, x_eta, y_xi, y_eta, J


def physical_gradient(ref: ReferenceElement, X, f, metrics=None):
    """Element-local gradient of nodal field f (n_e, n, n)."""
    D = ref.diff_matrix
    x_xi, x_eta, y_xi, y_eta, J = metrics if metrics is not None else element_derivative_ops(ref, X)
    f_xi = np.einsum("ik,ekj->eij", D, f)
    f_eta = np.einsum("jk,eik->eij", D, f)
    fx = (y_eta * f_xi - y_xi * f_eta) / J
    fy = (-x_eta * f_xi + x_xi * f_eta) / J
    return fx, fy


def lohner_indicator(mesh: ForestMesh, ref: ReferenceElement, rho, epsilon: float | None = None,
                     X=None):
    """Per-element normalized second-derivative density sensor.

    eta_e = h_e * max|lap rho| / (max|grad rho| + eps), with maxima over the
    element's nodes and h_e its shortest edge.
    """
    if epsilon is not None and epsilon <= 0:
        raise ValueError("epsilon must be positive")
    X = mesh.node_coordinates(ref) if X is None else X
    met = element_derivative_ops(ref, X)
    gx, gy = physical_gradient(ref, X, rho, met)
    gxx, _ = physical_gradient(ref, X, gx, met)
    _, gyy = physical_gradient(ref, X, gy, met)
    grad = np.sqrt(gx**2 + gy**2).reshape(len(rho), -1).max(axis=1)
    lap = np.abs(gxx + gyy).reshape(len(rho), -1).max(axis=1)
    if epsilon is None:
        epsilon = 1e-3 * grad.max() if grad.max() > 0 else 1.0
    h = _element_sizes(X)
    return h * lap / (grad + epsilon)


def _element_sizes(X):
    c = X[:, :, [0, -1, 0, -1], [0, 0, -1, -1]]  # (e, 2, 4 corners)
    e = [np.linalg.norm(c[:, :, b] - c[:, :, a], axis=1) for a, b in FACE_CORNERS]
    return np.min(np.stack(e, axis=1), axis=1)


def adapt(mesh: ForestMesh, ref: ReferenceElement, U, control: RefinementControl,
          indicator=None):
    """Refine/coarsen by the density indicator and transfer the solution."""
    eta = lohner_indicator(mesh, ref, U[:, 0], control.epsilon) if indicator is None else indicator
    levels = mesh.levels
    refine = {leaf for leaf, e, l in zip(mesh.leaves, eta, levels)
              if e > control.refine_threshold and l < control.max_level}
    # leaves below the minimum level are always refined
    refine |= {leaf for leaf in mesh.leaves if leaf.level < control.min_level}
    low = {leaf for leaf, e in zip(mesh.leaves, eta) if e < control.coarsen_threshold}

    new = balance_2to1(mesh.refined(refine)) if refine else mesh
    families = {}
    for leaf in mesh.leaves:
        if leaf.level > control.min_level and leaf in low and new.has(leaf):
            families.setdefault(leaf.parent(), []).append(leaf)
    parents = []
    for par, kids in families.items():
        if len(kids) != 4:
            continue
        ok = True
        for kid in kids:
            for f in range(4):
                if new._max_adjacent_level(kid, f) > kid.level:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            parents.append(par)
    if parents:
        drop = {k for p in parents for k in p.children()}
        new = new.with_leaves([l for l in new.leaves if l not in drop] + parents)
    if new.leaves == mesh.leaves:
        return mesh, U
    return new, transfer(mesh, new, ref, U)
