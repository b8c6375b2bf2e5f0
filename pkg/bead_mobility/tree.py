from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAX_DEPTH = 64
BOUNDARY_MARGIN = 1e-12

Point3 = Tuple[float, float, float]


class TreeDepthError(ValueError):
    """Raised when beads cannot be separated within MAX_DEPTH levels."""


# ------------------------------------------------------------------
# BEADS
# ------------------------------------------------------------------

@dataclass(frozen=True)
class Bead:
    position: Point3
    force: Point3
    result: Point3 = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BeadSet:
    """N beads as (N, 3) position and force arrays."""

    positions: np.ndarray
    forces: np.ndarray

    def __post_init__(self) -> None:
        positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        forces = np.array(self.forces, dtype=float).reshape(-1, 3)
        if positions.shape != forces.shape:
            raise ValueError(f"{len(positions)} positions but {len(forces)} forces")
        if not np.all(np.isfinite(forces)):
            raise ValueError("invalid force")
        positions.setflags(write=False)
        forces.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "forces", forces)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def bead(self, i: int) -> Bead:
        return Bead(tuple(self.positions[i].tolist()), tuple(self.forces[i].tolist()))

    def with_forces(self, forces) -> "BeadSet":
        return BeadSet(self.positions, forces)

    def permuted(self, order) -> "BeadSet":
        order = np.asarray(order)
        return BeadSet(self.positions[order], self.forces[order])


# ------------------------------------------------------------------
# BOXES
# ------------------------------------------------------------------

@dataclass(frozen=True)
class BoundingCube:
    center: Point3
    half_width: float

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def side(self) -> float:
        return 2.0 * self.half_width

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all(np.abs(pts - np.asarray(self.center)) <= self.half_width, axis=1)

    def child(self, octant: int) -> "BoundingCube":
        h = 0.5 * self.half_width
        cx, cy, cz = self.center
        return BoundingCube(
            (
                cx + (h if octant & 1 else -h),
                cy + (h if octant & 2 else -h),
                cz + (h if octant & 4 else -h),
            ),
            h,
        )


def compute_bounding_cube(positions) -> BoundingCube:
    """Smallest axis-aligned cube around the points, with every point strictly inside."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("no beads")
    if not np.all(np.isfinite(pts)):
        raise ValueError("invalid position")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    if half == 0.0:
        half = BOUNDARY_MARGIN * max(1.0, float(np.max(np.abs(center))))
    half *= 1.0 + BOUNDARY_MARGIN
    return BoundingCube(tuple(center.tolist()), half)


# ------------------------------------------------------------------
# TREE
# ------------------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    index: int
    cube: BoundingCube
    level: int
    anchor: Tuple[int, int, int]
    parent: int | None
    children: Tuple[int, ...]
    start: int
    stop: int

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def count(self) -> int:
        return self.stop - self.start

    @property
    def octant(self) -> int:
        ax, ay, az = self.anchor
        return (ax & 1) | ((ay & 1) << 1) | ((az & 1) << 2)


@dataclass(frozen=True)
class Tree:
    """
    Adaptive octree over reordered beads.

    Node indices follow breadth-first order, so every parent precedes its
    children. `positions` is the reordered copy; `permutation[k]` is the input
    index of the bead stored at position k.
    """

    nodes: Tuple[TreeNode, ...]
    positions: np.ndarray
    permutation: np.ndarray
    threshold: int
    leaf_of_bead: np.ndarray

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def leaves(self) -> Tuple[int, ...]:
        return tuple(node.index for node in self.nodes if node.is_leaf)

    @property
    def depth(self) -> int:
        return self.nodes[-1].level

    def levels(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in range(self.depth + 1)]
        for node in self.nodes:
            out[node.level].append(node.index)
        return out

    @property
    def smallest_leaf_side(self) -> float:
        return min(self.nodes[i].cube.side for i in self.leaves)

    def bead_range(self, index: int) -> slice:
        node = self.nodes[index]
        return slice(node.start, node.stop)


def build_tree(positions, threshold: int) -> Tree:
    """
    Split boxes holding more than `threshold` beads into octants until every
    leaf is small enough. Empty octants are dropped.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    cube = compute_bounding_cube(positions)
    pos = np.array(positions, dtype=float).reshape(-1, 3)
    n = pos.shape[0]
    order = np.arange(n)

    records: List[Dict] = [
        {"cube": cube, "level": 0, "anchor": (0, 0, 0), "parent": None, "children": [], "start": 0, "stop": n}
    ]
    frontier = [0]
    while frontier:
        next_frontier = []
        for idx in frontier:
            rec = records[idx]
            start, stop = rec["start"], rec["stop"]
            if stop - start <= threshold:
                continue
            if rec["level"] >= MAX_DEPTH:
                raise TreeDepthError("coincident points exceed depth limit")

            cx, cy, cz = rec["cube"].center
            seg = pos[start:stop]
            codes = (
                (seg[:, 0] > cx).astype(np.int64)
                | ((seg[:, 1] > cy).astype(np.int64) << 1)
                | ((seg[:, 2] > cz).astype(np.int64) << 2)
            )
            perm = np.argsort(codes, kind="stable")
            pos[start:stop] = seg[perm]
            order[start:stop] = order[start:stop][perm]
            counts = np.bincount(codes, minlength=8)

            ax, ay, az = rec["anchor"]
            offset = start
            for octant in range(8):
                count = int(counts[octant])
                if count == 0:
                    continue
                child = {
                    "cube": rec["cube"].child(octant),
                    "level": rec["level"] + 1,
                    "anchor": (2 * ax + (octant & 1), 2 * ay + ((octant >> 1) & 1), 2 * az + ((octant >> 2) & 1)),
                    "parent": idx,
                    "children": [],
                    "start": offset,
                    "stop": offset + count,
                }
                offset += count
                records.append(child)
                rec["children"].append(len(records) - 1)
                next_frontier.append(len(records) - 1)
        frontier = next_frontier

    nodes = tuple(
        TreeNode(
            index=i,
            cube=rec["cube"],
            level=rec["level"],
            anchor=rec["anchor"],
            parent=rec["parent"],
            children=tuple(rec["children"]),
            start=rec["start"],
            stop=rec["stop"],
        )
        for i, rec in enumerate(records)
    )
    leaf_of_bead = np.empty(n, dtype=np.int64)
    for node in nodes:
        if node.is_leaf:
            leaf_of_bead[node.start:node.stop] = node.index

    for arr in (pos, order, leaf_of_bead):
        arr.setflags(write=False)
    tree = Tree(nodes=nodes, positions=pos, permutation=order, threshold=threshold, leaf_of_bead=leaf_of_bead)
    logger.info("tree: %d beads, %d nodes, %d leaves, depth %d", n, len(nodes), len(tree.leaves), tree.depth)
    return tree


# ------------------------------------------------------------------
# INTERACTION LISTS
# ------------------------------------------------------------------

def boxes_touch(a: TreeNode, b: TreeNode) -> bool:
    """True when the closed cubes share at least one point (exact, on integer anchors)."""
    coarse, fine = (a, b) if a.level <= b.level else (b, a)
    shift = fine.level - coarse.level
    for c, f in zip(coarse.anchor, fine.anchor):
        lo = c << shift
        hi = (c + 1) << shift
        if f + 1 < lo or f > hi:
            return False
    return True


@dataclass(frozen=True)
class InteractionLists:
    """
    Adaptive-FMM lists, indexed by node.

    u: adjacent leaves of a leaf (itself included), direct sum
    v: well-separated children of the parent's colleagues, multipole-to-local
    w: non-adjacent descendants of a leaf's colleagues with an adjacent parent,
       multipole evaluated at the leaf's targets
    x: dual of w, sources go straight into the local expansion
    """

    colleagues: Tuple[Tuple[int, ...], ...]
    u: Tuple[Tuple[int, ...], ...]
    v: Tuple[Tuple[int, ...], ...]
    w: Tuple[Tuple[int, ...], ...]
    x: Tuple[Tuple[int, ...], ...]

    def sizes(self) -> Dict[str, int]:
        return {name: sum(len(entry) for entry in getattr(self, name)) for name in ("u", "v", "w", "x")}

    @property
    def has_far_field(self) -> bool:
        sizes = self.sizes()
        return sizes["v"] + sizes["w"] + sizes["x"] > 0


def compute_interaction_lists(tree: Tree) -> InteractionLists:
    nodes = tree.nodes
    count = len(nodes)
    colleagues: List[Tuple[int, ...]] = [()] * count
    v_lists: List[Tuple[int, ...]] = [()] * count
    colleagues[0] = (0,)

    for node in nodes[1:]:
        same, far = [], []
        for c in colleagues[node.parent]:
            for child in nodes[c].children:
                (same if boxes_touch(nodes[child], node) else far).append(child)
        colleagues[node.index] = tuple(sorted(same))
        v_lists[node.index] = tuple(sorted(far))

    u_sets: List[set] = [set() for _ in range(count)]
    w_lists: List[List[int]] = [[] for _ in range(count)]
    x_lists: List[List[int]] = [[] for _ in range(count)]

    for leaf in tree.leaves:
        target = nodes[leaf]
        for c in colleagues[leaf]:
            if c == leaf:
                u_sets[leaf].add(leaf)
                continue
            stack = [c]
            while stack:
                d = stack.pop()
                if boxes_touch(nodes[d], target):
                    if nodes[d].is_leaf:
                        u_sets[leaf].add(d)
                        u_sets[d].add(leaf)
                    else:
                        stack.extend(reversed(nodes[d].children))
                else:
                    w_lists[leaf].append(d)
                    x_lists[d].append(leaf)

    lists = InteractionLists(
        colleagues=tuple(colleagues),
        u=tuple(tuple(sorted(s)) for s in u_sets),
        v=tuple(v_lists),
        w=tuple(tuple(sorted(w)) for w in w_lists),
        x=tuple(tuple(sorted(x)) for x in x_lists),
    )
    logger.debug("interaction lists: %s", lists.sizes())
    return lists


def _leaves_below(tree: Tree) -> List[List[int]]:
    below: List[List[int]] = [[] for _ in tree.nodes]
    for node in reversed(tree.nodes):
        if node.is_leaf:
            below[node.index] = [node.index]
        else:
            below[node.index] = [leaf for child in node.children for leaf in below[child]]
    return below


def audit_pair_coverage(tree: Tree, lists: InteractionLists) -> np.ndarray:
    """
    Count, for every (target leaf, source leaf) pair, how many list pathways
    cover it. A correct set of lists gives a matrix of ones.
    """
    leaves = tree.leaves
    column = {leaf: k for k, leaf in enumerate(leaves)}
    below = _leaves_below(tree)
    counts = np.zeros((len(leaves), len(leaves)), dtype=np.int64)

    for row, leaf in enumerate(leaves):
        for d in lists.u[leaf]:
            counts[row, column[d]] += 1
        for d in lists.w[leaf]:
            for e in below[d]:
                counts[row, column[e]] += 1
        a = leaf
        while a is not None:
            for s in lists.v[a]:
                for e in below[s]:
                    counts[row, column[e]] += 1
            for s in lists.x[a]:
                counts[row, column[s]] += 1
            a = tree.nodes[a].parent
    return counts
