"""
Adaptive FMM evaluation of the RPY product D.F.

The four Laplace potentials (force components and F.y) share one tree and
travel through the passes together as channels of the same coefficient
arrays. Passes run level by level; inside a level every task returns its
contribution and the caller adds them in a fixed order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from time import perf_counter
from typing import Dict, List, Tuple

import numpy as np

from .laplace import (
    ExpansionDerivatives,
    LocalCoeffs,
    MultipoleCoeffs,
    eval_local_derivatives,
    eval_multipole_derivatives,
    l2l_matrix,
    local_to_solid,
    m2l_stored_operator,
    m2m_matrix,
    multipole_to_solid,
    p2l,
    p2m,
    solid_to_local,
    solid_to_multipole,
    stored_size,
)
from .parallel import TaskPool, chunked
from .rpy import FarFieldPieces, RPYParams, assemble_charges, combine_far_field, rpy_interactions
from .tree import BeadSet, InteractionLists, Tree, build_tree, compute_interaction_lists

logger = logging.getLogger(__name__)

# digits -> (expansion order, refinement threshold)
DIGIT_TABLE = {3: (10, 80), 6: (20, 100), 9: (30, 120)}


class OverlapPreconditionError(ValueError):
    """Bead diameter larger than a leaf: an overlapping pair could land in a far list."""


@dataclass(frozen=True)
class AccuracySetting:
    digits: int
    order: int
    threshold: int

    @classmethod
    def from_digits(cls, digits: int) -> "AccuracySetting":
        if digits not in DIGIT_TABLE:
            raise ValueError(f"accuracy must be one of {sorted(DIGIT_TABLE)} digits, got {digits}")
        order, threshold = DIGIT_TABLE[digits]
        return cls(digits, order, threshold)


@dataclass
class NodeExpansions:
    """Multipole and local coefficients for every node, shape (nodes, channels, K)."""

    order: int
    centers: np.ndarray
    scales: np.ndarray
    multipole: np.ndarray
    local: np.ndarray

    @classmethod
    def empty(cls, tree: Tree, order: int, channels: int) -> "NodeExpansions":
        count = len(tree.nodes)
        centers = np.array([node.cube.center for node in tree.nodes], dtype=float)
        scales = np.array([node.cube.half_width for node in tree.nodes], dtype=float)
        shape = (count, channels, stored_size(order))
        return cls(order, centers, scales, np.zeros(shape, complex), np.zeros(shape, complex))

    def multipole_at(self, index: int) -> MultipoleCoeffs:
        return MultipoleCoeffs(self.order, self.multipole[index], self.centers[index], self.scales[index])

    def local_at(self, index: int) -> LocalCoeffs:
        return LocalCoeffs(self.order, self.local[index], self.centers[index], self.scales[index])


@dataclass(frozen=True)
class EvaluationReport:
    nsources: int
    order: int
    threshold: int
    threads: int
    timings: Dict[str, float]
    nodes: int
    leaves: int
    depth: int
    list_sizes: Dict[str, int] = field(default_factory=dict)

    def as_record(self) -> Dict[str, object]:
        return {
            "nsources": self.nsources,
            "order": self.order,
            "threshold": self.threshold,
            "threads": self.threads,
            "nodes": self.nodes,
            "leaves": self.leaves,
            "depth": self.depth,
            **{f"list_{name}": size for name, size in self.list_sizes.items()},
        }


# ------------------------------------------------------------------
# OCTANT OPERATORS (level independent once scaled)
# ------------------------------------------------------------------

def _octant_shift(octant: int) -> np.ndarray:
    return np.array([0.5 if octant & 1 else -0.5, 0.5 if octant & 2 else -0.5, 0.5 if octant & 4 else -0.5])


@lru_cache(maxsize=None)
def _m2m_octant(order: int, octant: int) -> np.ndarray:
    return m2m_matrix(_octant_shift(octant), 0.5, order)


@lru_cache(maxsize=None)
def _l2l_octant(order: int, octant: int) -> np.ndarray:
    return l2l_matrix(_octant_shift(octant), 0.5, order)


def _octant_groups(tree: Tree, indices: List[int]) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    groups = []
    for octant in range(8):
        children = [i for i in indices if tree.nodes[i].octant == octant]
        if children:
            parents = [tree.nodes[i].parent for i in children]
            groups.append((octant, np.array(children), np.array(parents)))
    return groups


def _bead_indices(tree: Tree, boxes) -> np.ndarray:
    return np.concatenate([np.arange(tree.nodes[b].start, tree.nodes[b].stop) for b in boxes])


# ------------------------------------------------------------------
# PASSES
# ------------------------------------------------------------------

def upward_pass(tree: Tree, charges, order: int, pool: TaskPool | None = None) -> NodeExpansions:
    """P2M at the leaves, then M2M from the deepest level to the root."""
    pool = pool or TaskPool(1)
    charges = np.asarray(charges, dtype=float).reshape(len(tree.positions), -1)
    expansions = NodeExpansions.empty(tree, order, charges.shape[1])

    def _p2m(leaf: int) -> np.ndarray:
        part = tree.bead_range(leaf)
        return p2m(
            tree.positions[part], charges[part].T, expansions.centers[leaf], expansions.scales[leaf], order
        ).coeffs

    leaves = tree.leaves
    for leaf, coeffs in zip(leaves, pool.map(_p2m, leaves)):
        expansions.multipole[leaf] = coeffs

    def _shift(group) -> Tuple[np.ndarray, np.ndarray]:
        octant, children, parents = group
        rows = multipole_to_solid(expansions.multipole[children], order) @ _m2m_octant(order, octant).T
        return parents, solid_to_multipole(rows, order)

    levels = tree.levels()
    for level in range(tree.depth, 0, -1):
        for parents, contribution in pool.map(_shift, _octant_groups(tree, levels[level])):
            expansions.multipole[parents] += contribution
    return expansions


def interaction_pass(
    tree: Tree,
    lists: InteractionLists,
    expansions: NodeExpansions,
    charges,
    pool: TaskPool | None = None,
) -> NodeExpansions:
    """
    V-list sources enter each box's local expansion by M2L, X-list sources by
    P2L. W-list multipoles are left for target evaluation.
    """
    pool = pool or TaskPool(1)
    order = expansions.order
    charges = np.asarray(charges, dtype=float).reshape(len(tree.positions), -1)

    # M2L grouped by anchor offset: d / s_target = 2 * offset for same-level boxes
    pairs: Dict[Tuple[int, int, int], Tuple[List[int], List[int]]] = {}
    for node in tree.nodes:
        for source in lists.v[node.index]:
            sa = tree.nodes[source].anchor
            offset = (node.anchor[0] - sa[0], node.anchor[1] - sa[1], node.anchor[2] - sa[2])
            targets, sources = pairs.setdefault(offset, ([], []))
            targets.append(node.index)
            sources.append(source)

    if pairs:
        channels = expansions.multipole.shape[1]
        size = stored_size(order)
        split = np.concatenate([expansions.multipole.real, expansions.multipole.imag], axis=-1)

        def _m2l(offset) -> Tuple[np.ndarray, np.ndarray]:
            targets, sources = pairs[offset]
            re, im = m2l_stored_operator(2.0 * np.array(offset, dtype=float), 1.0, order)
            # one product per offset over every (pair, channel) row
            rows = split[np.array(sources)].reshape(-1, 2 * size)
            out = (rows @ re + 1j * (rows @ im)).reshape(len(sources), channels, size)
            return np.array(targets), out

        incoming = np.zeros_like(expansions.local)
        for batch in chunked(sorted(pairs), 2 * pool.threads):
            for targets, rows in pool.map(_m2l, batch):
                incoming[targets] += rows
        expansions.local += solid_to_local(incoming, order)
        logger.debug("m2l: %d offsets, %d pairs", len(pairs), sum(len(t) for t, _ in pairs.values()))

    def _p2l(index: int) -> np.ndarray:
        part = _bead_indices(tree, lists.x[index])
        return p2l(
            tree.positions[part], charges[part].T, expansions.centers[index], expansions.scales[index], order
        ).coeffs

    x_targets = [node.index for node in tree.nodes if lists.x[node.index]]
    for index, coeffs in zip(x_targets, pool.map(_p2l, x_targets)):
        expansions.local[index] += coeffs
    return expansions


def downward_pass(tree: Tree, expansions: NodeExpansions, pool: TaskPool | None = None) -> NodeExpansions:
    """L2L from the root level down, parents before children."""
    pool = pool or TaskPool(1)
    order = expansions.order

    def _shift(group) -> Tuple[np.ndarray, np.ndarray]:
        octant, children, parents = group
        rows = local_to_solid(expansions.local[parents], order) @ _l2l_octant(order, octant).T
        return children, solid_to_local(rows, order)

    levels = tree.levels()
    for level in range(1, tree.depth + 1):
        for children, contribution in pool.map(_shift, _octant_groups(tree, levels[level])):
            expansions.local[children] += contribution
    return expansions


def far_field_derivatives(
    tree: Tree,
    lists: InteractionLists,
    expansions: NodeExpansions,
    pool: TaskPool | None = None,
) -> ExpansionDerivatives:
    """Value, gradient and Hessian of every channel at every bead (tree order)."""
    pool = pool or TaskPool(1)
    channels = expansions.multipole.shape[1]
    n = len(tree.positions)

    def _leaf(leaf: int) -> ExpansionDerivatives:
        targets = tree.positions[tree.bead_range(leaf)]
        result = eval_local_derivatives(expansions.local_at(leaf), targets)
        for box in lists.w[leaf]:
            result = result + eval_multipole_derivatives(expansions.multipole_at(box), targets)
        return result

    value = np.zeros((channels, n))
    gradient = np.zeros((channels, n, 3))
    hessian = np.zeros((channels, n, 3, 3))
    leaves = tree.leaves
    for leaf, result in zip(leaves, pool.map(_leaf, leaves)):
        part = tree.bead_range(leaf)
        value[:, part] = result.value
        gradient[:, part] = result.gradient
        hessian[:, part] = result.hessian
    return ExpansionDerivatives(value, gradient, hessian)


def leaf_evaluation(
    tree: Tree,
    lists: InteractionLists,
    expansions: NodeExpansions,
    params: RPYParams,
    pool: TaskPool | None = None,
) -> np.ndarray:
    """Far-field RPY velocity at every bead (tree order)."""
    derivatives = far_field_derivatives(tree, lists, expansions, pool)
    return combine_far_field(tree.positions, FarFieldPieces.from_derivatives(derivatives), params)


def near_field_pass(
    tree: Tree,
    lists: InteractionLists,
    forces,
    params: RPYParams,
    pool: TaskPool | None = None,
) -> np.ndarray:
    """Direct RPY sums over U-lists plus the self term (tree order)."""
    pool = pool or TaskPool(1)
    ids = tree.permutation

    def _leaf(leaf: int) -> np.ndarray:
        part = tree.bead_range(leaf)
        sources = _bead_indices(tree, lists.u[leaf])
        velocity = rpy_interactions(
            tree.positions[part],
            tree.positions[sources],
            forces[sources],
            params,
            target_ids=ids[part],
            source_ids=ids[sources],
        )
        return velocity + params.c0 * forces[part]

    out = np.zeros((len(tree.positions), 3))
    leaves = tree.leaves
    for leaf, velocity in zip(leaves, pool.map(_leaf, leaves)):
        out[tree.bead_range(leaf)] = velocity
    return out


# ------------------------------------------------------------------
# DRIVERS
# ------------------------------------------------------------------

def _check_overlap(tree: Tree, lists: InteractionLists, params: RPYParams) -> None:
    if lists.has_far_field and 2.0 * params.radius > tree.smallest_leaf_side:
        raise OverlapPreconditionError(
            "bead diameter exceeds leaf size; overlapping pair may be treated as far "
            f"(2a = {2.0 * params.radius:.6g}, smallest leaf side = {tree.smallest_leaf_side:.6g})"
        )


def evaluate(
    beads: BeadSet,
    params: RPYParams,
    accuracy: AccuracySetting,
    threshold_override: int | None = None,
    threads: int = 1,
) -> Tuple[np.ndarray, EvaluationReport]:
    """D.F at every bead, in input order, and the phase report."""
    timings: Dict[str, float] = {}
    started = perf_counter()
    threshold = threshold_override if threshold_override is not None else accuracy.threshold
    tree = build_tree(beads.positions, threshold)
    lists = compute_interaction_lists(tree)
    timings["tree"] = perf_counter() - started
    _check_overlap(tree, lists, params)

    forces = beads.forces[tree.permutation]
    charges = assemble_charges(tree.positions, forces).values

    with TaskPool(threads) as pool:
        mark = perf_counter()
        expansions = upward_pass(tree, charges, accuracy.order, pool)
        timings["upward"] = perf_counter() - mark

        mark = perf_counter()
        interaction_pass(tree, lists, expansions, charges, pool)
        timings["interaction"] = perf_counter() - mark

        mark = perf_counter()
        downward_pass(tree, expansions, pool)
        far = leaf_evaluation(tree, lists, expansions, params, pool)
        timings["downward"] = perf_counter() - mark

        mark = perf_counter()
        near = near_field_pass(tree, lists, forces, params, pool)
        timings["near_field"] = perf_counter() - mark

    ordered = near + far
    result = np.empty_like(ordered)
    result[tree.permutation] = ordered
    timings["total"] = perf_counter() - started

    report = EvaluationReport(
        nsources=len(beads),
        order=accuracy.order,
        threshold=threshold,
        threads=threads,
        timings=timings,
        nodes=len(tree.nodes),
        leaves=len(tree.leaves),
        depth=tree.depth,
        list_sizes=lists.sizes(),
    )
    logger.info("evaluated N=%d p=%d in %.3fs", len(beads), accuracy.order, timings["total"])
    return result, report


def _laplace_direct(targets, sources, charges, target_ids, source_ids) -> Tuple[np.ndarray, np.ndarray]:
    d = targets[:, None, :] - sources[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    valid = target_ids[:, None] != source_ids[None, :]
    inv = np.where(valid, 1.0 / np.where(valid, r, 1.0), 0.0)
    potential = (inv @ charges).T
    gradient = -np.einsum("ts,tsk,sc->ctk", inv**3, d, charges)
    return potential, gradient


def evaluate_laplace(
    positions,
    charges,
    order: int,
    threshold: int,
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Potential and gradient of sum_j q_j / |x - y_j| (j != i) at every point,
    one row per charge channel, in input order.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    charges = np.asarray(charges, dtype=float).reshape(len(positions), -1)
    tree = build_tree(positions, threshold)
    lists = compute_interaction_lists(tree)
    sorted_charges = charges[tree.permutation]
    ids = np.arange(len(positions))

    with TaskPool(threads) as pool:
        expansions = upward_pass(tree, sorted_charges, order, pool)
        interaction_pass(tree, lists, expansions, sorted_charges, pool)
        downward_pass(tree, expansions, pool)
        far = far_field_derivatives(tree, lists, expansions, pool)

        def _near(leaf: int):
            part = tree.bead_range(leaf)
            sources = _bead_indices(tree, lists.u[leaf])
            return _laplace_direct(
                tree.positions[part], tree.positions[sources], sorted_charges[sources], ids[part], ids[sources]
            )

        potential = far.value.copy()
        gradient = far.gradient.copy()
        leaves = tree.leaves
        for leaf, (pot, grad) in zip(leaves, pool.map(_near, leaves)):
            part = tree.bead_range(leaf)
            potential[:, part] += pot
            gradient[:, part] += grad

    out_potential = np.empty_like(potential)
    out_gradient = np.empty_like(gradient)
    out_potential[:, tree.permutation] = potential
    out_gradient[:, tree.permutation] = gradient
    return out_potential, out_gradient
