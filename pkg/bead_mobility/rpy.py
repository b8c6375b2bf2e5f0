"""
Rotne-Prager-Yamakawa mobility: direct pair forms, the four-charge Laplace
decomposition of the far field, and the O(N^2) reference product.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import KernelDefaults, load_kernel_defaults
from .laplace import ExpansionDerivatives
from .parallel import TaskPool, chunked
from .tree import BeadSet

logger = logging.getLogger(__name__)

DIRECT_CHUNK = 128


class CoincidentBeadsError(ValueError):
    """Two distinct beads share a position; carries their input indices."""

    def __init__(self, message: str, i: int, j: int):
        super().__init__(f"{message} ({i}, {j})")
        self.i = int(i)
        self.j = int(j)


@dataclass(frozen=True)
class RPYParams:
    radius: float
    boltzmann: float = 1.0
    temperature: float = 1.0
    viscosity: float = 1.0 / (6.0 * math.pi)

    def __post_init__(self) -> None:
        for name in ("radius", "boltzmann", "temperature", "viscosity"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")

    @classmethod
    def from_radius(cls, radius: float, defaults: KernelDefaults | None = None) -> "RPYParams":
        defaults = defaults or load_kernel_defaults()
        return cls(radius, defaults.boltzmann, defaults.temperature, defaults.viscosity)

    @property
    def kt(self) -> float:
        return self.boltzmann * self.temperature

    @property
    def c0(self) -> float:
        return self.kt / (6.0 * math.pi * self.viscosity * self.radius)

    @property
    def c1(self) -> float:
        return self.kt / (8.0 * math.pi * self.viscosity)

    @property
    def c2(self) -> float:
        return self.kt * self.radius**2 / (12.0 * math.pi * self.viscosity)


# ------------------------------------------------------------------
# PAIR FORMS: D_ij = f(r) I + g(r) e e^T
# ------------------------------------------------------------------

def far_coefficients(r, params: RPYParams):
    r = np.asarray(r, dtype=float)
    a2 = params.radius**2
    f = (params.c1 / r) * (1.0 + 2.0 * a2 / (3.0 * r * r))
    g = (params.c1 / r) * (1.0 - 2.0 * a2 / (r * r))
    return f, g


def near_coefficients(r, params: RPYParams):
    r = np.asarray(r, dtype=float)
    a = params.radius
    f = params.c0 * (1.0 - 9.0 * r / (32.0 * a))
    g = params.c0 * (3.0 * r / (32.0 * a))
    return f, g


def mobility_coefficients(r, params: RPYParams):
    """f, g with the overlap branch chosen per pair; r == 2a uses the far form."""
    r = np.asarray(r, dtype=float)
    f_far, g_far = far_coefficients(np.where(r > 0, r, 1.0), params)
    f_near, g_near = near_coefficients(r, params)
    far = r >= 2.0 * params.radius
    return np.where(far, f_far, f_near), np.where(far, g_far, g_near)


def _separation(xi, xj):
    d = np.asarray(xj, dtype=float) - np.asarray(xi, dtype=float)
    return d, float(np.linalg.norm(d))


def rpy_self(force, params: RPYParams) -> np.ndarray:
    return params.c0 * np.asarray(force, dtype=float)


def rpy_pair_far(xi, xj, force, params: RPYParams) -> np.ndarray:
    d, r = _separation(xi, xj)
    if r == 0:
        raise CoincidentBeadsError("coincident beads", 0, 1)
    if r < 2.0 * params.radius:
        raise ValueError("far form called in overlap regime")
    f, g = far_coefficients(r, params)
    e = d / r
    force = np.asarray(force, dtype=float)
    return f * force + g * e * (e @ force)


def rpy_pair_near(xi, xj, force, params: RPYParams) -> np.ndarray:
    d, r = _separation(xi, xj)
    if r == 0:
        raise CoincidentBeadsError("coincident beads", 0, 1)
    if r >= 2.0 * params.radius:
        raise ValueError("near form called outside overlap regime")
    f, g = near_coefficients(r, params)
    e = d / r
    force = np.asarray(force, dtype=float)
    return f * force + g * e * (e @ force)


def rpy_block(xi, xj, params: RPYParams) -> np.ndarray:
    """3x3 mobility block between two beads (self block when xi is xj)."""
    d, r = _separation(xi, xj)
    if r == 0:
        return params.c0 * np.eye(3)
    f, g = mobility_coefficients(r, params)
    e = d / r
    return f * np.eye(3) + g * np.outer(e, e)


def assemble_mobility_matrix(positions, params: RPYParams) -> np.ndarray:
    """Dense 3N x 3N mobility matrix. Coincident distinct beads are rejected."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = pos.shape[0]
    d = pos[None, :, :] - pos[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    off = ~np.eye(n, dtype=bool)
    _check_coincident(r, off, np.arange(n), np.arange(n))
    safe = np.where(off, r, 1.0)
    f, g = mobility_coefficients(safe, params)
    e = d / safe[..., None]
    blocks = f[..., None, None] * np.eye(3) + g[..., None, None] * e[..., :, None] * e[..., None, :]
    blocks[~off] = params.c0 * np.eye(3)
    return blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def _check_coincident(r, mask, target_ids, source_ids) -> None:
    hits = np.argwhere(mask & (r == 0))
    if hits.size:
        t, s = hits[0]
        i, j = sorted((int(target_ids[t]), int(source_ids[s])))
        raise CoincidentBeadsError("coincident beads", i, j)


def rpy_interactions(targets, sources, forces, params: RPYParams, target_ids=None, source_ids=None) -> np.ndarray:
    """
    Sum of pair mobilities applied to source forces, at each target.

    Pairs with equal ids are skipped (the self term is added separately).
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    d = sources[None, :, :] - targets[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    if target_ids is None or source_ids is None:
        valid = np.ones(r.shape, dtype=bool)
        target_ids = np.arange(len(targets)) if target_ids is None else target_ids
        source_ids = np.arange(len(sources)) if source_ids is None else source_ids
    else:
        valid = np.asarray(target_ids)[:, None] != np.asarray(source_ids)[None, :]
    _check_coincident(r, valid, target_ids, source_ids)

    safe = np.where(valid, r, 1.0)
    f, g = mobility_coefficients(safe, params)
    f = np.where(valid, f, 0.0)
    g = np.where(valid, g, 0.0)
    e = d / safe[..., None]
    e_dot_f = np.einsum("tsk,sk->ts", e, forces)
    return f @ forces + np.einsum("ts,tsk->tk", g * e_dot_f, e)


def direct_rpy_matvec(beads: BeadSet, params: RPYParams, targets=None, threads: int = 1) -> np.ndarray:
    """
    Reference O(N^2) product D.F at every bead, or at the given target indices.
    """
    pos, forces = beads.positions, beads.forces
    ids = np.arange(len(beads))
    targets = ids if targets is None else np.asarray(targets, dtype=np.int64)

    def _block(chunk):
        return rpy_interactions(pos[chunk], pos, forces, params, target_ids=chunk, source_ids=ids)

    with TaskPool(threads) as pool:
        parts = pool.map(_block, list(chunked(targets, DIRECT_CHUNK)))
    out = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    return out + params.c0 * forces[targets]


# ------------------------------------------------------------------
# LAPLACE DECOMPOSITION OF THE FAR FIELD
# ------------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceChargeSet:
    """Charges of the four potentials: q1..q3 = force components, q4 = F.y."""

    values: np.ndarray

    @property
    def q1(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def q2(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def q3(self) -> np.ndarray:
        return self.values[:, 2]

    @property
    def q4(self) -> np.ndarray:
        return self.values[:, 3]


def assemble_charges(positions, forces) -> LaplaceChargeSet:
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    f = np.asarray(forces, dtype=float).reshape(-1, 3)
    q4 = f[:, 0] * pos[:, 0] + f[:, 1] * pos[:, 1] + f[:, 2] * pos[:, 2]
    return LaplaceChargeSet(np.column_stack([f, q4]))


@dataclass(frozen=True)
class FarFieldPieces:
    """
    Per-target ingredients of the far-field recombination.

    values (3, T): L1, L2, L3; gradients (4, T, 3): grad L1..L4;
    hessians (3, T, 3, 3): Hessians of L1, L2, L3.
    """

    values: np.ndarray
    gradients: np.ndarray
    hessians: np.ndarray

    @classmethod
    def from_derivatives(cls, derivatives: ExpansionDerivatives) -> "FarFieldPieces":
        return cls(derivatives.value[:3], derivatives.gradient, derivatives.hessian[:3])


def combine_far_field(x, pieces: FarFieldPieces, params: RPYParams) -> np.ndarray:
    """
    u = C1 (L1, L2, L3) - C1 (x grad L1 + y grad L2 + z grad L3) + C1 grad L4 - C2 grad L_C

    with L_C = dL1/dx + dL2/dy + dL3/dz.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, 3)
    values = np.asarray(pieces.values, dtype=float).reshape(3, -1)
    grads = np.asarray(pieces.gradients, dtype=float).reshape(4, -1, 3)
    hess = np.asarray(pieces.hessians, dtype=float).reshape(3, -1, 3, 3)

    grad_lc = hess[0][:, :, 0] + hess[1][:, :, 1] + hess[2][:, :, 2]
    position_term = x[:, 0, None] * grads[0] + x[:, 1, None] * grads[1] + x[:, 2, None] * grads[2]
    u = params.c1 * (values.T - position_term + grads[3]) - params.c2 * grad_lc
    return u[0] if single else u


def direct_far_pieces(x, sources, forces) -> FarFieldPieces:
    """Exact FarFieldPieces at targets x from point sources (no self exclusion)."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    charges = assemble_charges(sources, forces).values
    d = x[:, None, :] - sources[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    inv = 1.0 / r
    inv3 = inv**3
    inv5 = inv**5

    values = np.einsum("ts,sc->ct", inv, charges[:, :3])
    gradients = -np.einsum("ts,tsk,sc->ctk", inv3, d, charges)
    outer = 3.0 * np.einsum("tsk,tsl->tskl", d, d) * inv5[..., None, None]
    kernel = outer - np.eye(3) * inv3[..., None, None]
    hessians = np.einsum("tskl,sc->ctkl", kernel, charges[:, :3])
    return FarFieldPieces(values, gradients, hessians)
