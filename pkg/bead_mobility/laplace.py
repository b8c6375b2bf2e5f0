"""
Scaled spherical-harmonic expansions of the Laplace kernel 1/r.

Stored coefficient sets keep only m >= 0 in the C_n^m P_n^|m| e^{im phi}
convention (no Condon-Shortley phase):

    multipole:  phi(x) = (1/s) sum A_n^m Y_n^m (s/r)^(n+1)
    local:      phi(x) = (1/s) sum B_n^m Y_n^m (r/s)^n

with s the box half-width. Translations run on "solid" harmonics (regular
R_n^m and irregular I_n^m, all orders, Condon-Shortley phase) where every
operator becomes an index convolution; the conversions in between are
diagonal. Every operator accepts a leading channel axis on the coefficients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from .legendre import legendre_table

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)


# ------------------------------------------------------------------
# INDEX LAYOUTS
# ------------------------------------------------------------------

def stored_size(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def full_size(order: int) -> int:
    return (order + 1) ** 2


def stored_index(n, m):
    return n * (n + 1) // 2 + m


def full_index(n, m):
    return n * n + n + m


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def stored_indices(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """(n, m) for the stored layout, 0 <= m <= n <= order."""
    n = np.concatenate([np.full(k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(k + 1) for k in range(order + 1)])
    return _frozen(n), _frozen(m)


@lru_cache(maxsize=None)
def full_indices(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """(n, m) for the full layout, -n <= m <= n <= order."""
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(order + 1)])
    return _frozen(n), _frozen(m)


@lru_cache(maxsize=None)
def factorials(kmax: int) -> np.ndarray:
    return _frozen(np.array([float(math.factorial(k)) for k in range(kmax + 1)]))


def _parity(j) -> np.ndarray:
    """(-1)^j for j >= 0, 1 otherwise."""
    j = np.asarray(j)
    return np.where(j >= 0, (-1.0) ** np.abs(j), 1.0)


# ------------------------------------------------------------------
# BASIS TABLES
# ------------------------------------------------------------------

@dataclass(frozen=True)
class SumTable:
    """Terms of one derivative sum: coefficient index -> (degree, order) of the basis."""

    source: np.ndarray
    degree: np.ndarray
    order: np.ndarray
    weight: np.ndarray
    shift: int


# name: (degree shift, order shift, sign, source orders)
_MULTIPOLE_SUMS = {
    "v0": (0, 0, 1, "zero"),
    "v": (0, 0, 1, "positive"),
    "s1": (1, 0, -1, "zero"),
    "s2": (1, 0, -1, "positive"),
    "s3": (1, 1, 1, "all"),
    "s4": (1, -1, -1, "positive"),
    "s5": (2, 1, -1, "all"),
    "s6": (2, -1, 1, "positive"),
    "s7": (2, 2, 1, "all"),
    "s8": (2, -2, 1, "positive"),
    "s9": (2, 0, 1, "zero"),
    "s10": (2, 0, 1, "positive"),
}

_LOCAL_SUMS = {
    "v0": (0, 0, 1, "zero"),
    "v": (0, 0, 1, "positive"),
    "s1": (-1, 0, 1, "zero"),
    "s2": (-1, 0, 1, "positive"),
    "s3": (-1, 1, -1, "all"),
    "s4": (-1, -1, 1, "positive"),
    "s5": (-2, 1, -1, "all"),
    "s6": (-2, -1, 1, "positive"),
    "s7": (-2, 2, 1, "all"),
    "s8": (-2, -2, 1, "positive"),
    "s9": (-2, 0, 1, "zero"),
    "s10": (-2, 0, 1, "positive"),
}


def _select(m: np.ndarray, which: str) -> np.ndarray:
    if which == "zero":
        return m == 0
    if which == "positive":
        return m >= 1
    return np.ones_like(m, dtype=bool)


@dataclass(frozen=True)
class HarmonicBasisTables:
    """
    Per-order constants shared by every expansion of that order.

    norm[k] = sqrt((n-m)!(n+m)!) for stored index k; the derivative sums of a
    multipole reach degree order + 2.
    """

    order: int
    degree: int
    norm: np.ndarray
    multipole_sums: Dict[str, SumTable]
    local_sums: Dict[str, SumTable]

    @classmethod
    def build(cls, order: int) -> "HarmonicBasisTables":
        if order < 1:
            raise ValueError("expansion order must be >= 1")
        degree = order + 2
        fact = factorials(2 * degree + 2)
        n, m = stored_indices(order)
        norm = np.sqrt(fact[n - m] * fact[n + m])

        multipole = {}
        for name, (a, b, sign, which) in _MULTIPOLE_SUMS.items():
            keep = _select(m, which)
            src = np.nonzero(keep)[0]
            n_out = n[src] + a
            m_out = m[src] + b
            weight = sign * _parity(m[src]) * _parity(m_out) * fact[n_out - np.abs(m_out)] / norm[src]
            multipole[name] = SumTable(src, n_out, m_out, weight, a)

        local = {}
        for name, (a, b, sign, which) in _LOCAL_SUMS.items():
            n_out = n + a
            m_out = m + b
            keep = _select(m, which) & (n_out >= 0) & (np.abs(m_out) <= n_out)
            src = np.nonzero(keep)[0]
            n_out, m_out = n_out[src], m_out[src]
            weight = sign * _parity(-m_out) * norm[src] / fact[n_out + np.abs(m_out)]
            local[name] = SumTable(src, n_out, m_out, weight, a)

        return cls(order, degree, _frozen(norm), multipole, local)


@lru_cache(maxsize=None)
def basis_tables(order: int) -> HarmonicBasisTables:
    logger.debug("building harmonic tables for p=%d", order)
    return HarmonicBasisTables.build(order)


# ------------------------------------------------------------------
# COEFFICIENT SETS
# ------------------------------------------------------------------

@dataclass
class _Expansion:
    order: int
    coeffs: np.ndarray
    center: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.scale = float(self.scale)
        if self.coeffs.shape[-1] != stored_size(self.order):
            raise ValueError(
                f"expected {stored_size(self.order)} coefficients for p={self.order}, got {self.coeffs.shape[-1]}"
            )
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def zeros(cls, order: int, center, scale: float, channels: int | None = None):
        shape = (stored_size(order),) if channels is None else (channels, stored_size(order))
        return cls(order, np.zeros(shape, dtype=complex), center, scale)

    def coefficient(self, n: int, m: int):
        """Coefficient of degree n, order m; negative orders by conjugate symmetry."""
        value = self.coeffs[..., stored_index(n, abs(m))]
        return np.conj(value) if m < 0 else value


class MultipoleCoeffs(_Expansion):
    """Outer expansion of a source cluster about `center`."""


class LocalCoeffs(_Expansion):
    """Inner expansion of the incoming far field about `center`."""


@dataclass(frozen=True)
class ExpansionDerivatives:
    """Value, gradient and Hessian of an expansion; leading axes are (channels, targets)."""

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    def __add__(self, other: "ExpansionDerivatives") -> "ExpansionDerivatives":
        return ExpansionDerivatives(
            self.value + other.value,
            self.gradient + other.gradient,
            self.hessian + other.hessian,
        )

    @property
    def trace(self) -> np.ndarray:
        return np.trace(self.hessian, axis1=-2, axis2=-1)


# ------------------------------------------------------------------
# CONVERSIONS BETWEEN STORED AND SOLID FORMS
# ------------------------------------------------------------------

@dataclass(frozen=True)
class _Conversion:
    norm: np.ndarray
    sign: np.ndarray
    gather: np.ndarray
    negative: np.ndarray
    negative_sign: np.ndarray


@lru_cache(maxsize=None)
def _conversion(order: int) -> _Conversion:
    n_s, m_s = stored_indices(order)
    fact = factorials(2 * order + 2)
    n_f, m_f = full_indices(order)
    return _Conversion(
        norm=_frozen(np.sqrt(fact[n_s - m_s] * fact[n_s + m_s])),
        sign=_frozen((-1.0) ** m_s),
        gather=_frozen(stored_index(n_f, np.abs(m_f))),
        negative=_frozen(m_f < 0),
        negative_sign=_frozen((-1.0) ** np.abs(m_f)),
    )


def multipole_to_solid(coeffs: np.ndarray, order: int) -> np.ndarray:
    """Stored multipole -> full solid coefficients mu (phi = (1/s) sum mu I(u/s))."""
    cv = _conversion(order)
    pos = (coeffs * (cv.sign / cv.norm))[..., cv.gather]
    return np.where(cv.negative, cv.negative_sign * np.conj(pos), pos)


def solid_to_multipole(rows: np.ndarray, order: int) -> np.ndarray:
    cv = _conversion(order)
    return rows * (cv.sign * cv.norm)


def local_to_solid(coeffs: np.ndarray, order: int) -> np.ndarray:
    """Stored local -> full solid coefficients lambda (phi = (1/s) sum lambda conj(R(u/s)))."""
    cv = _conversion(order)
    g = coeffs[..., cv.gather]
    norm = cv.norm[cv.gather]
    sign = cv.sign[cv.gather]
    return np.where(cv.negative, norm * g, sign * norm * np.conj(g))


def solid_to_local(rows: np.ndarray, order: int) -> np.ndarray:
    cv = _conversion(order)
    return cv.sign * np.conj(rows) / cv.norm


# ------------------------------------------------------------------
# SOLID HARMONICS
# ------------------------------------------------------------------

def _spherical(points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    rho2 = x * x + y * y
    r = np.sqrt(rho2 + z * z)
    rho = np.sqrt(rho2)
    cos_theta = np.where(r > 0, z / np.where(r > 0, r, 1.0), 1.0)
    phase = np.where(rho > 0, (x + 1j * y) / np.where(rho > 0, rho, 1.0), 1.0 + 0j)
    return r, cos_theta, phase


def _phase_powers(phase: np.ndarray, mmax: int) -> np.ndarray:
    out = np.empty(phase.shape + (mmax + 1,), dtype=complex)
    out[..., 0] = 1.0
    for m in range(1, mmax + 1):
        out[..., m] = out[..., m - 1] * phase
    return out


def regular_table(points, nmax: int) -> np.ndarray:
    """R_n^m(x) = r^n P~_n^m(cos theta) e^{im phi} / (n+m)! for every point, full layout."""
    r, cos_theta, phase = _spherical(points)
    n, m = full_indices(nmax)
    am = np.abs(m)
    legendre = legendre_table(cos_theta, nmax)
    powers = _phase_powers(phase, nmax)
    fact = factorials(2 * nmax + 1)
    base = (r[:, None] ** n) * legendre[:, n, am] * powers[:, am] * ((-1.0) ** am / fact[n + am])
    return np.where(m >= 0, base, ((-1.0) ** am) * np.conj(base))


def irregular_table(points, nmax: int) -> np.ndarray:
    """I_n^m(x) = (n-m)! P~_n^m(cos theta) e^{im phi} / r^(n+1) for every point, full layout."""
    r, cos_theta, phase = _spherical(points)
    if np.any(r == 0):
        raise ValueError("irregular harmonic evaluated at the expansion centre")
    n, m = full_indices(nmax)
    am = np.abs(m)
    legendre = legendre_table(cos_theta, nmax)
    powers = _phase_powers(phase, nmax)
    fact = factorials(2 * nmax + 1)
    base = legendre[:, n, am] * powers[:, am] * ((-1.0) ** am * fact[n - am]) / (r[:, None] ** (n + 1))
    return np.where(m >= 0, base, ((-1.0) ** am) * np.conj(base))


def _stored_columns(order: int) -> np.ndarray:
    n, m = stored_indices(order)
    return full_index(n, m)


# ------------------------------------------------------------------
# TRANSLATION MATRICES (stored rows x full columns)
# ------------------------------------------------------------------

@lru_cache(maxsize=None)
def _m2m_pattern(order: int):
    n_o, m_o = stored_indices(order)
    k_i, l_i = full_indices(order)
    dn = n_o[:, None] - k_i[None, :]
    dm = m_o[:, None] - l_i[None, :]
    valid = (dn >= 0) & (np.abs(dm) <= dn)
    gather = np.where(valid, full_index(dn, dm), 0)
    return _frozen(valid), _frozen(gather), k_i


@lru_cache(maxsize=None)
def _l2l_pattern(order: int):
    k_o, l_o = stored_indices(order)
    n_i, m_i = full_indices(order)
    dn = n_i[None, :] - k_o[:, None]
    dm = m_i[None, :] - l_o[:, None]
    valid = (dn >= 0) & (np.abs(dm) <= dn)
    gather = np.where(valid, full_index(dn, dm), 0)
    return _frozen(valid), _frozen(gather), k_o


@lru_cache(maxsize=None)
def _m2l_pattern(order: int):
    k_o, l_o = stored_indices(order)
    n_i, m_i = full_indices(order)
    gather = full_index(k_o[:, None] + n_i[None, :], l_o[:, None] + m_i[None, :])
    return _frozen(gather), k_o, n_i


def m2m_matrix(shift, ratio: float, order: int) -> np.ndarray:
    """Child solid multipole -> parent rows; shift = (child - parent)/s_parent, ratio = s_child/s_parent."""
    valid, gather, k_i = _m2m_pattern(order)
    table = np.conj(regular_table(shift, order)[0])
    return np.where(valid, table[gather] * (ratio ** k_i)[None, :], 0.0)


def l2l_matrix(shift, ratio: float, order: int) -> np.ndarray:
    """Parent solid local -> child rows; shift = (child - parent)/s_parent, ratio = s_child/s_parent."""
    valid, gather, k_o = _l2l_pattern(order)
    table = np.conj(regular_table(shift, order)[0])
    return np.where(valid, table[gather] * (ratio ** (k_o + 1))[:, None], 0.0)


def m2l_matrix(shift, ratio: float, order: int) -> np.ndarray:
    """Source solid multipole -> target local rows; shift = (target - source)/s_target, ratio = s_source/s_target."""
    gather, k_o, n_i = _m2l_pattern(order)
    table = irregular_table(shift, 2 * order)[0]
    return table[gather] * ((-1.0) ** k_o)[:, None] * (ratio ** n_i)[None, :]


@lru_cache(maxsize=None)
def _stored_to_solid_terms(order: int):
    """
    Each stored coefficient feeds at most two solid columns (m and -m).
    Rows 0..K-1 are the real parts, rows K..2K-1 the imaginary parts.
    """
    size = stored_size(order)
    n, m = stored_indices(order)
    unit = np.vstack([np.eye(size), 1j * np.eye(size)])
    solid = multipole_to_solid(unit, order)
    rows = np.arange(2 * size)
    plus = np.tile(full_index(n, m), 2)
    minus = np.tile(full_index(n, -m), 2)
    has_minus = np.tile(m > 0, 2)
    plus_weight = solid[rows, plus]
    minus_weight = np.where(has_minus, solid[rows, minus], 0.0)
    return _frozen(plus), _frozen(minus), _frozen(plus_weight), _frozen(minus_weight)


def m2l_stored_operator(shift, ratio: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    M2L acting on stored multipole coefficients split into real numbers.

    For A of shape (..., K): solid target rows = X @ (re + 1j * im) with
    X = [Re A, Im A]; both factors are real (2K, K) matrices.
    """
    plus, minus, plus_weight, minus_weight = _stored_to_solid_terms(order)
    dense = m2l_matrix(shift, ratio, order).T
    operator = plus_weight[:, None] * dense[plus] + minus_weight[:, None] * dense[minus]
    return np.ascontiguousarray(operator.real), np.ascontiguousarray(operator.imag)


# ------------------------------------------------------------------
# OPERATORS
# ------------------------------------------------------------------

def _charges(positions, strengths):
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    q = np.asarray(strengths, dtype=float)
    if q.shape[-1] != pos.shape[0]:
        raise ValueError(f"{q.shape[-1]} strengths for {pos.shape[0]} positions")
    return pos, q


def p2m(positions, strengths, center, scale: float, order: int) -> MultipoleCoeffs:
    """Multipole expansion about `center` of point charges (strengths may carry a channel axis)."""
    pos, q = _charges(positions, strengths)
    center = np.asarray(center, dtype=float)
    if pos.shape[0] == 0:
        return MultipoleCoeffs(order, np.zeros(q.shape[:-1] + (stored_size(order),), complex), center, scale)
    regular = regular_table((pos - center) / scale, order)[:, _stored_columns(order)]
    rows = q @ np.conj(regular)
    return MultipoleCoeffs(order, solid_to_multipole(rows, order), center, scale)


def p2l(positions, strengths, center, scale: float, order: int) -> LocalCoeffs:
    """Local expansion about `center` of well-separated point charges."""
    pos, q = _charges(positions, strengths)
    center = np.asarray(center, dtype=float)
    if pos.shape[0] == 0:
        return LocalCoeffs(order, np.zeros(q.shape[:-1] + (stored_size(order),), complex), center, scale)
    irregular = irregular_table((pos - center) / scale, order)[:, _stored_columns(order)]
    rows = q @ irregular
    return LocalCoeffs(order, solid_to_local(rows, order), center, scale)


def m2m(child: MultipoleCoeffs, parent_center, parent_scale: float) -> MultipoleCoeffs:
    p = child.order
    parent_center = np.asarray(parent_center, dtype=float)
    shift = (child.center - parent_center) / parent_scale
    matrix = m2m_matrix(shift, child.scale / parent_scale, p)
    rows = multipole_to_solid(child.coeffs, p) @ matrix.T
    return MultipoleCoeffs(p, solid_to_multipole(rows, p), parent_center, parent_scale)


def m2l(source: MultipoleCoeffs, target_center, target_scale: float) -> LocalCoeffs:
    p = source.order
    target_center = np.asarray(target_center, dtype=float)
    shift = (target_center - source.center) / target_scale
    matrix = m2l_matrix(shift, source.scale / target_scale, p)
    rows = multipole_to_solid(source.coeffs, p) @ matrix.T
    return LocalCoeffs(p, solid_to_local(rows, p), target_center, target_scale)


def l2l(parent: LocalCoeffs, child_center, child_scale: float) -> LocalCoeffs:
    p = parent.order
    child_center = np.asarray(child_center, dtype=float)
    shift = (child_center - parent.center) / parent.scale
    matrix = l2l_matrix(shift, child_scale / parent.scale, p)
    rows = local_to_solid(parent.coeffs, p) @ matrix.T
    return LocalCoeffs(p, solid_to_local(rows, p), child_center, child_scale)


# ------------------------------------------------------------------
# VALUE / GRADIENT / HESSIAN
# ------------------------------------------------------------------

def _derivative_sums(coeffs, relative, scale, tables: Dict[str, SumTable], degree, outer) -> Dict[str, np.ndarray]:
    r, cos_theta, phase = _spherical(relative)
    legendre = legendre_table(cos_theta, degree)
    powers = _phase_powers(phase, degree)
    n_all = np.arange(degree + 1)
    if outer:
        radial = (scale / r)[:, None] ** (n_all + 1)
    else:
        radial = (r / scale)[:, None] ** n_all

    sums = {}
    for name, table in tables.items():
        am = np.abs(table.order)
        angular = powers[:, am]
        angular = np.where(table.order < 0, np.conj(angular), angular)
        basis = legendre[:, table.degree, am] * angular * radial[:, table.degree]
        weighted = coeffs[..., table.source] * table.weight
        factor = scale ** (-(table.shift + 1)) if outer else scale ** (table.shift - 1)
        sums[name] = (weighted @ basis.T) * factor
    return sums


def _assemble(sums: Dict[str, np.ndarray]) -> ExpansionDerivatives:
    value = sums["v0"].real + 2.0 * sums["v"].real
    dz = sums["s1"].real + 2.0 * sums["s2"].real
    g_plus = sums["s3"] + np.conj(sums["s4"])
    g_plus_z = sums["s5"] + np.conj(sums["s6"])
    g_plus_plus = sums["s7"] + np.conj(sums["s8"])
    dzz = sums["s9"].real + 2.0 * sums["s10"].real

    dxx = 0.5 * (g_plus_plus.real - dzz)
    dyy = 0.5 * (-g_plus_plus.real - dzz)
    dxy = 0.5 * g_plus_plus.imag
    dxz = g_plus_z.real
    dyz = g_plus_z.imag

    gradient = np.stack([g_plus.real, g_plus.imag, dz], axis=-1)
    hessian = np.stack(
        [
            np.stack([dxx, dxy, dxz], axis=-1),
            np.stack([dxy, dyy, dyz], axis=-1),
            np.stack([dxz, dyz, dzz], axis=-1),
        ],
        axis=-2,
    )
    return ExpansionDerivatives(value, gradient, hessian)


def _squeeze_single(result: ExpansionDerivatives, single: bool) -> ExpansionDerivatives:
    if not single:
        return result
    return ExpansionDerivatives(result.value[..., 0], result.gradient[..., 0, :], result.hessian[..., 0, :, :])


def eval_multipole_derivatives(expansion: MultipoleCoeffs, x) -> ExpansionDerivatives:
    """
    Value, gradient and Hessian of a multipole expansion at one or many targets.

    Targets must lie outside the sphere of radius sqrt(3)*scale that encloses the
    source box.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    relative = x.reshape(-1, 3) - expansion.center
    dist = np.linalg.norm(relative, axis=1)
    if np.any(dist <= SQRT3 * expansion.scale):
        raise ValueError("target inside multipole sphere")
    tables = basis_tables(expansion.order)
    sums = _derivative_sums(
        expansion.coeffs, relative, expansion.scale, tables.multipole_sums, tables.degree, outer=True
    )
    return _squeeze_single(_assemble(sums), single)


def eval_local_derivatives(expansion: LocalCoeffs, x) -> ExpansionDerivatives:
    """Value, gradient and Hessian of a local expansion at one or many targets."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    relative = x.reshape(-1, 3) - expansion.center
    tables = basis_tables(expansion.order)
    sums = _derivative_sums(
        expansion.coeffs, relative, expansion.scale, tables.local_sums, expansion.order, outer=False
    )
    return _squeeze_single(_assemble(sums), single)


def m2t(expansion: MultipoleCoeffs, x):
    """Potential of a multipole expansion at one or many targets."""
    return eval_multipole_derivatives(expansion, x).value
