from __future__ import annotations

import numpy as np

DOMAIN_TOLERANCE = 1e-14


class DomainError(ValueError):
    """Raised when a Legendre argument falls outside [-1, 1]."""


def legendre_table(x, nmax: int) -> np.ndarray:
    """
    Associated Legendre functions P_n^m(x) for 0 <= m <= n <= nmax.

    No Condon-Shortley phase: P_1^1(x) = +sqrt(1 - x^2). Works on scalars or
    arrays; the result has shape x.shape + (nmax + 1, nmax + 1) and is indexed
    [..., n, m] (entries with m > n are zero).
    """
    if nmax < 0:
        raise ValueError("nmax must be >= 0")
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(np.abs(x) > 1.0 + DOMAIN_TOLERANCE):
        raise DomainError(f"legendre argument outside [-1, 1] (max |x| = {np.max(np.abs(x))})")
    x = np.clip(x, -1.0, 1.0)

    table = np.zeros(x.shape + (nmax + 1, nmax + 1))
    somx2 = np.sqrt((1.0 - x) * (1.0 + x))
    pmm = np.ones_like(x)
    for m in range(nmax + 1):
        if m > 0:
            pmm = pmm * (2 * m - 1) * somx2
        table[..., m, m] = pmm
        if m == nmax:
            break
        p_prev = pmm
        p_cur = x * (2 * m + 1) * pmm
        table[..., m + 1, m] = p_cur
        for n in range(m + 2, nmax + 1):
            p_next = ((2 * n - 1) * x * p_cur - (n + m - 1) * p_prev) / (n - m)
            table[..., n, m] = p_next
            p_prev, p_cur = p_cur, p_next
    return table
