from __future__ import annotations

import numpy as np

from .tree import BeadSet

DISTRIBUTIONS = ("cube", "sphere")


def generate(distribution: str, n: int, seed: int) -> BeadSet:
    """
    Test configurations: uniform in the unit cube, or uniform on the unit
    sphere surface (z uniform in [-1, 1], azimuth uniform). Forces are uniform
    in [-1, 1]^3. Positions are drawn before forces from one seeded generator.
    """
    if n < 1:
        raise ValueError("nsources must be >= 1")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}, got {distribution!r}")
    rng = np.random.default_rng(seed)

    if distribution == "cube":
        positions = rng.random((n, 3))
    else:
        z = rng.uniform(-1.0, 1.0, n)
        phi = rng.uniform(0.0, 2.0 * np.pi, n)
        rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        positions = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])

    forces = rng.uniform(-1.0, 1.0, (n, 3))
    return BeadSet(positions, forces)
