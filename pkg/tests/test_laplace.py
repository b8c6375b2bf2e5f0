from __future__ import annotations

import numpy as np
import pytest

from bead_mobility.laplace import (
    LocalCoeffs,
    MultipoleCoeffs,
    basis_tables,
    eval_local_derivatives,
    eval_multipole_derivatives,
    full_index,
    full_indices,
    full_size,
    irregular_table,
    l2l,
    local_to_solid,
    m2l,
    m2l_matrix,
    m2l_stored_operator,
    m2m,
    m2t,
    multipole_to_solid,
    p2l,
    p2m,
    regular_table,
    stored_index,
    stored_size,
)


def _direct(x, sources, q):
    d = np.atleast_2d(x)[:, None, :] - sources[None, :, :]
    return (q / np.linalg.norm(d, axis=-1)).sum(axis=1)


def _cluster(rng, center, half, count):
    return np.asarray(center) + rng.uniform(-half, half, (count, 3))


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


# ------------------------------------------------------------------
# solid harmonics
# ------------------------------------------------------------------

def test_addition_theorem():
    rng = np.random.default_rng(0)
    y = rng.uniform(-0.3, 0.3, 3)
    x = np.array([1.2, -0.7, 0.9])
    p = 25
    series = np.sum(np.conj(regular_table(y, p)[0]) * irregular_table(x, p)[0])
    assert series.real == pytest.approx(1.0 / np.linalg.norm(x - y), rel=1e-12)
    assert abs(series.imag) < 1e-13


def test_tables_finite_and_positive():
    tables = basis_tables(12)
    assert tables.degree == 14
    assert np.all(np.isfinite(tables.norm)) and np.all(tables.norm > 0)
    for sums in (tables.multipole_sums, tables.local_sums):
        for table in sums.values():
            assert np.all(np.isfinite(table.weight)) and np.all(table.weight != 0)
            assert np.all(np.abs(table.order) <= table.degree) and table.degree.max() <= tables.degree


# ------------------------------------------------------------------
# p2m / m2t
# ------------------------------------------------------------------

def test_p2m_unit_charge_at_center():
    M = p2m(np.zeros((1, 3)), np.ones(1), np.zeros(3), 0.5, 6)
    assert M.coeffs[0] == pytest.approx(1.0)
    assert np.allclose(M.coeffs[1:], 0.0)


def test_p2m_dipole_along_z():
    pos = np.array([[0.0, 0.0, 0.1], [0.0, 0.0, -0.1]])
    M = p2m(pos, np.array([1.0, -1.0]), np.zeros(3), 0.5, 4)
    assert abs(M.coefficient(0, 0)) < 1e-15
    assert abs(M.coefficient(1, 0).real) > 0.1
    assert abs(M.coefficient(1, 0).imag) < 1e-15
    assert abs(M.coefficient(1, 1)) < 1e-15


def test_m2t_matches_direct_sum():
    rng = np.random.default_rng(1)
    center = np.array([0.2, -0.1, 0.4])
    src = _cluster(rng, center, 0.25, 30)
    q = rng.uniform(-1, 1, 30)
    M = p2m(src, q, center, 0.25, 20)
    for _ in range(10):
        x = center + 3.0 * _unit(rng)
        assert m2t(M, x) == pytest.approx(_direct(x, src, q)[0], rel=1e-9)


def test_monopole_derivatives():
    M = MultipoleCoeffs.zeros(8, np.zeros(3), 0.3)
    M.coeffs[0] = 1.0
    r = 2.0
    d = eval_multipole_derivatives(M, np.array([0.0, 0.0, r]))
    assert d.value == pytest.approx(1 / r)
    assert np.allclose(d.gradient, [0, 0, -1 / r**2], atol=1e-15)
    assert np.allclose(d.hessian, np.diag([-1 / r**3, -1 / r**3, 2 / r**3]), atol=1e-15)


def test_target_inside_multipole_sphere_rejected():
    M = MultipoleCoeffs.zeros(4, np.zeros(3), 1.0)
    with pytest.raises(ValueError, match="target inside multipole sphere"):
        eval_multipole_derivatives(M, np.array([1.0, 1.0, 0.5]))


def test_implied_negative_orders_give_real_potential():
    rng = np.random.default_rng(2)
    src = _cluster(rng, np.zeros(3), 0.5, 12)
    q = rng.uniform(-1, 1, 12)
    M = p2m(src, q, np.zeros(3), 0.5, 10)
    x = np.array([1.5, 2.0, -0.4])
    mu = multipole_to_solid(M.coeffs, 10)
    full = np.sum(mu * irregular_table(x / 0.5, 10)[0]) / 0.5
    assert abs(full.imag) <= 1e-13 * abs(full.real)
    assert full.real == pytest.approx(m2t(M, x), rel=1e-12)


# ------------------------------------------------------------------
# translations
# ------------------------------------------------------------------

def test_m2m_equals_p2m_about_parent():
    rng = np.random.default_rng(3)
    parent_center, parent_scale = np.zeros(3), 1.0
    child_center, child_scale = np.array([0.5, -0.5, 0.5]), 0.5
    src = _cluster(rng, child_center, child_scale, 25)
    q = rng.uniform(-1, 1, 25)
    child = p2m(src, q, child_center, child_scale, 15)
    shifted = m2m(child, parent_center, parent_scale)
    direct = p2m(src, q, parent_center, parent_scale, 15)
    assert np.allclose(shifted.coeffs, direct.coeffs, rtol=1e-12, atol=1e-12 * np.abs(direct.coeffs).max())
    for _ in range(10):
        x = 25.0 * _unit(rng)
        assert m2t(shifted, x) == pytest.approx(m2t(child, x), rel=1e-12)


def test_m2l_monopole():
    q, d, s_t = 2.5, 4.0, 0.5
    source = p2m(np.zeros((1, 3)), np.array([q]), np.zeros(3), 0.5, 6)
    local = m2l(source, np.array([0.0, 0.0, d]), s_t)
    assert local.coeffs[0] == pytest.approx(q * s_t / d)
    value = eval_local_derivatives(local, np.array([0.0, 0.0, d])).value
    assert value == pytest.approx(q / d)


def test_m2l_field_in_target_box():
    rng = np.random.default_rng(4)
    s = 0.5
    src_center = np.zeros(3)
    tgt_center = np.array([6 * s, 0.0, 0.0])
    src = _cluster(rng, src_center, s, 40)
    q = rng.uniform(-1, 1, 40)
    local = m2l(p2m(src, q, src_center, s, 16), tgt_center, s)
    targets = _cluster(rng, tgt_center, s, 20)
    approx = eval_local_derivatives(local, targets).value
    exact = _direct(targets, src, q)
    assert np.max(np.abs(approx - exact)) <= 1e-4 * np.max(np.abs(exact))


def test_stored_m2l_operator_matches_dense():
    rng = np.random.default_rng(40)
    order = 9
    size = stored_size(order)
    coeffs = rng.normal(size=(3, size)) + 1j * rng.normal(size=(3, size))
    for offset in ([2.0, 0.0, 0.0], [-2.0, 4.0, 6.0], [6.0, -6.0, -2.0]):
        shift = np.array(offset)
        dense = multipole_to_solid(coeffs, order) @ m2l_matrix(shift, 1.0, order).T
        re, im = m2l_stored_operator(shift, 1.0, order)
        assert re.shape == im.shape == (2 * size, size)
        split = np.concatenate([coeffs.real, coeffs.imag], axis=-1)
        assert np.allclose(split @ re + 1j * (split @ im), dense, rtol=1e-12, atol=1e-14 * np.abs(dense).max())


def test_l2l_is_exact():
    rng = np.random.default_rng(5)
    src = _cluster(rng, np.array([5.0, 3.0, -4.0]), 0.5, 20)
    q = rng.uniform(-1, 1, 20)
    parent = p2l(src, q, np.zeros(3), 1.0, 15)
    for _ in range(3):
        child_center = 0.5 * np.sign(rng.uniform(-1, 1, 3))
        child = l2l(parent, child_center, 0.5)
        pts = _cluster(rng, child_center, 0.5, 10)
        a = eval_local_derivatives(child, pts).value
        b = eval_local_derivatives(parent, pts).value
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_translation_chain_consistency():
    rng = np.random.default_rng(6)
    child_center, s_child = np.array([0.25, 0.25, 0.25]), 0.25
    src = _cluster(rng, child_center, s_child, 30)
    q = rng.uniform(-1, 1, 30)
    child = p2m(src, q, child_center, s_child, 14)
    parent = m2m(child, np.zeros(3), 0.5)
    far_center = np.array([4.0, 0.0, 0.0])
    via_parent = l2l(m2l(parent, far_center, 0.5), far_center + np.array([0.25, -0.25, 0.25]), 0.25)
    direct = m2l(child, far_center + np.array([0.25, -0.25, 0.25]), 0.25)
    pts = _cluster(rng, via_parent.center, 0.25, 10)
    a = eval_local_derivatives(via_parent, pts).value
    b = eval_local_derivatives(direct, pts).value
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(b))


def test_p2l_matches_m2l_of_point_monopole():
    y = np.array([[0.0, 0.0, 3.0]])
    q = np.array([1.7])
    local = p2l(y, q, np.zeros(3), 0.5, 10)
    via = m2l(p2m(y, q, y[0], 0.5, 10), np.zeros(3), 0.5)
    assert np.allclose(local.coeffs, via.coeffs, rtol=1e-12, atol=1e-14)


def test_p2l_zero_charges():
    rng = np.random.default_rng(7)
    local = p2l(rng.uniform(3, 4, (5, 3)), np.zeros(5), np.zeros(3), 0.5, 8)
    assert np.all(local.coeffs == 0)
    empty = p2l(np.zeros((0, 3)), np.zeros(0), np.zeros(3), 0.5, 8)
    assert empty.coeffs.shape == (stored_size(8),)


def test_channel_axis_is_independent():
    rng = np.random.default_rng(8)
    src = _cluster(rng, np.zeros(3), 0.5, 10)
    q = rng.uniform(-1, 1, (4, 10))
    both = p2m(src, q, np.zeros(3), 0.5, 6)
    for c in range(4):
        single = p2m(src, q[c], np.zeros(3), 0.5, 6)
        assert np.allclose(both.coeffs[c], single.coeffs, rtol=1e-14, atol=1e-15)


# ------------------------------------------------------------------
# derivatives against finite differences
# ------------------------------------------------------------------

def _fd_check(evaluate, x, h):
    d = evaluate(x)
    grad_fd = np.zeros(3)
    hess_fd = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        grad_fd[k] = (evaluate(x + e).value - evaluate(x - e).value) / (2 * h)
        hess_fd[:, k] = (evaluate(x + e).gradient - evaluate(x - e).gradient) / (2 * h)
    g_err = np.linalg.norm(grad_fd - d.gradient) / np.linalg.norm(d.gradient)
    h_err = np.linalg.norm(hess_fd - d.hessian) / np.linalg.norm(d.hessian)
    return d, g_err, h_err, hess_fd


def test_multipole_derivatives_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        center = rng.uniform(-1, 1, 3)
        s = rng.uniform(0.2, 1.0)
        src = _cluster(rng, center, s, 20)
        M = p2m(src, rng.uniform(-1, 1, 20), center, s, 12)
        r = rng.uniform(3.0, 6.0) * s
        x = center + r * _unit(rng)
        d, g_err, h_err, hess_fd = _fd_check(lambda y: eval_multipole_derivatives(M, y), x, 1e-5 * r)
        assert g_err <= 1e-6, f"gradient error {g_err}"
        assert h_err <= 1e-6, f"hessian error {h_err}"
        assert abs(d.trace) <= 1e-12 * np.abs(d.hessian).max()
        assert np.array_equal(d.hessian, d.hessian.T)
        assert abs(np.trace(hess_fd)) <= 1e-5 * np.abs(hess_fd).max()


def test_local_derivatives_match_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(100):
        s = rng.uniform(0.2, 1.0)
        center = rng.uniform(-1, 1, 3)
        far = center + rng.uniform(5.0, 8.0) * s * _unit(rng)
        src_local = p2m(_cluster(rng, far, s, 20), rng.uniform(-1, 1, 20), far, s, 12)
        L = m2l(src_local, center, s)
        x = center + rng.uniform(-s, s, 3)
        d, g_err, h_err, _ = _fd_check(lambda y: eval_local_derivatives(L, y), x, 1e-5 * s)
        assert g_err <= 1e-6, f"gradient error {g_err}"
        assert h_err <= 1e-6, f"hessian error {h_err}"
        assert abs(d.trace) <= 1e-12 * np.abs(d.hessian).max()


def test_local_constant_and_linear_terms():
    L = LocalCoeffs.zeros(6, np.zeros(3), 0.5)
    L.coeffs[0] = 3.0
    d = eval_local_derivatives(L, np.array([0.1, -0.2, 0.3]))
    assert d.value == pytest.approx(3.0 / 0.5)
    assert np.all(d.gradient == 0) and np.all(d.hessian == 0)

    L = LocalCoeffs.zeros(6, np.zeros(3), 0.5)
    L.coeffs[stored_index(1, 0)] = 0.7
    L.coeffs[stored_index(1, 1)] = 0.2 - 0.4j
    pts = np.array([[0.1, -0.2, 0.3], [-0.4, 0.4, -0.1]])
    d = eval_local_derivatives(L, pts)
    assert np.all(d.hessian == 0)
    assert np.allclose(d.gradient[0], d.gradient[1], rtol=1e-14, atol=1e-15)
    assert d.gradient[0, 2] == pytest.approx(0.7 / 0.25)


def test_batched_targets_match_single():
    rng = np.random.default_rng(13)
    src = _cluster(rng, np.zeros(3), 0.5, 10)
    M = p2m(src, rng.uniform(-1, 1, (4, 10)), np.zeros(3), 0.5, 8)
    pts = 3.0 + rng.uniform(0, 1, (6, 3))
    batch = eval_multipole_derivatives(M, pts)
    assert batch.value.shape == (4, 6)
    assert batch.hessian.shape == (4, 6, 3, 3)
    one = eval_multipole_derivatives(M, pts[2])
    assert np.allclose(one.gradient, batch.gradient[:, 2], rtol=1e-12, atol=1e-14)


# ------------------------------------------------------------------
# raising / lowering operators
# ------------------------------------------------------------------

# (degree shift, order shift, sign) of d/dx + i d/dy, d/dx - i d/dy and d/dz
# acting on I_n^m (outer) and on conj(R_n^m) (inner)
_OUTER_LADDER = {"plus": (1, 1, 1.0), "minus": (1, -1, -1.0), "z": (1, 0, -1.0)}
_INNER_LADDER = {"plus": (-1, -1, -1.0), "minus": (-1, 1, 1.0), "z": (-1, 0, 1.0)}


def _ladder(coeffs, order, ladder, *ops):
    """Full-layout coefficients after applying the operators term by term."""
    for op in ops:
        dn, dm, sign = ladder[op]
        n, m = full_indices(order)
        n_out, m_out = n + dn, m + dm
        keep = (n_out >= 0) & (np.abs(m_out) <= n_out)
        out = np.zeros(full_size(order + dn), dtype=complex)
        out[full_index(n_out[keep], m_out[keep])] = sign * coeffs[keep]
        coeffs, order = out, order + dn
    return coeffs, order


def _inner_table(points, nmax):
    return np.conj(regular_table(points, nmax))


@pytest.mark.parametrize("kind", ["multipole", "local"])
def test_ladder_operators_match_derivatives(kind):
    rng = np.random.default_rng(15)
    p = 12
    for _ in range(100):
        s = rng.uniform(0.2, 1.0)
        center = rng.uniform(-1, 1, 3)
        if kind == "multipole":
            expansion = p2m(_cluster(rng, center, s, 20), rng.uniform(-1, 1, 20), center, s, p)
            x = center + rng.uniform(3.0, 6.0) * s * _unit(rng)
            coeffs, ladder, table = multipole_to_solid(expansion.coeffs, p), _OUTER_LADDER, irregular_table
            d = eval_multipole_derivatives(expansion, x)
        else:
            far = center + rng.uniform(5.0, 8.0) * s * _unit(rng)
            expansion = m2l(p2m(_cluster(rng, far, s, 20), rng.uniform(-1, 1, 20), far, s, p), center, s)
            x = center + rng.uniform(-s, s, 3)
            coeffs, ladder, table = local_to_solid(expansion.coeffs, p), _INNER_LADDER, _inner_table
            d = eval_local_derivatives(expansion, x)
        u = (x - center) / s

        def apply(*ops):
            c, order = _ladder(coeffs, p, ladder, *ops)
            return (table(u, order)[0] @ c) / s ** (1 + len(ops))

        plus_minus, _ = _ladder(coeffs, p, ladder, "minus", "plus")
        z_z, _ = _ladder(coeffs, p, ladder, "z", "z")
        assert np.array_equal(plus_minus, -z_z), "G+G- must equal -G0G0 term by term"

        scale = np.abs(d.hessian).max()
        pm, zz = apply("minus", "plus"), apply("z", "z")
        assert abs(pm.real + zz.real) <= 1e-12 * scale
        assert abs(pm.imag) <= 1e-10 * scale

        gx, gy, _ = d.gradient
        assert abs(apply("minus") - (gx - 1j * gy)) <= 1e-10 * np.abs(d.gradient).max()
        assert abs(apply("z").real - d.gradient[2]) <= 1e-10 * np.abs(d.gradient).max()
        h = d.hessian
        assert abs(pm.real - (h[0, 0] + h[1, 1])) <= 1e-10 * scale
        assert abs(zz.real - h[2, 2]) <= 1e-10 * scale
        assert abs(apply("plus", "plus") - (h[0, 0] - h[1, 1] + 2j * h[0, 1])) <= 1e-10 * scale
        assert abs(apply("plus", "z") - (h[0, 2] + 1j * h[1, 2])) <= 1e-10 * scale
