from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdlab.atoms import (AtomSpec, TruncationWarning, c_operator_pairing, inverse_kernel_partial,
                         kernel_dbar_w, kernel_eval, kernel_inner_products, kernel_matrix,
                         kernel_mixed_derivative, kernel_series, purity_defect,
                         series_tail_bound)

HARDY = AtomSpec.power(1.0)
BERGMAN = AtomSpec.power(2.0)


def test_kernel_values():
    assert kernel_eval(HARDY, 0.0, 0.3) == pytest.approx(1.0, abs=1e-15)
    assert kernel_eval(BERGMAN, 0.5, 0.5) == pytest.approx(0.75 ** -2, rel=1e-14)
    assert kernel_eval(HARDY, 0.3, 0.4j) == pytest.approx(1 / (1 + 0.12j), rel=1e-14)
    assert kernel_eval(HARDY, 0.3, 0.4j) == pytest.approx(0.98580 - 0.11830j, abs=1e-5)


def test_series_matches_closed_form():
    for atom in (AtomSpec.power(0.5), HARDY, BERGMAN, AtomSpec.power(3.7)):
        for z, w in ((0.5, 0.5), (0.3, 0.4j), (-0.6 + 0.2j, 0.1 - 0.5j)):
            assert kernel_series(atom, z, w, 200) == pytest.approx(kernel_eval(atom, z, w),
                                                                   rel=1e-12)


def test_coefficients_recurrence():
    c = BERGMAN.coeffs(6)
    np.testing.assert_allclose(c, [1, 2, 3, 4, 5, 6])
    np.testing.assert_allclose(HARDY.coeffs(4), 1.0)
    c = AtomSpec.power(0.5).coeffs(4)
    np.testing.assert_allclose(c, [1, 0.5, 0.375, 0.3125])


def test_dbar_w_and_mixed_derivative():
    assert kernel_dbar_w(HARDY, 0.3, 0.0) == pytest.approx(0.3)
    assert kernel_dbar_w(BERGMAN, 0.5, 0.0) == pytest.approx(1.0)
    assert kernel_dbar_w(HARDY, 0.5, 0.5) == pytest.approx(0.5 / 0.75 ** 2, rel=1e-14)
    # finite difference in conj(w) of k(z, w) = f(z conj w)
    z, w, h = 0.3 + 0.1j, -0.2 + 0.4j, 1e-6
    for atom in (HARDY, BERGMAN, AtomSpec.power(3.7)):
        fd = (kernel_eval(atom, z, w + h) - kernel_eval(atom, z, w - h)
              + 1j * (kernel_eval(atom, z, w + 1j * h) - kernel_eval(atom, z, w - 1j * h))) / (4 * h)
        assert kernel_dbar_w(atom, z, w) == pytest.approx(fd, rel=1e-8)
    # ||k'||^2 at w = 0 is c_1 = alpha
    assert kernel_mixed_derivative(AtomSpec.power(3.7), 0.0, 0.0) == pytest.approx(3.7)


def test_inner_products_routes_agree():
    for atom in (HARDY, BERGMAN, AtomSpec.power(0.5)):
        for w in (0.0, 0.3j, 0.5 - 0.2j):
            closed = kernel_inner_products(atom, w, "closed")
            series = kernel_inner_products(atom, w, "series")
            np.testing.assert_allclose(np.array(closed), np.array(series), rtol=1e-10)
    norm2, pair, dnorm2 = kernel_inner_products(HARDY, 0.0)
    assert (norm2, pair, dnorm2) == (pytest.approx(1), pytest.approx(0), pytest.approx(1))


def test_inverse_kernel_partial():
    np.testing.assert_allclose(inverse_kernel_partial(HARDY, 2).coefficients, [1, -1, 0])
    np.testing.assert_allclose(inverse_kernel_partial(BERGMAN, 2).coefficients, [1, -2, 1])
    np.testing.assert_allclose(inverse_kernel_partial(AtomSpec.power(0.5), 3).coefficients,
                               [1, -0.5, -0.125, -0.0625])
    p = inverse_kernel_partial(HARDY, 2)
    assert p(0.5, 0.5) == pytest.approx(0.75)
    assert p.residual(0.5, 0.5) == pytest.approx(0.0, abs=1e-15)
    # diagonal atoms invert their series; the Hardy coefficients give 1 - x
    diag = AtomSpec.diagonal(np.ones(50))
    np.testing.assert_allclose(inverse_kernel_partial(diag, 3).coefficients, [1, -1, 0, 0],
                               atol=1e-15)


def test_purity_defect():
    assert purity_defect(BERGMAN, 3, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert purity_defect(HARDY, 2, 0.5, 0.5) == pytest.approx(0.0625, rel=1e-13)
    assert purity_defect(HARDY, 4, 0.5, 0.5) == pytest.approx(0.00390625, rel=1e-12)
    values = [purity_defect(BERGMAN, l, 0.5, 0.5) for l in range(1, 30)]
    assert np.all(np.diff(values) < 0)
    with pytest.raises(ValueError):
        purity_defect(HARDY, 0, 0.5, 0.5)


def test_c_operator_pairing():
    assert c_operator_pairing(HARDY, 0.0, 0.0) == pytest.approx(1.0)
    assert c_operator_pairing(HARDY, 0.5, 0.5) == pytest.approx(0.75)
    assert c_operator_pairing(BERGMAN, 0.5, 0.5) == pytest.approx(0.5625)


def test_kernel_matrix_positive():
    pts = np.array([0.0, 0.3, 0.5j, -0.4 + 0.4j, 0.8])
    g = kernel_matrix(BERGMAN, pts)
    np.testing.assert_allclose(g, g.conj().T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(g)) > 0


def test_tail_bound_and_warning():
    assert series_tail_bound(HARDY, 0.5, 10) == pytest.approx(0.5 ** 20, rel=1e-6)
    assert series_tail_bound(BERGMAN, 0.0, 5) == 0.0
    with pytest.warns(TruncationWarning):
        kernel_inner_products(AtomSpec.power(2.0), 0.999, "series")


def test_spec_roundtrip_and_validation():
    for atom in (BERGMAN, AtomSpec.diagonal([1.0, 0.5, 0.25])):
        assert AtomSpec.from_dict(atom.to_dict()) == atom
    assert BERGMAN.label == "power(alpha=2)"
    with pytest.raises(ValueError):
        AtomSpec.power(-1.0)
    with pytest.raises(ValueError):
        kernel_eval(HARDY, 1.2, 0.0)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.2, 5.0), r=st.floats(0.0, 0.9), t=st.floats(0, 2 * np.pi))
def test_pairing_times_kernel_is_one(alpha, r, t):
    atom = AtomSpec.power(alpha)
    w = r * np.exp(1j * t)
    assert abs(c_operator_pairing(atom, w, 0.7 * w) * kernel_eval(atom, w, 0.7 * w) - 1) < 1e-12
