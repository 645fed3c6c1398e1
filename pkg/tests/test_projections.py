from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdlab.atoms import AtomSpec
from cdlab.bundles import FrameMap, QuotientModuleModel, RankDeficientFrame, curvature_matrix_fd
from cdlab.projections import (ProjectionField, corollary_c2_check, dbar_pi_hs_norm_line,
                               dbar_pi_v_hs_norm, dbar_pi_v_hs_norm_exact, dbar_projection,
                               identity_tolerance, projection_identities_check,
                               projection_matrix)

HARDY = AtomSpec.power(1.0)
BERGMAN = AtomSpec.power(2.0)
BP = FrameMap.bounded_perturbation()


def test_line_hs_norm_examples():
    assert dbar_pi_hs_norm_line(HARDY, 0.0) == pytest.approx(1.0)
    assert dbar_pi_hs_norm_line(BERGMAN, 0.0) == pytest.approx(2.0)
    assert dbar_pi_hs_norm_line(HARDY, 0.5) == pytest.approx(1 / 0.75 ** 2, rel=1e-13)
    assert dbar_pi_hs_norm_line(BERGMAN, 0.3, "series") == pytest.approx(2 / 0.91 ** 2, rel=1e-12)


def test_frame_hs_norm_examples():
    assert dbar_pi_v_hs_norm(FrameMap.constant(2), 0.3) == pytest.approx(0.0, abs=1e-12)
    assert dbar_pi_v_hs_norm(BP, 0.0) == pytest.approx(0.25, abs=1e-8)
    h2 = FrameMap.hardy_truncated(60)
    assert dbar_pi_v_hs_norm(h2, 0.0) == pytest.approx(1.0, abs=1e-7)
    assert dbar_pi_v_hs_norm_exact(h2, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_stencil_and_exact_routes_agree():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4, 2)) + 1j * rng.normal(size=(3, 4, 2))
    a[0] += 3 * np.eye(4, 2)
    fm = FrameMap(a)
    w = np.array([0.0, 0.3 - 0.2j, 0.8j])
    exact = dbar_pi_v_hs_norm_exact(fm, w)
    np.testing.assert_allclose(dbar_pi_v_hs_norm(fm, w), exact, rtol=1e-7)
    assembled = [np.linalg.norm(dbar_projection(fm, x)) ** 2 for x in w]
    np.testing.assert_allclose(assembled, exact, rtol=1e-7)
    # closed form for bp: 1/(4 (1 + r^2/4)^2)
    r = np.abs(w)
    np.testing.assert_allclose(dbar_pi_v_hs_norm_exact(BP, w), 0.25 / (1 + r ** 2 / 4) ** 2)


def test_projection_identities():
    assert max(projection_identities_check(FrameMap.constant(2), 0.3)) < 1e-10
    assert max(projection_identities_check(BP, 0.3)) < 1e-6
    rng = np.random.default_rng(11)
    for _ in range(3):
        a = rng.normal(size=(3, 4, 2)) + 1j * rng.normal(size=(3, 4, 2))
        a[0] += 3 * np.eye(4, 2)
        assert max(projection_identities_check(FrameMap(a), 0.2)) < 1e-5


def test_projection_is_orthogonal_projection():
    p = projection_matrix(BP, 0.4 + 0.1j)
    np.testing.assert_allclose(p @ p, p, atol=1e-14)
    np.testing.assert_allclose(p, p.conj().T, atol=1e-14)
    assert np.trace(p).real == pytest.approx(1.0)
    with pytest.raises(RankDeficientFrame):
        projection_matrix(FrameMap.zero_at_point(0.5), 0.5)


def test_hs_norm_split_examples():
    res, split, combined = corollary_c2_check(QuotientModuleModel(HARDY, FrameMap.constant(2)),
                                              0.0, detail=True)
    assert res < 1e-8 and split == pytest.approx(2.0)
    res, split, _ = corollary_c2_check(QuotientModuleModel(HARDY, BP), 0.0, detail=True)
    assert res < 1e-6 and split == pytest.approx(1.25, abs=1e-7)
    model = QuotientModuleModel(BERGMAN, FrameMap.hardy_truncated(60))
    res, split, _ = corollary_c2_check(model, 0.0, detail=True)
    assert res < identity_tolerance(model.frame) and split == pytest.approx(3.0, abs=1e-6)
    assert identity_tolerance(model.frame) == 1e-4
    assert identity_tolerance(BP) == 1e-6


def test_projection_field():
    line = ProjectionField(BERGMAN)
    assert line.kind == "line_bundle"
    assert line.dbar_hs_norm(0.0) == pytest.approx(2.0)
    with pytest.raises(TypeError):
        line(0.1)
    field = ProjectionField(BP)
    assert field.kind == "frame_bundle"
    assert field(0.0).shape == (2, 2)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6), r=st.floats(0, 0.8), t=st.floats(0, 2 * np.pi))
def test_hs_norm_is_minus_trace_curvature(seed, r, t):
    """For any frame bundle ||dbar Pi||^2 = -tr K."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 2)) + 1j * rng.normal(size=(2, 3, 2))
    a[0] += 3 * np.eye(3, 2)
    fm = FrameMap(a)
    w = r * np.exp(1j * t)
    trace = -np.trace(curvature_matrix_fd(fm, w)).real
    assert dbar_pi_v_hs_norm_exact(fm, w) == pytest.approx(trace, rel=1e-6, abs=1e-8)
