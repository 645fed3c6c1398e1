from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdlab.atoms import AtomSpec
from cdlab.bundles import FrameMap, QuotientModuleModel
from cdlab.diagnostics import (DefectError, DefectField, DiskGrid, Thresholds, carleson_scan,
                               carleson_test, default_cutoffs, defect_field, frame_bound_test,
                               green_boundedness_scan, green_node, green_potential,
                               pointwise_estimate_test, thread_count, verdict)

BERGMAN = AtomSpec.power(2.0)


def test_grid_layout(grid):
    assert grid.size == 2806
    assert grid.weights.sum() == pytest.approx(np.pi * 0.995 ** 2, rel=1e-14)
    assert grid.radii[0] == 0.0 and grid.radii[-1] == 0.995
    assert np.all(np.abs(np.abs(grid.nodes) - grid.radii[grid.ring_index]) < 1e-15)
    r = grid.radii[1:]
    np.testing.assert_array_equal(grid.counts[1:], np.ceil(2 * np.pi * r / (1 - r)))
    assert DiskGrid(3, 0.9).radii.tolist() == [0.0, 0.5, 0.75, 0.875, 0.9]
    with pytest.raises(ValueError):
        DiskGrid(8, 1.0)


def test_green_constant_density_oracle():
    """D = 1 solves with u = (|w|^2 - 1)/4, so G(lam) = -(1 - |lam|^2)."""
    d = DefectField.constant(1.0)
    errs = [abs(green_potential(d, 0.0, ref) + 1.0) for ref in range(4)]
    assert errs[3] <= 1e-3 and errs[2] < errs[0]
    for lam in (0.5, 0.9j, -0.6 + 0.6j, 0.97):
        assert green_potential(d, lam, 2) == pytest.approx(-(1 - abs(lam) ** 2), abs=1e-5)


def test_green_truncated_disk():
    """Integral of ln|w| over |w| < R is 2 pi (R^2 ln R / 2 - R^2 / 4)."""
    d = DefectField.constant(1.0)
    for R in (0.5, 0.9, 0.995):
        exact = (2 / np.pi) * 2 * np.pi * (R ** 2 * np.log(R) / 2 - R ** 2 / 4)
        assert green_potential(d, 0.0, 2, R) == pytest.approx(exact, abs=1e-6)


def test_green_argument_checks():
    d = DefectField.constant(1.0, r_outer=0.9)
    with pytest.raises(ValueError):
        green_potential(d, 0.95)
    with pytest.raises(ValueError):
        green_potential(d, 0.0, r_outer=0.99)
    with pytest.raises(ValueError):
        green_potential(d, 0.0, refinement=-1)
    node = green_node(d, 0.5, 2)
    assert not node.flagged and node.delta < 1e-4


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0, 3), b=st.floats(0, 3), extra=st.floats(0, 2),
       r=st.floats(0, 0.9), t=st.floats(0, 2 * np.pi))
def test_green_sign_and_monotonicity(a, b, extra, r, t):
    lam = r * np.exp(1j * t)
    lo = DefectField.from_function(lambda w: a + b * np.abs(w) ** 2, r_outer=0.99)
    hi = DefectField.from_function(lambda w: a + extra + b * np.abs(w) ** 2, r_outer=0.99)
    g_lo = green_potential(lo, lam, 0)
    g_hi = green_potential(hi, lam, 0)
    assert g_lo <= 0 and g_hi <= g_lo + 1e-12


def test_negative_density_is_an_error():
    with pytest.raises(DefectError) as info:
        DefectField.from_function(lambda w: np.real(w) - 0.5, DiskGrid(3, 0.9), label="bad")
    assert info.value.dump["min_value"] < 0
    with pytest.warns(RuntimeWarning):
        f = DefectField.from_function(lambda w: np.full(np.shape(w), -1e-12), DiskGrid(2, 0.9))
    assert np.all(f.values == 0)
    with pytest.raises(ValueError):
        DefectField.constant(-1.0)


def test_green_scan_statuses():
    bounded = green_boundedness_scan(DefectField.constant(1.0, r_outer=0.995))
    assert bounded.status == "bounded"
    assert bounded.sup_abs == pytest.approx(1.0, abs=1e-2)
    # D (1 - |w|^2)^2 = 1 gives a logarithmically divergent potential
    steep = DefectField.from_function(lambda w: (1 - np.abs(w) ** 2) ** -2.0, r_outer=0.995)
    unbounded = green_boundedness_scan(steep)
    assert unbounded.status == "unbounded"
    assert np.all(np.diff(unbounded.sup_by_cutoff) > 0)
    np.testing.assert_allclose(default_cutoffs(0.995),
                               [0.9375, 0.96875, 0.984375, 0.9921875, 0.995])
    rows = bounded.to_rows()
    assert len(rows) == bounded.values.size
    json.dumps(bounded.to_dict())


def test_carleson_constant_density():
    """For D = 1 a box over depth j has ratio int_{1-2^-j}^{r_cut} (1 - r) r dr."""
    tab = carleson_test(DefectField.constant(1.0, r_outer=0.995), max_depth=6)
    prim = lambda r: r ** 2 / 2 - r ** 3 / 3
    for j in range(1, 7):
        expect = prim(0.995) - prim(1 - 2.0 ** -j)
        np.testing.assert_allclose(tab.ratio[tab.depth == j], expect, rtol=1e-12)
    assert tab.constant == pytest.approx(prim(0.995) - prim(0.5))
    assert not tab.empty.any()
    shallow = carleson_test(DefectField.constant(1.0), max_depth=4, r_cut=0.9)
    assert shallow.empty[shallow.depth == 4].all()


def test_carleson_scan_statuses():
    flat = carleson_scan(DefectField.constant(1.0, r_outer=0.995))
    assert flat.status == "saturating" and flat.growth <= 1.05
    steep = DefectField.from_function(lambda w: (1 - np.abs(w) ** 2) ** -2.0, r_outer=0.995)
    div = carleson_scan(steep)
    assert div.status == "diverging" and div.growth >= 2
    np.testing.assert_allclose(div.r_cuts, [1 - 2.0 ** -d for d in range(4, 8)] + [0.995])


def test_frame_bounds(grid):
    lo, hi = frame_bound_test(FrameMap.constant(2), grid)
    assert (lo, hi) == (pytest.approx(1.0), pytest.approx(1.0))
    bp = frame_bound_test(FrameMap.bounded_perturbation(), grid)
    assert bp.status == "flat"
    assert bp.sigma_max_sup == pytest.approx(np.sqrt(1 + 0.995 ** 2 / 4))
    h2 = frame_bound_test(FrameMap.hardy_truncated(400), grid)
    assert h2.status == "diverging" and h2.max_slope == pytest.approx(0.5, abs=0.05)
    zero = frame_bound_test(FrameMap.zero_at_point(0.5), grid)
    assert zero.status == "rank_drop" and abs(zero.rank_drop_at - 0.5) < 1e-12
    json.dumps(zero.to_dict())


def test_defect_field_crosschecks(grid):
    model = QuotientModuleModel(BERGMAN, FrameMap.bounded_perturbation())
    d = defect_field(model, grid)
    r = np.abs(grid.nodes)
    np.testing.assert_allclose(d.values, 0.25 / (1 + r ** 2 / 4) ** 2, rtol=1e-6)
    assert d.crosscheck["exact_max_rel_dev"] < 1e-6
    assert d.crosscheck["subtraction_max_rel_dev"] < 1e-4
    assert d.crosscheck["subtraction_sample_size"] > 0
    assert pointwise_estimate_test(d) == pytest.approx(0.5, rel=1e-6)
    assert len(d.to_rows()) == grid.size


def test_verdict_rules(grid):
    const = DefectField.constant(0.0, grid, r_outer=0.995)
    fb = frame_bound_test(FrameMap.constant(1), grid)
    rep = verdict(fb, green_boundedness_scan(const), carleson_scan(const), 0.0, const)
    assert rep.verdict == "Similar" and rep.skipped == []
    partial = verdict(fb)
    assert partial.verdict == "Inconclusive"
    assert set(partial.skipped) == {"green_scan", "carleson", "pointwise_estimate"}
    other = DefectField.constant(0.0, DiskGrid(4, 0.9), r_outer=0.9)
    with pytest.raises(ValueError):
        verdict(fb, defect=other)
    json.dumps(rep.to_dict())


def test_thread_count(monkeypatch):
    monkeypatch.delenv("CDLAB_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("CDLAB_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("CDLAB_THREADS", "junk")
    assert thread_count() == 1


def test_threaded_scan_is_identical(monkeypatch):
    d = DefectField.from_function(lambda w: 1 + np.abs(w) ** 2, r_outer=0.995)
    serial = green_boundedness_scan(d)
    monkeypatch.setenv("CDLAB_THREADS", "4")
    threaded = green_boundedness_scan(d)
    np.testing.assert_array_equal(serial.values, threaded.values)


def test_corpus_evidence(reports):
    h2 = reports("h2_in_bergman")
    assert h2.green_scan.status == "unbounded"
    assert h2.carleson.status == "diverging"
    assert h2.frame_bounds.status == "diverging"
    bp = reports("bounded_perturbation")
    assert bp.green_scan.status == "bounded" and bp.carleson.status == "saturating"
    assert bp.green_scan.sup_abs <= 0.25
    zero = reports("zero_at_point")
    assert zero.green_scan is None and "green_scan" in zero.skipped
    const = reports("constant_frame")
    assert np.all(const.defect.values == 0)
