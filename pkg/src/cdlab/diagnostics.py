"""
Similarity diagnostics for quotient modules on the disk.

Four finite tests are run on a hyperbolically refined lattice:

* frame bounds: singular values of ``V(w)`` and their trend toward the circle;
* the defect density ``D(w) = ||dbar Pi_V(w)||_2^2`` and its Green potential
  ``G(lam) = (2/pi) int ln|(w - lam)/(1 - conj(lam) w)| D(w) dA``;
* Carleson boxes for ``mu = D(w)(1 - |w|) dA``;
* the pointwise estimate ``sup sqrt(D)(1 - |w|)``.

Limits (boundedness, saturation) are replaced by trend regressions with
explicit dead zones; anything in a dead zone yields ``Inconclusive``.
The Laplacian convention is ``Delta = 4 d dbar``, so ``d dbar G = D``.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .bundles import FrameMap, QuotientModuleModel, RANK_TOLERANCE, RankDeficientFrame
from .projections import (dbar_pi_hs_norm_line, dbar_pi_v_hs_norm, dbar_pi_v_hs_norm_exact,
                          tensor_dbar_pi_hs_norm)

__all__ = [
    "CarlesonScan",
    "CarlesonTable",
    "DefectError",
    "DefectField",
    "DiagnosticsReport",
    "DiskGrid",
    "FrameBounds",
    "GreenNode",
    "GreenScan",
    "SIMILAR",
    "NOT_SIMILAR",
    "INCONCLUSIVE",
    "Thresholds",
    "carleson_scan",
    "carleson_test",
    "defect_field",
    "diagnose",
    "frame_bound_test",
    "green_boundedness_scan",
    "green_node",
    "green_potential",
    "pointwise_estimate_test",
    "thread_count",
    "verdict",
]

SIMILAR = "Similar"
NOT_SIMILAR = "NotSimilar"
INCONCLUSIVE = "Inconclusive"

CLAMP_TOLERANCE = 1e-8


class DefectError(RuntimeError):
    """Defect density significantly negative: broken frame or step size."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


def thread_count() -> int:
    """Worker cap from ``CDLAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CDLAB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn: Callable, items: Sequence) -> list:
    # results come back in input order, so reductions stay deterministic
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


# --------------------------------------------------------------------------
# lattice

@dataclass(frozen=True, eq=False)
class DiskGrid:
    """Polar lattice with rings accumulating at the circle.

    Rings sit at ``r_j = 1 - 2^(-j-1)`` (``j = 0..J``) below ``r_max``, plus
    a ring at ``r_max`` itself and a single node at the origin.  Ring ``j``
    carries ``ceil(2 pi r_j / (1 - r_j))`` equally spaced nodes, so the
    angular spacing tracks the hyperbolic scale.  Weights are areas of the
    annuli between ring midpoints; they sum to ``pi r_max^2``.
    """

    J: int = 8
    r_max: float = 0.995
    center: bool = True

    def __post_init__(self):
        if not 0 < self.r_max < 1:
            raise ValueError("r_max must lie in (0, 1)")
        if self.J < 0:
            raise ValueError("J must be nonnegative")
        radii = [1 - 2.0 ** (-j - 1) for j in range(self.J + 1)]
        radii = [r for r in radii if r < self.r_max]
        if not radii or self.r_max - radii[-1] > 1e-12:
            radii.append(self.r_max)
        if self.center:
            radii = [0.0] + radii
        radii = np.array(radii)
        counts = np.array([1 if r == 0 else math.ceil(2 * np.pi * r / (1 - r)) for r in radii])
        bounds = np.concatenate(([0.0], 0.5 * (radii[:-1] + radii[1:]), [radii[-1]]))
        ring_area = np.pi * (bounds[1:] ** 2 - bounds[:-1] ** 2)
        nodes, ring, weights = [], [], []
        for j, (r, n) in enumerate(zip(radii, counts)):
            nodes.append(r * np.exp(2j * np.pi * np.arange(n) / n))
            ring.append(np.full(n, j))
            weights.append(np.full(n, ring_area[j] / n))
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "nodes", np.concatenate(nodes))
        object.__setattr__(self, "ring_index", np.concatenate(ring))
        object.__setattr__(self, "weights", np.concatenate(weights))

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def rings(self):
        """Yield ``(radius, node_slice)`` ring by ring."""
        start = 0
        for r, n in zip(self.radii, self.counts):
            yield float(r), slice(start, start + int(n))
            start += int(n)

    def same_as(self, other: "DiskGrid | None") -> bool:
        if other is None:
            return False
        return other is self or (self.J == other.J and self.r_max == other.r_max
                                 and self.center == other.center)

    def to_dict(self) -> dict:
        return {"J": self.J, "r_max": self.r_max, "center": self.center,
                "rings": len(self.radii), "nodes": self.size}


# --------------------------------------------------------------------------
# frame bounds

@dataclass
class Thresholds:
    """Decision thresholds of the trend tests.

    ``frame_flat`` bounds the slope of ``log sigma`` against
    ``log(1/(1 - r))`` for a flat ring trend; ``divergence_factor`` times a
    threshold marks divergence.  The Green slope threshold is relative:
    ``slope_threshold * sup|G|``.
    """

    frame_flat: float = 0.05
    slope_threshold: float = 0.05
    divergence_factor: float = 3.0
    carleson_saturation: float = 1.05
    carleson_divergence: float = 2.0
    green_tolerance: float = 1e-3
    trend_rmin: float = 0.75

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FrameBounds:
    sigma_min_inf: float
    sigma_max_sup: float
    ring_radii: np.ndarray
    ring_sigma_min: np.ndarray
    ring_sigma_max: np.ndarray
    min_slope: float
    max_slope: float
    rank_drop: bool
    rank_drop_at: complex | None
    status: str
    grid: DiskGrid | None = field(default=None, repr=False)

    def __iter__(self):
        # allows ``lo, hi = frame_bound_test(...)``
        return iter((self.sigma_min_inf, self.sigma_max_sup))

    def to_dict(self) -> dict:
        return {
            "sigma_min_inf": self.sigma_min_inf,
            "sigma_max_sup": self.sigma_max_sup,
            "rings": [{"r": float(r), "sigma_min": float(a), "sigma_max": float(b)}
                      for r, a, b in zip(self.ring_radii, self.ring_sigma_min,
                                         self.ring_sigma_max)],
            "min_slope": self.min_slope if np.isfinite(self.min_slope) else None,
            "max_slope": self.max_slope,
            "rank_drop": self.rank_drop,
            "rank_drop_at": None if self.rank_drop_at is None
            else [float(np.real(self.rank_drop_at)), float(np.imag(self.rank_drop_at))],
            "status": self.status,
        }


def _frame_of(model) -> FrameMap:
    return model.frame if isinstance(model, QuotientModuleModel) else model


def frame_bound_test(model, grid: DiskGrid, thresholds: Thresholds | None = None) -> FrameBounds:
    """Singular-value extrema of ``V(w)`` over the grid, with ring trends.

    Status is ``"flat"`` when both ``log sigma_max`` and ``-log sigma_min``
    have slope at most ``frame_flat`` against ``log(1/(1 - r))`` on the outer
    rings, ``"diverging"`` when either reaches ``divergence_factor`` times
    that, ``"rank_drop"`` when ``sigma_min`` hits the rank tolerance.
    Unpacks as ``(sigma_min_inf, sigma_max_sup)``.
    """
    th = thresholds or Thresholds()
    frame = _frame_of(model)
    sv = frame.singular_values(grid.nodes)
    smin = sv[..., -1]
    smax = sv[..., 0]
    radii, rmin, rmax = [], [], []
    for r, sl in grid.rings():
        radii.append(r)
        rmin.append(float(np.min(smin[sl])))
        rmax.append(float(np.max(smax[sl])))
    radii, rmin, rmax = np.array(radii), np.array(rmin), np.array(rmax)
    scale = max(1.0, float(np.max(smax)))
    drop = smin <= RANK_TOLERANCE * scale
    rank_drop = bool(np.any(drop))
    where = complex(grid.nodes[np.argmax(drop)]) if rank_drop else None
    outer = radii >= th.trend_rmin
    x = np.log(1.0 / (1.0 - radii[outer]))
    if rank_drop:
        min_slope = float("inf")
        max_slope = _slope(x, np.log(rmax[outer]))
        status = "rank_drop"
    else:
        min_slope = _slope(x, -np.log(rmin[outer]))
        max_slope = _slope(x, np.log(rmax[outer]))
        worst = max(min_slope, max_slope)
        if worst <= th.frame_flat:
            status = "flat"
        elif worst >= th.divergence_factor * th.frame_flat:
            status = "diverging"
        else:
            status = "inconclusive"
    return FrameBounds(float(np.min(smin)), float(np.max(smax)), radii, rmin, rmax,
                       min_slope, max_slope, rank_drop, where, status, grid)


# --------------------------------------------------------------------------
# defect density

def _clamp(values: np.ndarray, nodes=None, label: str = "") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    worst = float(np.min(values, initial=0.0))
    if worst < -CLAMP_TOLERANCE:
        k = int(np.argmin(values))
        dump = {"label": label, "min_value": worst, "index": k,
                "node": None if nodes is None else complex(np.ravel(nodes)[k]),
                "negative_count": int(np.sum(values < -CLAMP_TOLERANCE))}
        raise DefectError(f"defect density {worst:.3e} is significantly negative"
                          f" ({label}); check the frame and step size", dump)
    if worst < 0:
        warnings.warn(f"clamped {int(np.sum(values < 0))} slightly negative defect values "
                      f"(min {worst:.1e}) to 0", RuntimeWarning, stacklevel=3)
        values = np.maximum(values, 0.0)
    return values


@dataclass(eq=False)
class DefectField:
    """Defect density ``D`` on a grid plus a callable for quadrature.

    ``values`` are the node values; ``density`` evaluates ``D`` anywhere in
    ``|w| <= r_outer`` (vectorized) and is what the Green and Carleson
    quadratures integrate.  ``crosscheck`` records agreement of the node
    values with independent routes.
    """

    grid: DiskGrid | None
    values: np.ndarray
    density: Callable
    r_outer: float
    label: str = ""
    crosscheck: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, value: float = 1.0, grid: DiskGrid | None = None,
                 r_outer: float = 1.0) -> "DefectField":
        """Synthetic ``D = value`` on ``|w| < r_outer``."""
        if value < 0:
            raise ValueError("a defect density is nonnegative")
        vals = np.full(grid.size, float(value)) if grid is not None else np.array([])
        return cls(grid, vals, lambda w: np.full(np.shape(w), float(value)), float(r_outer),
                   label=f"constant({value:g})")

    @classmethod
    def from_function(cls, f: Callable, grid: DiskGrid | None = None,
                      r_outer: float | None = None, label: str = "") -> "DefectField":
        """Defect from a vectorized nonnegative function of ``w``."""
        r_outer = r_outer if r_outer is not None else (grid.r_max if grid else 1.0)
        vals = _clamp(f(grid.nodes), grid.nodes, label) if grid is not None else np.array([])
        return cls(grid, vals, lambda w: _clamp(f(np.asarray(w, dtype=complex)), w, label),
                   float(r_outer), label=label)

    def to_rows(self):
        """``(w_re, w_im, r, value)`` per node."""
        w = self.grid.nodes
        return np.column_stack([w.real, w.imag, np.abs(w), self.values])


def _batched(fn: Callable, w: np.ndarray, batch: int) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    flat = w.ravel()
    out = np.empty(flat.shape, dtype=float)
    for s in range(0, flat.size, batch):
        out[s:s + batch] = fn(flat[s:s + batch])
    return out.reshape(w.shape)


def _frame_density(frame: FrameMap, label: str) -> Callable:
    batch = max(256, 4_000_000 // (16 * frame.n * frame.m))

    def density(w):
        return _clamp(_batched(lambda u: dbar_pi_v_hs_norm_exact(frame, u), w, batch), w, label)

    return density


def defect_field(model: QuotientModuleModel, grid: DiskGrid, h: float = 1e-3,
                 sample_every: int = 20) -> DefectField:
    """Defect density ``||dbar Pi_V||_2^2`` on the grid.

    Node values come from the Wirtinger stencil on ``Pi_V``.  Every
    ``sample_every``-th node (5% by default) whose stencil fits inside
    ``r_max`` is compared with the subtraction route
    ``||dbar Pi_H||^2 - m |K_M|``; all nodes are compared with the analytic
    route from the frame's exact derivative, which also provides the
    density used by the quadratures.
    """
    frame = model.frame
    label = frame.name
    frame.check_rank(grid.nodes)
    batch = max(8, 2_000_000 // (frame.n * frame.m * 64))
    raw = _batched(lambda u: dbar_pi_v_hs_norm(frame, u, h), grid.nodes, batch)
    values = _clamp(raw, grid.nodes, label)
    density = _frame_density(frame, label)
    exact = density(grid.nodes)
    scale = 1.0 + np.abs(exact)

    r_cap = min(grid.r_max, model.atom.r_max) - 2 * h - 1e-12
    sample = np.arange(0, grid.size, max(1, int(sample_every)))
    sample = sample[np.abs(grid.nodes[sample]) <= r_cap]
    ws = grid.nodes[sample]
    if ws.size:
        line = model.m * np.asarray(dbar_pi_hs_norm_line(model.atom, ws))
        sub = tensor_dbar_pi_hs_norm(model, ws, h) - line
        # relative to the cancelling terms, which dominate the rounding
        sub_dev = float(np.max(np.abs(sub - values[sample]) / (1.0 + line)))
    else:
        sub_dev = 0.0
    crosscheck = {
        "exact_max_rel_dev": float(np.max(np.abs(values - exact) / scale)),
        "subtraction_max_rel_dev": sub_dev,
        "subtraction_sample_size": int(ws.size),
    }
    return DefectField(grid, values, density, float(grid.r_max), label=label,
                       crosscheck=crosscheck)


# --------------------------------------------------------------------------
# Green potential

@lru_cache(maxsize=None)
def _leggauss(order: int):
    return np.polynomial.legendre.leggauss(order)


def _panels(breaks: np.ndarray, order: int):
    x, wt = _leggauss(order)
    a = breaks[:-1, None]
    b = breaks[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * wt
    return nodes.ravel(), weights.ravel()


def _graded_unit(levels_lo: int, levels_hi: int) -> np.ndarray:
    # [0, 1] with geometric grading toward both ends
    lo = 0.5 ** np.arange(levels_lo, 0, -1)
    hi = 1.0 - 0.5 ** np.arange(2, levels_hi + 1)
    return np.concatenate(([0.0], lo, hi, [1.0]))


def _green_rule(lam: complex, R: float, refinement: int):
    """Nodes ``w`` and weights (including the log kernel) for one potential."""
    a = abs(lam)
    e = lam / a if a > 0 else 1.0
    order = 4 + 2 * refinement
    # preimage of |w| < R under w = (u + lam)/(1 + conj(lam) u), rotated by e
    up = (R - a) / (1 - a * R)
    um = (-R - a) / (1 + a * R)
    c = e * 0.5 * (up + um)
    s = 0.5 * (up - um)
    gap = (1 - R) * (1 - a) / (1 + a) if R < 1 else 0.05 * (1 - a) / (1 + a)
    lev_hi = refinement + int(math.ceil(math.log2(1.0 / gap)))
    t, wt = _panels(_graded_unit(2 + 2 * refinement, lev_hi), order)
    lev_th = refinement + int(math.ceil(math.log2(1.0 / (1.0 - a))))
    half = np.pi * 0.5 ** np.arange(lev_th + 1)
    phi_breaks = np.concatenate((-half, [0.0], half[::-1]))
    phi, wphi = _panels(phi_breaks, order)
    theta = phi + (np.angle(-lam) if a > 0 else 0.0)
    dirs = np.exp(1j * theta)
    proj = np.real(np.conj(c) * dirs)
    rho = proj + np.sqrt(np.maximum(proj ** 2 + s ** 2 - abs(c) ** 2, 0.0))
    r = rho[None, :] * t[:, None]
    u = r * dirs[None, :]
    w = (u + lam) / (1 + np.conj(lam) * u)
    jac = (1 - a * a) ** 2 / np.abs(1 + np.conj(lam) * u) ** 4
    with np.errstate(divide="ignore"):
        kernel = np.where(r > 0, np.log(r), 0.0)
    weight = (2 / np.pi) * kernel * jac * r * rho[None, :] * wt[:, None] * wphi[None, :]
    return w.ravel(), weight.ravel()


def green_potential(defect: DefectField, lam: complex, refinement: int = 2,
                    r_outer: float | None = None) -> float:
    """Green potential ``G(lam)`` of the defect over ``|w| < r_outer``.

    The integral is taken in the pseudo-hyperbolic polar coordinates
    ``u = (w - lam)/(1 - conj(lam) w)`` centred at ``lam``, where the
    logarithmic kernel becomes ``ln|u|``; Gauss-Legendre panels are graded
    toward ``u = 0`` and toward the image of the outer circle.  ``r_outer``
    defaults to the defect's own outer radius.  Always ``<= 0``.
    """
    lam = complex(lam)
    R = float(defect.r_outer if r_outer is None else r_outer)
    if R > defect.r_outer + 1e-15:
        raise ValueError(f"r_outer {R} exceeds the defect's range {defect.r_outer}")
    if not abs(lam) < R:
        raise ValueError(f"|lambda| = {abs(lam):.4g} must be below r_outer = {R}")
    if refinement < 0:
        raise ValueError("refinement must be nonnegative")
    w, weight = _green_rule(lam, R, int(refinement))
    d = np.asarray(defect.density(w), dtype=float)
    return float(min(np.dot(weight, d), 0.0))


@dataclass
class GreenNode:
    lam: complex
    value: float
    coarse: float
    delta: float
    flagged: bool


def green_node(defect: DefectField, lam: complex, refinement: int = 2,
               green_tolerance: float = 1e-3, r_outer: float | None = None) -> GreenNode:
    """Potential at ``lam`` with a one-step refinement check.

    The node is flagged when refinements ``refinement - 1`` and
    ``refinement`` differ by more than ``10 * green_tolerance`` relative to
    ``max(1, |G|)``.
    """
    fine = green_potential(defect, lam, refinement, r_outer)
    coarse = green_potential(defect, lam, max(refinement - 1, 0), r_outer)
    delta = abs(fine - coarse)
    return GreenNode(complex(lam), fine, coarse, delta,
                     bool(delta > 10 * green_tolerance * max(1.0, abs(fine))))


@dataclass
class GreenScan:
    """Potential values over a lambda lattice and several outer cutoffs.

    ``values[i, k]`` is ``G`` at ``lambdas[k]`` integrated over
    ``|w| < cutoffs[i]``.  ``growth_slope`` is the regression slope of
    ``sup_k |G|`` against ``log(1/(1 - cutoff))``: a defect with a bounded
    potential saturates, a divergent one keeps growing.
    ``lambda_slope`` regresses ``|G|`` at the largest cutoff against
    ``log(1/(1 - |lam|))`` and is reported for reference.
    """

    lambdas: np.ndarray
    cutoffs: np.ndarray
    values: np.ndarray
    sup_by_cutoff: np.ndarray
    sup_abs: float
    growth_slope: float
    lambda_slope: float
    nodes: list
    threshold: float
    status: str

    def __iter__(self):
        return iter((self.sup_abs, self.growth_slope))

    @property
    def flagged(self) -> list:
        return [n.lam for n in self.nodes if n.flagged]

    def to_dict(self) -> dict:
        return {
            "sup_abs": self.sup_abs,
            "growth_slope": self.growth_slope,
            "lambda_slope": self.lambda_slope,
            "threshold": self.threshold,
            "status": self.status,
            "cutoffs": [float(c) for c in self.cutoffs],
            "sup_by_cutoff": [float(v) for v in self.sup_by_cutoff],
            "max_value": float(np.max(self.values)),
            "flagged": [[z.real, z.imag] for z in self.flagged],
            "refinement_max_delta": float(max((n.delta for n in self.nodes), default=0.0)),
        }

    def to_rows(self):
        """``(lam_re, lam_im, |lam|, r_outer, value)`` rows."""
        rows = []
        for i, R in enumerate(self.cutoffs):
            for k, lam in enumerate(self.lambdas):
                rows.append((lam.real, lam.imag, abs(lam), float(R), float(self.values[i, k])))
        return rows


def _lambda_lattice(rings: Sequence[float], per_ring: int) -> np.ndarray:
    pts = []
    for r in rings:
        if r == 0:
            pts.append(0j)
        else:
            pts.extend(r * np.exp(2j * np.pi * (np.arange(per_ring) + 0.5) / per_ring))
    return np.array(pts, dtype=complex)


def default_cutoffs(r_outer: float) -> np.ndarray:
    """``1 - 2^-k`` for ``k >= 4`` below ``r_outer``, then ``r_outer``."""
    cuts = [1 - 2.0 ** -k for k in range(4, 20) if 1 - 2.0 ** -k < r_outer - 1e-12]
    cuts.append(min(r_outer, 0.999))
    return np.array(cuts)


def green_boundedness_scan(defect: DefectField,
                           lambda_rings: Sequence[float] = (0.0, 0.5, 0.75, 0.9),
                           per_ring: int = 4, cutoffs: Sequence[float] | None = None,
                           refinement: int = 1,
                           thresholds: Thresholds | None = None) -> GreenScan:
    """Boundedness trend of the Green potential.

    Status ``"bounded"`` when ``growth_slope <= slope_threshold * sup|G|``,
    ``"unbounded"`` at ``divergence_factor`` times that, else
    ``"inconclusive"``.  The refinement check runs at the largest cutoff.
    """
    th = thresholds or Thresholds()
    cut = np.asarray(default_cutoffs(defect.r_outer) if cutoffs is None else cutoffs,
                     dtype=float)
    lams = _lambda_lattice(lambda_rings, per_ring)
    if np.any(np.abs(lams) >= cut.min()):
        raise ValueError("lambda rings must lie inside every cutoff")
    jobs = [(i, k) for i in range(cut.size - 1) for k in range(lams.size)]
    coarse_vals = _pmap(lambda ik: green_potential(defect, lams[ik[1]], refinement,
                                                   cut[ik[0]]), jobs)
    nodes = _pmap(lambda lam: green_node(defect, lam, refinement, th.green_tolerance,
                                         cut[-1]), list(lams))
    values = np.empty((cut.size, lams.size))
    for (i, k), v in zip(jobs, coarse_vals):
        values[i, k] = v
    values[-1] = [n.value for n in nodes]
    sup_by_cut = np.max(np.abs(values), axis=1)
    sup_abs = float(sup_by_cut[-1])
    growth = _slope(np.log(1 / (1 - cut)), sup_by_cut)
    lam_slope = _slope(np.log(1 / (1 - np.abs(lams))), np.abs(values[-1]))
    limit = th.slope_threshold * sup_abs
    if sup_abs == 0.0 or growth <= limit:
        status = "bounded"
    elif growth >= th.divergence_factor * limit:
        status = "unbounded"
    else:
        status = "inconclusive"
    return GreenScan(lams, cut, values, sup_by_cut, sup_abs, growth, lam_slope, nodes,
                     limit, status)


# --------------------------------------------------------------------------
# Carleson boxes

@dataclass
class CarlesonTable:
    """Ratios ``mu(Q(I) cap {r <= r_cut}) / |I|`` over dyadic boxes.

    Boxes at depth ``j`` sit over arcs of length ``2 pi / 2^j`` and span
    ``1 - 2^-j <= r <= r_cut``.  All ratios are lower bounds for the
    untruncated boxes; empty boxes report 0 with ``empty`` set.
    """

    depth: np.ndarray
    box: np.ndarray
    ratio: np.ndarray
    empty: np.ndarray
    r_cut: float
    max_depth: int

    @property
    def constant(self) -> float:
        return float(np.max(self.ratio, initial=0.0))

    def depth_sup(self, depth: int) -> float:
        sel = self.depth == depth
        return float(np.max(self.ratio[sel], initial=0.0))

    def rows(self):
        return list(zip(self.depth.tolist(), self.box.tolist(), self.ratio.tolist(),
                        self.empty.tolist()))


def carleson_test(defect: DefectField, max_depth: int = 8, r_cut: float | None = None,
                  radial_order: int = 8, angular_order: int = 4) -> CarlesonTable:
    """Dyadic Carleson-box ratios of ``mu = D (1 - |w|) dA``, truncated at ``r_cut``."""
    r_cut = float(min(defect.r_outer, 0.995) if r_cut is None else r_cut)
    if r_cut > defect.r_outer + 1e-15:
        raise ValueError(f"r_cut {r_cut} exceeds the defect's range {defect.r_outer}")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    inner = [1 - 2.0 ** -j for j in range(1, max_depth + 1)]
    breaks = np.unique(np.array([b for b in inner if b < r_cut] + [r_cut]))
    n_arcs = 2 ** max_depth
    phi, wphi = _panels(np.linspace(0.0, 2 * np.pi, n_arcs + 1), angular_order)
    depth, box, ratio, empty = [], [], [], []
    if breaks.size >= 2:
        r, wr = _panels(breaks, radial_order)
        w = r[:, None] * np.exp(1j * phi)[None, :]
        d = np.asarray(defect.density(w), dtype=float)
        mass = d * ((1 - r) * r * wr)[:, None] * wphi[None, :]
    for j in range(1, max_depth + 1):
        length = 2 * np.pi / 2 ** j
        lo = 1 - 2.0 ** -j
        if breaks.size < 2 or lo >= r_cut:
            vals = np.zeros(2 ** j)
            flag = np.ones(2 ** j, dtype=bool)
        else:
            per_arc = mass[r >= lo].sum(axis=0).reshape(n_arcs, angular_order).sum(axis=1)
            vals = per_arc.reshape(2 ** j, -1).sum(axis=1) / length
            flag = np.zeros(2 ** j, dtype=bool)
        depth.append(np.full(2 ** j, j))
        box.append(np.arange(2 ** j))
        ratio.append(vals)
        empty.append(flag)
    return CarlesonTable(np.concatenate(depth), np.concatenate(box), np.concatenate(ratio),
                         np.concatenate(empty), r_cut, int(max_depth))


@dataclass
class CarlesonScan:
    """Empirical Carleson constants as depth and cutoff grow together.

    At depth ``d`` boxes up to depth ``d`` are integrated to
    ``r_cut(d) = min(r_outer, 1 - 2^-d)``; ``constants[d]`` is the sup of
    that table.  ``growth`` compares the deepest with the shallowest depth.
    """

    depths: np.ndarray
    r_cuts: np.ndarray
    constants: np.ndarray
    growth: float
    status: str
    tables: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "depths": [int(d) for d in self.depths],
            "r_cuts": [float(r) for r in self.r_cuts],
            "constants": [float(c) for c in self.constants],
            "growth": self.growth,
            "status": self.status,
            "truncation": "ratios are lower bounds: boxes integrated only up to r_cut",
        }

    def to_rows(self):
        """``(depth_limit, r_cut, depth, box, ratio, empty)`` rows."""
        rows = []
        for d, rc, tab in zip(self.depths, self.r_cuts, self.tables):
            for row in tab.rows():
                rows.append((int(d), float(rc)) + tuple(row))
        return rows


def carleson_scan(defect: DefectField, depths: Sequence[int] = (4, 5, 6, 7, 8),
                  r_outer: float | None = None,
                  thresholds: Thresholds | None = None) -> CarlesonScan:
    """Saturation test for the Carleson constant.

    ``"saturating"`` when the constant grows by at most
    ``carleson_saturation`` from the first to the last depth,
    ``"diverging"`` when it grows by ``carleson_divergence`` or more.
    """
    th = thresholds or Thresholds()
    r_outer = float(min(defect.r_outer, 0.995) if r_outer is None else r_outer)
    depths = np.asarray(depths, dtype=int)
    cuts = np.minimum(r_outer, 1 - 2.0 ** -depths)
    tables = _pmap(lambda dc: carleson_test(defect, int(dc[0]), float(dc[1])),
                   list(zip(depths, cuts)))
    consts = np.array([t.constant for t in tables])
    first = consts[0]
    if first == 0.0:
        growth = 1.0 if consts[-1] == 0.0 else float("inf")
    else:
        growth = float(consts[-1] / first)
    if growth <= th.carleson_saturation:
        status = "saturating"
    elif growth >= th.carleson_divergence:
        status = "diverging"
    else:
        status = "inconclusive"
    return CarlesonScan(depths, cuts, consts, growth, status, tables)


# --------------------------------------------------------------------------
# pointwise estimate and verdict

def pointwise_estimate_test(defect: DefectField) -> float:
    """``sup sqrt(D(w)) (1 - |w|)`` over the grid nodes."""
    if defect.grid is None or defect.values.size == 0:
        raise ValueError("the pointwise estimate needs a gridded defect")
    w = defect.grid.nodes
    return float(np.max(np.sqrt(np.maximum(defect.values, 0.0)) * (1 - np.abs(w))))


@dataclass
class DiagnosticsReport:
    frame_bounds: FrameBounds
    green_scan: GreenScan | None
    carleson: CarlesonScan | None
    pointwise_estimate: float | None
    verdict: str
    evidence: list
    defect: DefectField | None = field(default=None, repr=False)
    skipped: list = field(default_factory=list)

    @property
    def carleson_table(self) -> CarlesonTable | None:
        return self.carleson.tables[-1] if self.carleson else None

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "evidence": list(self.evidence),
            "skipped": list(self.skipped),
            "frame_bounds": self.frame_bounds.to_dict(),
            "green_scan": self.green_scan.to_dict() if self.green_scan else None,
            "carleson": self.carleson.to_dict() if self.carleson else None,
            "pointwise_estimate": self.pointwise_estimate,
            "defect": None,
        }
        if self.defect is not None:
            out["defect"] = {"max": float(np.max(self.defect.values)),
                             "r_outer": self.defect.r_outer,
                             "crosscheck": dict(self.defect.crosscheck)}
        return out


def verdict(frame_bounds: FrameBounds, green: GreenScan | None = None,
            carleson: CarlesonScan | None = None, pointwise: float | None = None,
            defect: DefectField | None = None) -> DiagnosticsReport:
    """Aggregate the tests.

    ``Similar`` needs flat two-sided frame bounds, a bounded Green trend and
    saturating Carleson constants.  ``NotSimilar`` follows from any failure
    with margin: rank drop, diverging frame bounds, diverging Carleson
    constants or an unbounded Green trend.  Everything else is
    ``Inconclusive``.
    """
    grid = frame_bounds.grid
    if defect is not None and grid is not None and defect.grid is not None \
            and not grid.same_as(defect.grid):
        raise ValueError("frame bounds and defect field were computed on different grids")
    fb = frame_bounds
    evidence = [f"frame_bounds: {fb.status} (sigma_min_inf={fb.sigma_min_inf:.6g}, "
                f"sigma_max_sup={fb.sigma_max_sup:.6g}, slopes={fb.min_slope:.3g}/"
                f"{fb.max_slope:.3g})"]
    if fb.rank_drop:
        evidence[0] += f" rank drop near w={fb.rank_drop_at:.4g}"
    if green is not None:
        evidence.append(f"green_scan: {green.status} (sup|G|={green.sup_abs:.6g}, "
                        f"slope={green.growth_slope:.4g}, threshold={green.threshold:.4g})")
    if carleson is not None:
        evidence.append(f"carleson: {carleson.status} (C={carleson.constants[-1]:.6g}, "
                        f"growth={carleson.growth:.4g})")
    if pointwise is not None:
        evidence.append(f"pointwise_estimate: sup sqrt(D)(1-|w|)={pointwise:.6g}")
    failed = (fb.status in ("rank_drop", "diverging")
              or (carleson is not None and carleson.status == "diverging")
              or (green is not None and green.status == "unbounded"))
    passed = (fb.status == "flat" and green is not None and green.status == "bounded"
              and carleson is not None and carleson.status == "saturating")
    result = NOT_SIMILAR if failed else SIMILAR if passed else INCONCLUSIVE
    if fb.status == "flat" and green is not None and green.status == "unbounded":
        evidence.append("incoherent: flat frame bounds with an unbounded Green trend")
    skipped = [name for name, part in (("green_scan", green), ("carleson", carleson),
                                       ("pointwise_estimate", pointwise)) if part is None]
    return DiagnosticsReport(fb, green, carleson, pointwise, result, evidence, defect, skipped)


def diagnose(model: QuotientModuleModel, grid: DiskGrid | None = None, h: float = 1e-3,
             thresholds: Thresholds | None = None, refinement: int = 1,
             depths: Sequence[int] = (4, 5, 6, 7, 8)) -> DiagnosticsReport:
    """Run every test on one model and grid and aggregate the verdict.

    A rank drop decides ``NotSimilar`` at once; the defect-based tests are
    then skipped since ``Pi_V`` is undefined at the drop.
    """
    grid = grid or DiskGrid()
    th = thresholds or Thresholds()
    fb = frame_bound_test(model, grid, th)
    if fb.rank_drop:
        return verdict(fb)
    try:
        defect = defect_field(model, grid, h)
    except RankDeficientFrame:
        fb.status = "rank_drop"
        fb.rank_drop = True
        return verdict(fb)
    green = green_boundedness_scan(defect, refinement=refinement, thresholds=th)
    carl = carleson_scan(defect, depths, thresholds=th)
    point = pointwise_estimate_test(defect)
    return verdict(fb, green, carl, point, defect)
