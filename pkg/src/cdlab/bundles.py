"""
Anti-holomorphic frames, quotient-module models and curvature.

A frame is a matrix polynomial in ``conj(w)``::

    V(w) = sum_k A_k conj(w)^k,       A_k in C^{n x m}

whose columns are the vectors ``v_{i,w}``.  Paired with an atom it models
a quotient module whose sections are ``gamma_{i,w} = k(., w) (x) v_{i,w}``,
so the Gram matrix of the sections is ``k(w, w) V(w)^* V(w)``.

Curvature follows ``K(w) = -dbar(G^{-1} dG)`` and is computed by nested
Wirtinger stencils; the power-family line curvature also has a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .atoms import AtomSpec, kernel_eval

__all__ = [
    "CurvatureSample",
    "FrameMap",
    "IllConditionedGram",
    "QuotientModuleModel",
    "RankDeficientFrame",
    "curvature_additivity_check",
    "curvature_line",
    "curvature_line_closed",
    "curvature_matrix_fd",
    "gram_matrix",
    "romberg",
    "wirtinger_derivative",
    "wirtinger_stencil",
]

RANK_TOLERANCE = 1e-8
CONDITION_LIMIT = 1e12


class RankDeficientFrame(ValueError):
    """The frame loses rank at an evaluation point."""


class IllConditionedGram(ValueError):
    """The Gram matrix is too ill-conditioned to invert reliably."""

    def __init__(self, condition: float, where):
        self.condition = condition
        super().__init__(f"Gram matrix condition number {condition:.3g} exceeds "
                         f"{CONDITION_LIMIT:.0e} near w = {where}")


class FrameMap:
    """Polynomial anti-holomorphic frame ``w -> V(w) = sum_k A_k conj(w)^k``.

    Parameters
    ----------
    coefficients : array_like, shape (d + 1, n, m)
        Matrix coefficients ``A_0 .. A_d``.
    tail_bound : float, optional
        For a truncated power series, a bound on the norm of the dropped
        tail over the working grid.  ``None`` marks an exact frame.
    name : str, optional
    """

    def __init__(self, coefficients, tail_bound: float | None = None, name: str = ""):
        a = np.array(coefficients, dtype=complex)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or 0 in a.shape:
            raise ValueError("frame coefficients must have shape (degree + 1, n, m)")
        if not np.all(np.isfinite(a)):
            raise ValueError("frame coefficients must be finite")
        if a.shape[2] > a.shape[1]:
            raise ValueError(f"rank m = {a.shape[2]} exceeds ambient dimension n = {a.shape[1]}")
        if tail_bound is not None and not tail_bound >= 0:
            raise ValueError("tail_bound must be nonnegative")
        a.setflags(write=False)
        self.coefficients = a
        self.tail_bound = None if tail_bound is None else float(tail_bound)
        self.name = name
        flat = a.reshape(a.shape[0], -1)
        k = np.arange(a.shape[0])
        dflat = (flat * k[:, None])[1:]
        # large sparse frames (truncated power series) evaluate through CSR products
        if flat.size > 4096 and np.count_nonzero(flat) < 0.1 * flat.size:
            self._flat, self._dflat = sp.csr_matrix(flat), sp.csr_matrix(dflat)
        else:
            self._flat, self._dflat = flat, dflat

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def n(self) -> int:
        return self.coefficients.shape[1]

    @property
    def m(self) -> int:
        return self.coefficients.shape[2]

    @property
    def truncated(self) -> bool:
        return self.tail_bound is not None

    def __repr__(self):
        tag = "exact" if self.tail_bound is None else f"truncated(tail_bound={self.tail_bound:.3g})"
        return f"FrameMap({self.name or 'anonymous'}, n={self.n}, m={self.m}, degree={self.degree}, {tag})"

    def _powers(self, w, count: int) -> np.ndarray:
        wb = np.conj(np.ravel(np.asarray(w, dtype=complex)))
        powers = np.empty((wb.size, count), dtype=complex)
        powers[:, 0] = 1.0
        if count > 1:
            powers[:, 1:] = wb[:, None]
            np.cumprod(powers[:, 1:], axis=1, out=powers[:, 1:])
        return powers

    def _apply(self, powers, flat, shape):
        if sp.issparse(flat):
            out = np.asarray((flat.T @ powers.T).T)
        else:
            out = powers @ flat
        return out.reshape(shape + (self.n, self.m))

    def __call__(self, w) -> np.ndarray:
        """``V(w)``; shape ``w.shape + (n, m)``."""
        shape = np.shape(w)
        return self._apply(self._powers(w, self.degree + 1), self._flat, shape)

    def dbar(self, w) -> np.ndarray:
        """Exact ``dbar V(w) = sum_k k A_k conj(w)^(k-1)``."""
        shape = np.shape(w)
        if self.degree == 0:
            return np.zeros(shape + (self.n, self.m), dtype=complex)
        return self._apply(self._powers(w, self.degree), self._dflat, shape)

    def gram(self, w) -> np.ndarray:
        """Frame Gram matrix ``G_V(w) = V(w)^* V(w)``."""
        v = self(w)
        return np.conj(np.swapaxes(v, -1, -2)) @ v

    def singular_values(self, w) -> np.ndarray:
        return np.linalg.svd(self(w), compute_uv=False)

    def check_rank(self, w, tol: float = RANK_TOLERANCE) -> None:
        s = self.singular_values(w)
        bad = s[..., -1] <= tol
        if np.any(bad):
            where = np.ravel(np.asarray(w, dtype=complex))[np.ravel(bad)][0] if np.ndim(w) else w
            raise RankDeficientFrame(f"frame {self.name or ''} is rank deficient at w = {where}")

    def times_unitary(self, u) -> "FrameMap":
        """Frame ``V(w) U`` for a fixed unitary ``U``."""
        return FrameMap(self.coefficients @ np.asarray(u, dtype=complex),
                        self.tail_bound, self.name)

    # -- constructors ----------------------------------------------------
    @classmethod
    def constant(cls, n: int, m: int | None = None) -> "FrameMap":
        """Orthonormal constant frame ``v_{i,w} = e_i``."""
        m = n if m is None else m
        return cls(np.eye(n, m)[None], name="constant")

    @classmethod
    def bounded_perturbation(cls) -> "FrameMap":
        """``v_w = (1, conj(w)/2)``."""
        a = np.zeros((2, 2, 1), dtype=complex)
        a[0, 0, 0] = 1.0
        a[1, 1, 0] = 0.5
        return cls(a, name="bounded_perturbation")

    @classmethod
    def hardy_truncated(cls, length: int, r_max: float = 0.995) -> "FrameMap":
        """``v_w = (1, conj(w), ..., conj(w)^(N-1))``, the truncated H^2 frame.

        ``||v_w||^2 -> 1/(1 - |w|^2)`` as ``N`` grows; the recorded tail bound
        is ``sup_{|w| <= r_max} (|w|^{2N} / (1 - |w|^2))^{1/2}``.
        """
        a = np.zeros((length, length, 1), dtype=complex)
        a[np.arange(length), np.arange(length), 0] = 1.0
        tail = float(np.sqrt(r_max ** (2 * length) / (1 - r_max ** 2)))
        return cls(a, tail_bound=tail, name=f"hardy_truncated_{length}")

    @classmethod
    def zero_at_point(cls, w0: complex, u=(1.0,)) -> "FrameMap":
        """``v_w = (conj(w) - conj(w0)) u``; rank drops at ``w0``."""
        u = np.asarray(u, dtype=complex).reshape(-1, 1)
        a = np.stack([-np.conj(w0) * u, u])
        return cls(a, name="zero_at_point")

    @classmethod
    def from_dict(cls, data: dict) -> "FrameMap":
        """Frame from ``{"n", "m", "degree", "coefficients" | "entries"}``.

        ``coefficients`` lists each ``A_k`` as ``n * m`` row-major ``[re, im]``
        pairs; ``entries`` lists only nonzeros as ``[k, row, col, re, im]``.
        """
        n, m, d = int(data["n"]), int(data["m"]), int(data["degree"])
        if n < 1 or m < 1 or d < 0:
            raise ValueError("frame needs n, m >= 1 and degree >= 0")
        a = np.zeros((d + 1, n, m), dtype=complex)
        if "entries" in data:
            for e in data["entries"]:
                k, i, j = (int(x) for x in e[:3])
                if not (0 <= k <= d and 0 <= i < n and 0 <= j < m) or len(e) != 5:
                    raise ValueError(f"bad frame entry {e}")
                a[k, i, j] = complex(float(e[3]), float(e[4]))
        else:
            mats = data["coefficients"]
            if len(mats) != d + 1:
                raise ValueError(f"expected {d + 1} coefficient matrices, got {len(mats)}")
            for k, entries in enumerate(mats):
                if len(entries) != n * m:
                    raise ValueError(f"coefficient matrix {k} needs {n * m} entries, "
                                     f"got {len(entries)}")
                vals = [complex(float(e[0]), float(e[1])) for e in entries]
                a[k] = np.reshape(vals, (n, m))
        return cls(a, tail_bound=data.get("tail_bound"), name=data.get("name", ""))

    def to_dict(self) -> dict:
        out = {"n": self.n, "m": self.m, "degree": self.degree}
        a = self.coefficients
        if a.size > 4096 and np.count_nonzero(a) < 0.1 * a.size:
            out["entries"] = [[int(k), int(i), int(j), float(a[k, i, j].real),
                               float(a[k, i, j].imag)] for k, i, j in zip(*np.nonzero(a))]
        else:
            out["coefficients"] = [[[float(z.real), float(z.imag)] for z in mat.ravel()]
                                   for mat in a]
        if self.tail_bound is not None:
            out["tail_bound"] = self.tail_bound
        if self.name:
            out["name"] = self.name
        return out


@dataclass(frozen=True, eq=False)
class QuotientModuleModel:
    """Atom plus frame: sections ``gamma_{i,w} = k(., w) (x) v_{i,w}``."""

    atom: AtomSpec
    frame: FrameMap

    @property
    def m(self) -> int:
        return self.frame.m

    @property
    def n(self) -> int:
        return self.frame.n

    def gram(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return np.asarray(kernel_eval(self.atom, w, w))[..., None, None] * self.frame.gram(w)


@dataclass(frozen=True, eq=False)
class CurvatureSample:
    w: complex
    value: np.ndarray
    method: str
    h: float | None = None


def _check_stencil(w, h: float) -> None:
    if not h > 0:
        raise ValueError("step h must be positive")
    reach = np.max(np.abs(np.asarray(w))) + h
    if reach >= 1.0:
        raise ValueError(f"Wirtinger stencil leaves the disk (|w| + h = {reach:.6g}); "
                         "shrink h or move w inward")


def romberg(estimate: Callable, h: float, levels: int):
    """Richardson extrapolation of an even-order O(h^2) estimate.

    Evaluates ``estimate`` at ``h, h/2, ..., h/2^levels`` and eliminates the
    ``h^2, h^4, ...`` error terms; ``levels=0`` returns ``estimate(h)``.
    """
    table = [np.asarray(estimate(h / 2 ** j)) for j in range(levels + 1)]
    for order in range(1, levels + 1):
        factor = 4.0 ** order
        table = [(factor * fine - coarse) / (factor - 1.0)
                 for coarse, fine in zip(table[:-1], table[1:])]
    return table[0]


def wirtinger_derivative(f: Callable, w, h: float, which: str = "dbar",
                         richardson: int = 0):
    """Central-difference Wirtinger derivative of ``f`` at ``w``.

    ``d = (d_x - i d_y)/2`` and ``dbar = (d_x + i d_y)/2`` on the 4-point
    stencil ``{w +- h, w +- ih}``; O(h^2).  ``richardson`` extra levels at
    ``h/2, h/4, ...`` raise the order by two each.  ``f`` must map an array
    of points to an array with the same leading shape; trailing (matrix)
    axes are differentiated entrywise.
    """
    if which not in ("d", "dbar"):
        raise ValueError("which must be 'd' or 'dbar'")
    w = np.asarray(w, dtype=complex)
    _check_stencil(w, h)
    sign = -1j if which == "d" else 1j

    def stencil(step):
        fx = (np.asarray(f(w + step)) - np.asarray(f(w - step))) / (2 * step)
        fy = (np.asarray(f(w + 1j * step)) - np.asarray(f(w - 1j * step))) / (2 * step)
        return 0.5 * (fx + sign * fy)

    return romberg(stencil, h, int(richardson))


def wirtinger_stencil(h: float, which: str = "dbar", richardson: int = 0):
    """Offsets and weights of :func:`wirtinger_derivative` as one linear rule.

    Returns ``(offsets, weights)`` with
    ``wirtinger_derivative(f, w, h, which, richardson) == sum_k weights[k] f(w + offsets[k])``
    for any ``f``; useful when the stencil values only enter through inner products.
    """
    if which not in ("d", "dbar"):
        raise ValueError("which must be 'd' or 'dbar'")
    sign = -1j if which == "d" else 1j
    levels = int(richardson)
    level_weights = romberg(lambda step: np.eye(levels + 1)[int(round(np.log2(h / step)))],
                            h, levels)
    offsets, weights = [], []
    for j, beta in enumerate(level_weights):
        step = h / 2 ** j
        for off, coef in ((step, 1.0), (-step, -1.0), (1j * step, sign), (-1j * step, -sign)):
            offsets.append(off)
            weights.append(beta * coef / (4 * step))
    return np.array(offsets, dtype=complex), np.array(weights, dtype=complex)


def gram_matrix(model: QuotientModuleModel, w) -> np.ndarray:
    """Gram of the sections, ``G(w) = k(w, w) V(w)^* V(w)``."""
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(w) >= model.atom.r_max):
        raise ValueError(f"|w| must be below r_max = {model.atom.r_max}")
    model.frame.check_rank(w)
    g = model.gram(w)
    return g if g.ndim > 2 else np.asarray(g)


def curvature_line_closed(atom: AtomSpec, w) -> float:
    """Curvature ``-alpha / (1 - |w|^2)^2`` of the power atom's line bundle."""
    if atom.family != "power":
        raise NotImplementedError("closed-form curvature only exists for the power family; "
                                  "use curvature_line(..., method='fd')")
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(w) >= 1):
        raise ValueError("w must lie in the unit disk")
    val = -atom.alpha / (1.0 - np.abs(w) ** 2) ** 2
    return float(val) if val.ndim == 0 else val


def _gram_function(source) -> tuple[Callable, float]:
    if isinstance(source, QuotientModuleModel):
        return source.gram, source.atom.r_max
    if isinstance(source, FrameMap):
        return source.gram, 0.995
    if isinstance(source, AtomSpec):
        return (lambda u: np.asarray(kernel_eval(source, u, u))[..., None, None]), source.r_max
    if callable(source):
        return source, 0.995
    raise TypeError(f"cannot build a Gram function from {type(source).__name__}")


def curvature_matrix_fd(source, w, h: float = 1e-3, richardson: int = 2,
                        r_max: float | None = None, check: bool = True) -> np.ndarray:
    """Curvature ``-dbar(G^{-1} dG)`` by nested Wirtinger stencils.

    ``source`` is a :class:`QuotientModuleModel` (full section Gram), a
    :class:`FrameMap` (frame Gram ``G_V``), an :class:`AtomSpec` (line
    bundle of the atom) or a callable returning Gram matrices.  The inner
    ``d`` and outer ``dbar`` both use step ``h``; ``richardson`` levels
    extrapolate the nested result over ``h, h/2, ...`` (0 gives the raw
    O(h^2) stencil).

    Points with ``|w| > r_max - 2h`` are refused.
    """
    gram, default_rmax = _gram_function(source)
    r_max = default_rmax if r_max is None else r_max
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(w) > r_max - 2 * h):
        raise ValueError(f"curvature refuses |w| > r_max - 2h = {r_max - 2 * h:.6g}")
    if check:
        g0 = np.asarray(gram(w))
        cond = np.linalg.cond(g0)
        if np.any(~np.isfinite(cond)) or np.any(cond > CONDITION_LIMIT):
            worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
            raise IllConditionedGram(worst, w if w.ndim == 0 else "sampled points")

    def nested(step):
        def connection(u):
            g = np.asarray(gram(u))
            dg = wirtinger_derivative(gram, u, step, "d")
            return np.linalg.solve(g, dg)
        return -wirtinger_derivative(connection, w, step, "dbar")

    return romberg(nested, h, int(richardson))


def curvature_line(atom: AtomSpec, w, h: float = 1e-3, method: str = "auto"):
    """Atom line-bundle curvature: closed form for power atoms, else stencils."""
    if method == "closed" or (method == "auto" and atom.family == "power"):
        return curvature_line_closed(atom, w)
    k = curvature_matrix_fd(atom, w, h)
    return k[..., 0, 0].real if np.ndim(w) else float(k[0, 0].real)


def curvature_additivity_check(model: QuotientModuleModel, w, h: float = 1e-3) -> float:
    """``max |K_Q(w) - (K_M(w) I + K_V(w))|`` over entries (and points).

    ``K_Q`` is computed from the full Gram ``k(w, w) G_V``; ``K_V`` from
    ``G_V`` alone; ``K_M`` from the atom (closed form when available).
    """
    w = np.asarray(w, dtype=complex)
    model.frame.check_rank(w)
    kq = curvature_matrix_fd(model, w, h, r_max=model.atom.r_max)
    kv = curvature_matrix_fd(model.frame, w, h, r_max=model.atom.r_max)
    km = np.asarray(curvature_line(model.atom, w, h))
    eye = np.eye(model.m)
    return float(np.max(np.abs(kq - (km[..., None, None] * eye + kv))))
