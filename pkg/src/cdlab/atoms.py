"""
Cowen-Douglas atoms realized as diagonal reproducing kernels.

An atom is described by its diagonal coefficients ``c_l > 0`` with
``c_0 = 1``; the kernel is

    k(z, w) = sum_l c_l (z conj(w))^l

and the orthonormal polynomials are ``q_l(z) = sqrt(c_l) z^l``.  The
*power* family ``k(z, w) = (1 - z conj(w))^(-alpha)`` covers the Hardy
space (alpha = 1) and the weighted Bergman spaces (alpha = 2, 3, ...,
and non-integer weights).

Accuracy warning: the power family is evaluated in closed form, so
``r_max`` only limits the series paths (tail bounds, inverse-kernel
partial sums).  As ``r_max -> 1`` the geometric tail bound degrades and
a truncation of length ``L`` no longer certifies ``tail_tolerance``;
:func:`series_tail_bound` reports the bound and :func:`kernel_series`
warns when it is exceeded.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AtomSpec",
    "InverseKernelPartial",
    "TruncationWarning",
    "c_operator_pairing",
    "inverse_kernel_partial",
    "kernel_dbar_w",
    "kernel_eval",
    "kernel_inner_products",
    "kernel_matrix",
    "kernel_mixed_derivative",
    "kernel_series",
    "purity_defect",
    "series_tail_bound",
]


class TruncationWarning(UserWarning):
    """A truncated series cannot certify the requested tolerance."""


@dataclass(frozen=True)
class AtomSpec:
    """Diagonal reproducing kernel of a Cowen-Douglas atom.

    Parameters
    ----------
    family : {"power", "diagonal"}
    alpha : float, optional
        Weight of the power family, ``alpha > 0``.
    coefficients : tuple of float, optional
        Diagonal coefficients ``c_0, c_1, ...`` of the diagonal family.
        The kernel is the finite series over these coefficients.
    truncation : int
        Number of series terms ``L`` used by the series paths.  For the
        diagonal family it is ``len(coefficients)``.
    tail_tolerance : float
        Relative tolerance the dropped tail must respect.
    r_max : float
        Largest modulus the derived bundle quantities accept.
    """

    family: str
    alpha: float | None = None
    coefficients: tuple[float, ...] | None = None
    truncation: int = 400
    tail_tolerance: float = 1e-10
    r_max: float = 0.995
    _coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family == "power":
            if self.alpha is None or not math.isfinite(self.alpha) or self.alpha <= 0:
                raise ValueError(f"power atom needs alpha > 0, got {self.alpha!r}")
            object.__setattr__(self, "alpha", float(self.alpha))
            if self.truncation < 1:
                raise ValueError("truncation must be a positive integer")
            c = _power_coefficients(self.alpha, self.truncation)
        elif self.family == "diagonal":
            if not self.coefficients:
                raise ValueError("diagonal atom needs a non-empty coefficient list")
            c = np.asarray(self.coefficients, dtype=float)
            if not np.all(np.isfinite(c)) or np.any(c <= 0):
                raise ValueError("diagonal coefficients must be finite and positive")
            if abs(c[0] - 1.0) > 1e-12:
                raise ValueError(f"diagonal atom must satisfy c_0 = 1, got {c[0]!r}")
            object.__setattr__(self, "coefficients", tuple(float(x) for x in c))
            object.__setattr__(self, "truncation", len(c))
        else:
            raise ValueError(f"unknown atom family {self.family!r}")
        if not (0 < self.r_max < 1):
            raise ValueError("r_max must lie in (0, 1)")
        if self.tail_tolerance <= 0:
            raise ValueError("tail_tolerance must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "_coeffs", c)

    @classmethod
    def power(cls, alpha: float, **kwargs) -> "AtomSpec":
        return cls("power", alpha=alpha, **kwargs)

    @classmethod
    def diagonal(cls, coefficients, **kwargs) -> "AtomSpec":
        return cls("diagonal", coefficients=tuple(coefficients), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "AtomSpec":
        kw = {}
        if "truncation" in data:
            kw["truncation"] = int(data["truncation"])
        if "tail_tolerance" in data:
            kw["tail_tolerance"] = float(data["tail_tolerance"])
        if "r_max" in data:
            kw["r_max"] = float(data["r_max"])
        family = data.get("family")
        if family == "power":
            return cls.power(float(data["alpha"]), **kw)
        if family == "diagonal":
            kw.pop("truncation", None)
            return cls.diagonal([float(x) for x in data["coefficients"]], **kw)
        raise ValueError(f"unknown atom family {family!r}")

    def to_dict(self) -> dict:
        if self.family == "power":
            return {"family": "power", "alpha": self.alpha,
                    "truncation": self.truncation,
                    "tail_tolerance": self.tail_tolerance, "r_max": self.r_max}
        return {"family": "diagonal", "coefficients": list(self.coefficients),
                "tail_tolerance": self.tail_tolerance, "r_max": self.r_max}

    @property
    def label(self) -> str:
        if self.family == "power":
            return f"power(alpha={self.alpha:g})"
        return f"diagonal(L={self.truncation})"

    def coeffs(self, length: int | None = None) -> np.ndarray:
        """Diagonal coefficients ``c_0 .. c_{length-1}``.

        Power atoms extend past ``truncation`` on request; diagonal atoms
        are zero-padded (their kernel is the finite series).
        """
        if length is None or length == len(self._coeffs):
            return self._coeffs
        if length < len(self._coeffs):
            return self._coeffs[:length]
        if self.family == "power":
            return _power_coefficients(self.alpha, length)
        out = np.zeros(length)
        out[: len(self._coeffs)] = self._coeffs
        return out


def _power_coefficients(alpha: float, length: int) -> np.ndarray:
    # c_{l+1} = c_l (alpha + l) / (l + 1); avoids Gamma overflow for large l
    ratios = (alpha + np.arange(length - 1)) / np.arange(1, length)
    return np.concatenate(([1.0], np.cumprod(ratios)))


def _as_disk_point(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(np.abs(arr) >= 1.0):
        raise ValueError(f"{name} must lie in the open unit disk, got |{name}| = "
                         f"{np.max(np.abs(arr)):.6g}")
    return arr


def _poly(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Horner evaluation of sum_l coeffs[l] x^l, broadcasting over x."""
    acc = np.zeros(np.shape(x), dtype=complex)
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def _scalar(value):
    return complex(value) if np.ndim(value) == 0 else value


def kernel_eval(atom: AtomSpec, z, w):
    """Reproducing kernel ``k(z, w)``; Hermitian: ``k(z, w) = conj(k(w, z))``."""
    z = _as_disk_point(z, "z")
    w = _as_disk_point(w, "w")
    x = z * np.conj(w)
    if atom.family == "power":
        # principal branch is single valued: Re(1 - x) > 0 on the bidisk
        return _scalar((1.0 - x) ** (-atom.alpha))
    return _scalar(_poly(atom.coeffs(), x))


def kernel_series(atom: AtomSpec, z, w, length: int | None = None):
    """Kernel by direct summation of ``length`` series terms.

    Warns with :class:`TruncationWarning` when the ratio tail bound at
    ``|z conj(w)|`` exceeds the atom's ``tail_tolerance``.
    """
    z = _as_disk_point(z, "z")
    w = _as_disk_point(w, "w")
    length = atom.truncation if length is None else int(length)
    x = z * np.conj(w)
    rho = float(np.sqrt(np.max(np.abs(x)))) if np.size(x) else 0.0
    tail = series_tail_bound(atom, rho, length)
    if tail > atom.tail_tolerance:
        warnings.warn(f"series tail bound {tail:.3g} exceeds tolerance "
                      f"{atom.tail_tolerance:.3g} at radius {rho:.4f} with L={length}",
                      TruncationWarning, stacklevel=2)
    return _scalar(_poly(atom.coeffs(length), x))


def series_tail_bound(atom: AtomSpec, r: float, length: int | None = None) -> float:
    """Relative bound on the dropped tail of the diagonal kernel at ``|z|=|w|=r``.

    Uses the ratio test: once the term ratio ``c_{l+1}/c_l r^2`` is below
    one, the tail after ``length`` terms is bounded by the geometric series
    started at the first dropped term.  Returns ``inf`` when the ratio has
    not yet dropped below one.
    """
    length = atom.truncation if length is None else int(length)
    t = float(r) ** 2
    if t == 0.0:
        return 0.0
    if atom.family == "diagonal":
        c = atom.coeffs()
        if length >= len(c):
            return 0.0
        terms = c[length:] * t ** np.arange(length, len(c))
        head = float(np.sum(c[:length] * t ** np.arange(length)))
        return float(np.sum(terms)) / head
    alpha = atom.alpha
    # sup_{l >= length} of the term ratio is attained at l = length for alpha >= 1,
    # and tends to t from above/below otherwise
    q = t * max((alpha + length) / (length + 1), 1.0)
    if q >= 1.0:
        return math.inf
    c = atom.coeffs(length + 1)
    first = c[length] * t ** length
    head = (1.0 - t) ** (-alpha)
    return float(first / (1.0 - q) / head)


def kernel_dbar_w(atom: AtomSpec, z, w):
    """``d/d conj(w)`` of ``k(z, w)`` (the section derivative ``k'(., w)``)."""
    z = _as_disk_point(z, "z")
    w = _as_disk_point(w, "w")
    x = z * np.conj(w)
    if atom.family == "power":
        return _scalar(atom.alpha * z * (1.0 - x) ** (-atom.alpha - 1.0))
    c = atom.coeffs()
    dc = c[1:] * np.arange(1, len(c))
    return _scalar(z * _poly(dc, x))


def kernel_mixed_derivative(atom: AtomSpec, z, w):
    """``d/dz d/d conj(w)`` of ``k(z, w)``; at ``z = w`` this is ``||k'(., w)||^2``."""
    z = _as_disk_point(z, "z")
    w = _as_disk_point(w, "w")
    x = z * np.conj(w)
    if atom.family == "power":
        a = atom.alpha
        return _scalar(a * (1.0 + a * x) * (1.0 - x) ** (-a - 2.0))
    c = atom.coeffs()
    l = np.arange(1, len(c))
    return _scalar(_poly(c[1:] * l * l, x))


def kernel_inner_products(atom: AtomSpec, w, method: str = "closed"):
    """The three inner products of the kernel section at ``w``.

    Returns ``(||k||^2, <k', k>, ||k'||^2)`` where ``k = k(., w)`` and
    ``k' = dbar_w k(., w)``.  ``method="series"`` sums the diagonal series
    term by term (an independent route for power atoms).
    """
    w = _as_disk_point(w, "w")
    if method == "closed":
        return (kernel_eval(atom, w, w), kernel_dbar_w(atom, w, w),
                kernel_mixed_derivative(atom, w, w))
    if method != "series":
        raise ValueError(f"unknown method {method!r}")
    t = np.abs(w) ** 2
    c = atom.coeffs()
    l = np.arange(len(c), dtype=float)
    norm2 = _poly(c, t).real
    pair = w * _poly(c[1:] * l[1:], t)
    dnorm2 = _poly(c[1:] * l[1:] ** 2, t).real
    if atom.family == "power" and series_tail_bound(atom, float(np.max(np.sqrt(t))),
                                                    len(c) - 2) > atom.tail_tolerance:
        warnings.warn("series inner products are truncation limited at this radius",
                      TruncationWarning, stacklevel=2)
    return _scalar(norm2), _scalar(pair), _scalar(dnorm2)


def kernel_matrix(atom: AtomSpec, points) -> np.ndarray:
    """Gram matrix ``[k(w_i, w_j)]`` of kernel sections at sample points."""
    p = _as_disk_point(np.ravel(points), "points")
    return np.asarray(kernel_eval(atom, p[:, None], p[None, :]))


@dataclass(frozen=True)
class InverseKernelPartial:
    """Degree-``l`` partial sum ``p_l(z, conj w) = sum_t b_t (z conj w)^t`` of ``1/k``."""

    atom: AtomSpec
    degree: int
    coefficients: tuple[float, ...]

    def __call__(self, z, w):
        z = _as_disk_point(z, "z")
        w = _as_disk_point(w, "w")
        return _scalar(_poly(np.asarray(self.coefficients), z * np.conj(w)))

    def residual(self, z, w) -> float:
        """``|p_l(z, conj w) k(z, w) - 1|``."""
        return float(np.max(np.abs(self(z, w) * kernel_eval(self.atom, z, w) - 1.0)))


def inverse_kernel_partial(atom: AtomSpec, l: int) -> InverseKernelPartial:
    """Coefficients ``b_0 .. b_l`` of the power series of ``1/k`` in ``z conj(w)``.

    Power atoms use the generalized binomial recurrence
    ``b_{t+1} = b_t (t - alpha) / (t + 1)``; diagonal atoms invert their
    coefficient series.
    """
    if l < 0:
        raise ValueError("degree must be nonnegative")
    if atom.family == "power":
        t = np.arange(l)
        b = np.concatenate(([1.0], np.cumprod((t - atom.alpha) / (t + 1))))
    else:
        c = atom.coeffs(l + 1)
        b = np.zeros(l + 1)
        b[0] = 1.0 / c[0]
        for t in range(1, l + 1):
            b[t] = -np.dot(c[1 : t + 1], b[t - 1 :: -1][:t]) / c[0]
    return InverseKernelPartial(atom, l, tuple(float(x) for x in b))


def purity_defect(atom: AtomSpec, l: int, z, w):
    """``1 - (sum_{t<l} q_t(z) conj(q_t(w))) / k(z, w)``.

    This is the scalar by which ``Q_{l, C}(M_z)`` acts between kernel
    sections; it tends to zero as ``l`` grows.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    z = _as_disk_point(z, "z")
    w = _as_disk_point(w, "w")
    partial = _poly(atom.coeffs(l), z * np.conj(w))
    return _scalar(1.0 - partial / kernel_eval(atom, z, w))


def c_operator_pairing(atom: AtomSpec, z, w):
    """Scalar ``1/k(z, w)`` by which the contractivity operator acts on sections.

    ``<C gamma_w, gamma_z> = <gamma_w, gamma_z> / k(z, w)``.
    """
    return _scalar(1.0 / np.asarray(kernel_eval(atom, z, w)))
