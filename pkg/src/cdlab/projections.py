"""
Projection fields onto the bundle fibres and their dbar-derivatives.

For a frame bundle the projection ``Pi_V(w) = V (V^* V)^{-1} V^*`` is an
``n x n`` matrix and is differentiated as an assembled matrix.  For the
atom's line bundle the ambient space is infinite dimensional, so the
Hilbert-Schmidt norm of ``dbar Pi`` is obtained from the three kernel
inner products instead::

    ||dbar Pi(w)||_2^2 = (||k||^2 ||k'||^2 - |<k', k>|^2) / ||k||^4
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atoms import AtomSpec, kernel_inner_products
from .bundles import (FrameMap, QuotientModuleModel, RANK_TOLERANCE,
                      RankDeficientFrame, curvature_matrix_fd, wirtinger_derivative,
                      wirtinger_stencil)
from .bundles import _check_stencil

__all__ = [
    "ProjectionField",
    "corollary_c2_check",
    "dbar_pi_hs_norm_line",
    "dbar_pi_v_hs_norm",
    "dbar_pi_v_hs_norm_exact",
    "dbar_projection",
    "identity_tolerance",
    "projection_identities_check",
    "projection_matrix",
    "tensor_dbar_pi_hs_norm",
]


def identity_tolerance(frame: FrameMap, base: float = 1e-6) -> float:
    """Residual budget: ``base`` for exact frames, 1e-4 for truncated ones."""
    return max(base, 1e-4) if frame.truncated else base


def projection_matrix(frame: FrameMap, w) -> np.ndarray:
    """Orthogonal projection ``Pi_V(w)`` onto the span of the frame columns."""
    v = frame(w)
    q, r = np.linalg.qr(v)
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    if np.any(diag <= RANK_TOLERANCE * max(1.0, float(np.max(diag, initial=0.0)))):
        raise RankDeficientFrame(f"frame {frame.name} is rank deficient near w = {w}")
    return q @ np.conj(np.swapaxes(q, -1, -2))


def dbar_projection(frame: FrameMap, w, h: float = 1e-3, richardson: int = 1) -> np.ndarray:
    """``dbar Pi_V(w)`` by Wirtinger stencils on the assembled projection."""
    return wirtinger_derivative(lambda u: projection_matrix(frame, u), w, h, "dbar",
                                richardson=richardson)


def _orthonormal_basis(frame: FrameMap, w) -> np.ndarray:
    v = frame(w)
    if frame.m == 1:
        norm = np.linalg.norm(v, axis=-2, keepdims=True)
        if np.any(norm <= RANK_TOLERANCE):
            raise RankDeficientFrame(f"frame {frame.name} vanishes near w = {w}")
        return v / norm
    q, r = np.linalg.qr(v)
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    if np.any(diag <= RANK_TOLERANCE * max(1.0, float(np.max(diag, initial=0.0)))):
        raise RankDeficientFrame(f"frame {frame.name} is rank deficient near w = {w}")
    return q


def dbar_pi_v_hs_norm(frame: FrameMap, w, h: float = 1e-3, richardson: int = 1):
    """Squared Frobenius norm of ``dbar Pi_V(w)`` (stencil route).

    The stencil combination ``sum_k a_k Pi_k`` of projections ``Pi_k = Q_k Q_k^*``
    has ``||.||_F^2 = sum_kl conj(a_k) a_l ||Q_k^* Q_l||_F^2``, so the ``n x n``
    projections are never assembled; the value equals the Frobenius norm of
    :func:`dbar_projection`.
    """
    w = np.asarray(w, dtype=complex)
    _check_stencil(w, h)
    offsets, weights = wirtinger_stencil(h, "dbar", richardson)
    q = np.stack([_orthonormal_basis(frame, w + o) for o in offsets], axis=w.ndim)
    # overlaps[..., k, l, i, j] = (Q_k^* Q_l)_{ij}
    overlaps = np.einsum("...kai,...laj->...klij", np.conj(q), q)
    sq = np.sum(np.abs(overlaps) ** 2, axis=(-2, -1))
    val = np.einsum("k,...kl,l->...", np.conj(weights), sq, weights).real
    return float(val) if np.ndim(val) == 0 else val


def dbar_pi_v_hs_norm_exact(frame: FrameMap, w):
    """``||dbar Pi_V(w)||_2^2`` from the exact derivative of the polynomial frame.

    With ``V' = dbar V``, ``G = V^* V`` and ``B = V^* V'``,
    ``dbar Pi_V = (I - Pi_V) V' G^{-1} V^*`` has squared norm
    ``tr(G^{-1} V'^* V') - tr(G^{-1} B^* G^{-1} B)``.  Vectorized over ``w``.
    """
    w = np.asarray(w, dtype=complex)
    v = frame(w)
    dv = frame.dbar(w)
    g = np.einsum("...ki,...kj->...ij", np.conj(v), v)
    b = np.einsum("...ki,...kj->...ij", np.conj(v), dv)
    c = np.einsum("...ki,...kj->...ij", np.conj(dv), dv)
    if frame.m == 1:
        g0 = g[..., 0, 0].real
        val = c[..., 0, 0].real / g0 - np.abs(b[..., 0, 0]) ** 2 / g0 ** 2
    else:
        gi_c = np.linalg.solve(g, c)
        gi_b = np.linalg.solve(g, b)
        gi_bh = np.linalg.solve(g, np.conj(np.swapaxes(b, -1, -2)))
        val = (np.trace(gi_c, axis1=-2, axis2=-1)
               - np.trace(gi_bh @ gi_b, axis1=-2, axis2=-1)).real
    return float(val) if np.ndim(val) == 0 else val


def dbar_pi_hs_norm_line(atom: AtomSpec, w, method: str = "closed"):
    """``||dbar Pi(w)||_2^2`` for the atom's line bundle via kernel inner products."""
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(w) >= atom.r_max):
        raise ValueError(f"|w| must be below r_max = {atom.r_max}")
    norm2, pair, dnorm2 = (np.asarray(x) for x in kernel_inner_products(atom, w, method))
    norm2 = norm2.real
    val = (norm2 * dnorm2.real - np.abs(pair) ** 2) / norm2 ** 2
    return float(val) if val.ndim == 0 else val


def tensor_dbar_pi_hs_norm(model: QuotientModuleModel, w, h: float = 1e-3):
    """``||dbar Pi_H(w)||_2^2`` of the quotient module from its full Gram.

    For any frame bundle ``||dbar Pi||_2^2 = -tr K`` with
    ``K = -dbar(G^{-1} dG)``; here ``G = k(w, w) G_V`` (the tensor Gram), so
    this route never touches ``Pi_V`` or the line-bundle inner products.
    """
    k = curvature_matrix_fd(model, w, h, r_max=model.atom.r_max)
    val = -np.trace(k, axis1=-2, axis2=-1).real
    return float(val) if np.ndim(val) == 0 else val


def projection_identities_check(frame: FrameMap, w, h: float = 1e-3,
                                richardson: int = 1) -> tuple[float, float, float]:
    """Max-entry residuals of the three projection identities.

    ``Pi dbarPi = 0``, ``(dbarPi) Pi = dbarPi`` and
    ``(I - Pi)(dbarPi) Pi = dbarPi``, each checked on its own.
    """
    pi = projection_matrix(frame, w)
    dpi = dbar_projection(frame, w, h, richardson)
    eye = np.eye(frame.n)
    r1 = np.max(np.abs(pi @ dpi))
    r2 = np.max(np.abs(dpi @ pi - dpi))
    r3 = np.max(np.abs((eye - pi) @ dpi @ pi - dpi))
    return float(r1), float(r2), float(r3)


def corollary_c2_check(model: QuotientModuleModel, w, h: float = 1e-3,
                       detail: bool = False):
    """``|m ||dbar Pi_M||^2 + ||dbar Pi_V||^2 - ||dbar Pi_H||^2|``.

    The left terms come from the kernel inner products and the stencil on
    ``Pi_V``; the combined value from the tensor Gram curvature trace.
    """
    line = dbar_pi_hs_norm_line(model.atom, w)
    frame_part = dbar_pi_v_hs_norm(model.frame, w, h)
    combined = tensor_dbar_pi_hs_norm(model, w, h)
    split = model.m * np.asarray(line) + np.asarray(frame_part)
    residual = float(np.max(np.abs(split - combined)))
    if detail:
        return residual, split, combined
    return residual


@dataclass(frozen=True, eq=False)
class ProjectionField:
    """Projection onto the fibres of a line bundle (atom) or a frame bundle.

    Line-bundle projections live on an infinite-dimensional space and are
    only exposed through :meth:`dbar_hs_norm`.
    """

    source: AtomSpec | FrameMap

    @property
    def kind(self) -> str:
        return "line_bundle" if isinstance(self.source, AtomSpec) else "frame_bundle"

    def __call__(self, w) -> np.ndarray:
        if isinstance(self.source, AtomSpec):
            raise TypeError("the atom's projection acts on an infinite-dimensional space; "
                            "use dbar_hs_norm")
        return projection_matrix(self.source, w)

    def dbar_hs_norm(self, w, h: float = 1e-3):
        if isinstance(self.source, AtomSpec):
            return dbar_pi_hs_norm_line(self.source, w)
        return dbar_pi_v_hs_norm(self.source, w, h)
