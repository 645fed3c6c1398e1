"""
The symbol ``Theta(w) = V(w)^*`` and the module map it induces.

``V(w) = sum_k A_k conj(w)^k`` is anti-holomorphic, so
``Theta(z) = sum_k A_k^* z^k`` is a holomorphic ``m x n`` matrix function
and ``X = M_Theta`` maps the free module ``M (x) C^n`` into ``M (x) C^m``.
On a diagonal-kernel space the monomials ``q_l = sqrt(c_l) z^l`` are
orthonormal and ``z q_l = sqrt(c_l / c_{l+1}) q_{l+1}``, which gives the
truncated matrices used below.  Coordinates are level-major: index
``l * n + j`` for ``q_l (x) e_j``.

The quotient is never built; its truncation is the span of the kernel
sections ``gamma_{i,w} = k(., w) (x) v_{i,w}``.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .atoms import AtomSpec, TruncationWarning
from .bundles import QuotientModuleModel, RANK_TOLERANCE

__all__ = [
    "ThetaSymbol",
    "TruncatedIntertwiner",
    "adjoint_on_kernels_check",
    "intertwining_residual",
    "intertwining_table",
    "right_invertibility_margin",
    "theta_eval",
    "theta_sup_norm",
]


def theta_eval(model: QuotientModuleModel, w) -> np.ndarray:
    """``Theta(w)``: rows are ``v_{i,w}^*``; shape ``w.shape + (m, n)``."""
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(w) > model.atom.r_max * (1 + 1e-12)):
        raise ValueError(f"|w| must not exceed r_max = {model.atom.r_max}")
    return np.conj(np.swapaxes(model.frame(w), -1, -2))


class ThetaSymbol:
    """Callable wrapper around :func:`theta_eval` with the frame bound ``delta``."""

    def __init__(self, model: QuotientModuleModel):
        self.model = model

    def __call__(self, w) -> np.ndarray:
        return theta_eval(self.model, w)

    def delta(self, nodes) -> float:
        """``max_{w, i} ||v_{i,w}||`` over ``nodes``."""
        v = self.model.frame(np.asarray(nodes, dtype=complex))
        return float(np.max(np.linalg.norm(v, axis=-2)))


def _singular_values(model: QuotientModuleModel, nodes) -> np.ndarray:
    return np.linalg.svd(theta_eval(model, nodes), compute_uv=False)


def theta_sup_norm(model: QuotientModuleModel, grid) -> float:
    """``sup_w sigma_max(Theta(w))`` over the grid nodes."""
    nodes = getattr(grid, "nodes", grid)
    return float(np.max(_singular_values(model, nodes)[..., 0]))


def right_invertibility_margin(model: QuotientModuleModel, grid) -> float:
    """``inf_w sigma_min(Theta(w)^*)`` over the grid nodes."""
    nodes = getattr(grid, "nodes", grid)
    return float(np.min(_singular_values(model, nodes)[..., -1]))


def _coeffs(atom: AtomSpec, length: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return np.asarray(atom.coeffs(length), dtype=float)


def _shift_apply(c: np.ndarray, L: int, width: int, y):
    """Truncated ``M_z (x) I_width`` applied to the columns of ``y``; top level -> 0.

    ``y`` may be dense or sparse; the result has the same kind.
    """
    weights = np.sqrt(c[:L - 1] / c[1:L])
    if sp.issparse(y):
        diag = np.repeat(weights, width)
        shift = sp.diags(diag, -width, shape=(L * width, L * width), format="csr")
        return (shift @ y).tocsc()
    levels = y.reshape(L, width, -1)
    out = np.zeros_like(levels)
    out[1:] = weights[:, None, None] * levels[:-1]
    return out.reshape(y.shape)


class TruncatedIntertwiner:
    """Matrix of ``X = M_Theta`` on the first ``L`` levels.

    Block ``(l + k, l)`` is ``sqrt(c_l / c_{l+k}) A_k^*``; products landing at
    level ``L`` or above are dropped (square truncation).
    """

    def __init__(self, model: QuotientModuleModel, L: int):
        if L < 1:
            raise ValueError("truncation order L must be positive")
        self.model = model
        self.L = int(L)
        frame = model.frame
        self.n, self.m = frame.n, frame.m
        d = frame.degree
        self.c = _coeffs(model.atom, self.L + d + 1)
        if np.any(self.c[:self.L] <= 0):
            raise ValueError(f"the atom has fewer than L = {self.L} nonzero coefficients")
        a = frame.coefficients
        x = np.zeros((self.L * self.m, self.L * self.n), dtype=complex)
        for k in range(min(d, self.L - 1) + 1):
            ak = np.conj(a[k].T)
            if not np.any(ak):
                continue
            for l in range(self.L - k):
                wt = np.sqrt(self.c[l] / self.c[l + k])
                x[(l + k) * self.m:(l + k + 1) * self.m, l * self.n:(l + 1) * self.n] = wt * ak
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite entries in the truncated module map")
        self.matrix = x

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def kernel_vector(self, w: complex) -> np.ndarray:
        """Coordinates of ``P_L k(., w)``: ``sqrt(c_l) conj(w)^l``."""
        return np.sqrt(self.c[:self.L]) * np.conj(w) ** np.arange(self.L)

    def section(self, w: complex, i: int) -> np.ndarray:
        """Coordinates of ``P_L gamma_{i,w}`` in ``M (x) C^n``."""
        v = self.model.frame(w)[:, i]
        return np.kron(self.kernel_vector(w), v)

    def spanning_set(self) -> sp.csc_matrix:
        """Sparse columns spanning the truncated quotient.

        These are the Taylor coefficients in ``conj(w)`` of the truncated
        sections, ``u_{i,j} = sum_{l+k=j} sqrt(c_l) q_l (x) A_k e_i``,
        normalized to unit length.
        """
        a = self.model.frame.coefficients
        d = a.shape[0] - 1
        rows, cols, vals = [], [], []
        col = 0
        for j in range(self.L + d):
            for i in range(self.m):
                entries = {}
                for k in range(max(0, j - self.L + 1), min(d, j) + 1):
                    for r in np.flatnonzero(a[k][:, i]):
                        key = (j - k) * self.n + r
                        entries[key] = entries.get(key, 0) + np.sqrt(self.c[j - k]) * a[k][r, i]
                entries = {key: v for key, v in entries.items() if v != 0}
                if not entries:
                    continue
                norm = np.sqrt(sum(abs(v) ** 2 for v in entries.values()))
                for key, v in entries.items():
                    rows.append(key)
                    cols.append(col)
                    vals.append(v / norm)
                col += 1
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.L * self.n, col), dtype=complex)

    def quotient_factors(self, tol: float = 1e-12):
        """``(S, W)`` with ``B = S W`` an orthonormal basis of the truncated quotient.

        ``W = V diag(lambda)^(-1/2)`` from the eigen-decomposition of the
        small Gram ``S^* S``; eigenvalues below ``tol * max`` are dropped.
        """
        span = self.spanning_set()
        gram = (span.conj().T @ span).toarray()
        lam, vec = np.linalg.eigh(gram)
        keep = lam > tol * lam[-1]
        return span, vec[:, keep] / np.sqrt(lam[keep])

    def quotient_basis(self, tol: float = 1e-12) -> np.ndarray:
        """Dense orthonormal basis of the truncated quotient."""
        span, w = self.quotient_factors(tol)
        return np.asarray(span @ w)


def adjoint_on_kernels_check(model: QuotientModuleModel, w: complex, sample_count: int = 8,
                             L: int = 60, eps_tail: float = 1e-10) -> float:
    """Max relative residual of ``X^*(k(., w) (x) e_i) = gamma_{i,w}``.

    Both sides are computed at truncation ``L`` on ``sample_count`` points
    ``w e^{2 pi i k / sample_count}``; the left from the adjoint of the
    truncated matrix, the right from the series of ``k(., w) (x) v_{i,w}``.
    Warns with :class:`TruncationWarning` when the kernel tail beyond ``L``
    exceeds ``eps_tail``.
    """
    w = complex(w)
    if abs(w) > 0.8:
        raise ValueError("the adjoint check needs |w| <= 0.8")
    x = TruncatedIntertwiner(model, L)
    tail = _kernel_tail(model.atom, abs(w), L)
    if tail > eps_tail:
        warnings.warn(f"kernel tail beyond L = {L} is {tail:.2e} at |w| = {abs(w):.3g}; "
                      "increase L", TruncationWarning, stacklevel=2)
    worst = 0.0
    for s in range(max(1, int(sample_count))):
        ws = w * np.exp(2j * np.pi * s / max(1, int(sample_count)))
        kv = x.kernel_vector(ws)
        for i in range(x.m):
            e = np.zeros(x.m)
            e[i] = 1.0
            lhs = np.conj(x.matrix.T) @ np.kron(kv, e)
            rhs = x.section(ws, i)
            # ||rhs|| = ||P_L k_w|| ||v_i||; at a zero of the frame fall back to ||P_L k_w||
            scale = np.linalg.norm(kv) * max(np.linalg.norm(x.model.frame(ws)[:, i]),
                                             RANK_TOLERANCE)
            worst = max(worst, float(np.linalg.norm(lhs - rhs) / scale))
    return worst


def _kernel_tail(atom: AtomSpec, r: float, L: int) -> float:
    """Relative mass of ``k(w, w)`` beyond level ``L``."""
    c = _coeffs(atom, 4 * L + 200)
    terms = c * r ** (2 * np.arange(c.size))
    return float(np.sum(terms[L:]) / np.sum(terms))


def intertwining_residual(model: QuotientModuleModel, L: int, protected: int | None = None,
                          detail: bool = False):
    """``||X P_Q S B - S X B||`` on the protected output levels.

    ``B`` is an orthonormal basis of the truncated quotient, ``S`` the
    truncated shift on either side.  Output levels ``>= protected`` (default
    ``L - 1 - degree``) carry pure truncation leakage and are excluded.
    With ``detail=True`` also returns ``||X (I - P_Q)||`` on the same rows,
    i.e. how well ``X`` annihilates the complement of the quotient.
    """
    if L < 2:
        raise ValueError("L must be at least 2")
    d = model.frame.degree
    protected = max(1, L - 1 - d) if protected is None else int(protected)
    x = TruncatedIntertwiner(model, L)
    span, wts = x.quotient_factors()
    rows = slice(0, protected * x.m)
    xb = (x.matrix @ span) @ wts
    # B^* S_Q B through the sparse spanning set: W^* (S^* shift(S)) W
    shifted = _shift_apply(x.c, L, x.n, span)
    compressed = np.conj(wts.T) @ (span.conj().T @ shifted).toarray() @ wts
    lhs = xb @ compressed
    rhs = _shift_apply(x.c, L, x.m, xb)
    residual = float(np.linalg.norm((lhs - rhs)[rows], 2))
    if detail:
        # X (I - P_Q) = X - (X B) B^*
        complement = x.matrix[rows] - np.asarray((span @ (wts @ np.conj(xb[rows].T)))).conj().T
        return residual, float(np.linalg.norm(complement, 2))
    return residual


def intertwining_table(model: QuotientModuleModel, orders=(10, 20, 40)) -> list[tuple]:
    """``(L, residual, annihilation, ||X_L||)`` per truncation order."""
    out = []
    for L in orders:
        res, ann = intertwining_residual(model, L, detail=True)
        out.append((int(L), res, ann, TruncatedIntertwiner(model, L).norm))
    return out
