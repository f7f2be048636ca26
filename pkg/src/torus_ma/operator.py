"""The (n-1,n-1) Monge-Ampere operator and its linearization.

For a background metric ``omega`` and a real function ``phi``::

    Lam(phi) = omega^{n-1} + i ∂∂̄phi ^ omega^{n-2}
               + (i/2) (∂phi ^ ∂̄omega^{n-2} - ∂̄phi ^ ∂omega^{n-2})
    gamma    = Lam^{1/(n-1)}
    C(phi)   = gamma^n / omega^n
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import algebra as alg
from .algebra import PositivityError
from .fields import FormField, MetricField, apply_operator

__all__ = [
    "POSITIVITY_MARGIN", "Background", "MAState", "lambda_of_phi", "ma_state",
    "ma_value", "rho_lambda_tilde", "linearize_apply", "linearize_apply_forms",
    "principal_part_apply", "root_field", "scalar_derivatives", "classical_ma_ratio",
]

POSITIVITY_MARGIN = 1e-10


def _hm(c, n):
    """H-matrix of a (1,1) coefficient array: ``c = i H``."""
    return (-1j * c).reshape(c.shape[:-1] + (n, n))


def root_field(coeffs, n, margin=POSITIVITY_MARGIN):
    """Batched (n-1)-th root of (n-1,n-1) coefficient arrays (ambient frame).

    Returns ``(G, e)``: H-matrices of the roots and eigenvalues of ``C/(n-1)!``.
    """
    C = alg.nn_matrix(coeffs)
    G, e = alg.root_matrix(C, n)
    emin, emax = e.min(axis=-1), e.max(axis=-1)
    bad = emin < margin * np.abs(emax)
    if np.any(bad):
        flat = np.argmin(np.where(bad, emin, np.inf).reshape(-1))
        where = np.unravel_index(flat, emin.shape)
        worst = float(emin.reshape(-1)[flat])
        raise PositivityError(f"form not positive at grid point {where}: min eigenvalue {worst:.3e}",
                              worst, where)
    return G, e


class Background:
    """Quantities of the metric reused by every state."""

    def __init__(self, omega: MetricField):
        self.omega = omega
        self.grid = omega.grid
        self.n = omega.n
        if self.n < 2:
            raise ValueError("the operator needs n >= 2")

    @cached_property
    def w_n1(self):
        return self.omega.power(self.n - 1)

    @cached_property
    def w_n2(self):
        return self.omega.power(self.n - 2)

    @cached_property
    def d_w_n2(self):
        return apply_operator("d", self.w_n2) if self.n > 2 else None

    @cached_property
    def db_w_n2(self):
        return apply_operator("db", self.w_n2) if self.n > 2 else None

    @cached_property
    def is_kaehler(self):
        dw = apply_operator("d", self.omega.form())
        return dw.norm_inf() <= 1e-12 * max(1.0, self.omega.form().norm_inf())


def scalar_derivatives(grid, h):
    """``(dh, dbh, ddbh)``: arrays (..., n), (..., n), (..., n, n) of ∂_a h, ∂̄_b h, ∂_a∂̄_b h."""
    n = grid.n
    sig, tau = grid.symbols
    hh = grid.fft(np.asarray(h, dtype=complex))
    dh = np.stack([grid.ifft(sig[a] * hh) for a in range(n)], axis=-1)
    dbh = np.stack([grid.ifft(tau[b] * hh) for b in range(n)], axis=-1)
    ddb = np.empty(grid.shape + (n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            ddb[..., a, b] = grid.ifft(sig[a] * tau[b] * hh)
    return dh, dbh, ddb


def _dlambda_coeffs(bg: Background, dh, dbh, ddb):
    """Coefficients of the part of Lam that is linear in the function."""
    n = bg.n
    w2 = bg.w_n2.data
    c11 = (1j * ddb).reshape(ddb.shape[:-2] + (n * n,))
    out = alg.wedge_coeffs(n, (1, 1), c11, (n - 2, n - 2), w2)
    if n > 2:
        t1 = alg.wedge_coeffs(n, (1, 0), dh, (n - 2, n - 1), bg.db_w_n2.data)
        t2 = alg.wedge_coeffs(n, (0, 1), dbh, (n - 1, n - 2), bg.d_w_n2.data)
        out = out + 0.5j * (t1 - t2)
    return out


def lambda_of_phi(omega, phi) -> FormField:
    bg = omega if isinstance(omega, Background) else Background(omega)
    d = scalar_derivatives(bg.grid, phi)
    data = bg.w_n1.data + _dlambda_coeffs(bg, *d)
    return FormField(bg.grid, bg.n - 1, bg.n - 1, data)


@dataclass
class MAState:
    bg: Background
    phi: np.ndarray
    Lam: FormField
    A: np.ndarray  # coefficient matrices of Lam
    gamma: np.ndarray  # H-matrices of the root
    eig: np.ndarray  # eigenvalues of A/(n-1)!
    Cval: np.ndarray

    @property
    def n(self):
        return self.bg.n

    @property
    def omega(self):
        return self.bg.omega

    @property
    def min_eigenvalue(self):
        return float(self.eig.min())

    @cached_property
    def Ainv(self):
        return np.linalg.inv(self.A)

    @cached_property
    def rho(self) -> np.ndarray:
        """H-matrices of ``*_omega Lam``."""
        return _hm(self.omega.star(self.Lam).data, self.n)

    @cached_property
    def lin_coeffs(self):
        """Coefficient fields ``(alpha, beta, betabar)`` of ``C^{-1} d C`` (before 1/(n-1)).

        ``tr(A^{-1} A'(h)) = sum alpha_ab ∂_a∂̄_b h + beta_a ∂_a h + betabar_b ∂̄_b h``.
        """
        n, bg = self.n, self.bg
        # Y[idx] = sum_jk Ainv_kj Z[idx, j, k]
        Y = np.einsum("...kj,ijk->...i", self.Ainv, alg.nn_matrix_table(n))
        alpha = np.empty(bg.grid.shape + (n, n), dtype=complex)
        eye = np.eye(n * n)
        for a in range(n):
            for b in range(n):
                e = (1j * eye[a * n + b]).astype(complex)
                c = alg.wedge_coeffs(n, (1, 1), e, (n - 2, n - 2), bg.w_n2.data)
                alpha[..., a, b] = np.sum(Y * c, axis=-1)
        beta = np.zeros(bg.grid.shape + (n,), dtype=complex)
        betab = np.zeros_like(beta)
        if n > 2:
            for a in range(n):
                e = np.zeros(n, dtype=complex)
                e[a] = 1.0
                c1 = alg.wedge_coeffs(n, (1, 0), e, (n - 2, n - 1), bg.db_w_n2.data)
                c2 = alg.wedge_coeffs(n, (0, 1), e, (n - 1, n - 2), bg.d_w_n2.data)
                beta[..., a] = 0.5j * np.sum(Y * c1, axis=-1)
                betab[..., a] = -0.5j * np.sum(Y * c2, axis=-1)
        return alpha, beta, betab


def ma_state(omega, phi, margin=POSITIVITY_MARGIN) -> MAState:
    bg = omega if isinstance(omega, Background) else Background(omega)
    phi = np.asarray(phi, dtype=float)
    Lam = lambda_of_phi(bg, phi)
    n = bg.n
    A = alg.nn_matrix(Lam.data)
    herm = np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2))))
    if herm > 1e-9 * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"Lam is not real (defect {herm:.2e})")
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    G, e = root_field(Lam.data, n, margin)
    detg = np.exp(np.sum(np.log(e), axis=-1) / (n - 1))
    C = detg / bg.omega.det
    return MAState(bg, phi, Lam, A, G, e, np.broadcast_to(C, bg.grid.shape).copy())


def ma_value(state: MAState) -> np.ndarray:
    return state.Cval


def _frame_eig(omega: MetricField, R):
    """Eigen-decomposition of ``R`` relative to ``omega`` in its orthonormal frame."""
    P = omega.P
    Rt = np.swapaxes(P, -1, -2) @ R @ np.conj(P)
    Rt = 0.5 * (Rt + np.conj(np.swapaxes(Rt, -1, -2)))
    return np.linalg.eigh(Rt)


def _from_frame(omega, Gt):
    Pi = omega.Pinv
    return np.swapaxes(Pi, -1, -2) @ Gt @ np.conj(Pi)


def lambda_tilde_eigen(omega: MetricField, R):
    """Path A: ``1 / sum_{l != j} 1/rho_l`` in the eigenframe of ``rho``."""
    r, U = _frame_eig(omega, R)
    inv = 1.0 / r
    lt = 1.0 / (inv.sum(axis=-1, keepdims=True) - inv)
    Gt = np.einsum("...ij,...j,...kj->...ik", U, lt, np.conj(U))
    return _from_frame(omega, Gt)


def lambda_invariant(omega: MetricField, R):
    """Path B: ``lambda`` from the invariant bracket, then ``lambda~``."""
    grid, n = omega.grid, omega.n
    H = omega.H_full
    fact = math.factorial(n - 1)
    rho = MetricField(grid, np.broadcast_to(R, grid.shape + (n, n)).copy())
    trace = np.real(np.trace(np.linalg.solve(R, H), axis1=-2, axis2=-1))
    ratio = omega.det / rho.det  # omega^n / rho^n
    star_rho = omega.star(rho.form())
    r1, _ = root_field(star_rho.data, n)
    inner = omega.star(FormField(grid, 1, 1, (1j * r1).reshape(grid.shape + (n * n,))))
    # the second term carries ((n-1)!)^{1/(n-1)} so that, in an eigenframe of
    # rho, the bracket is sum_j (sum_{l != j} 1/rho_l) (omega^{n-1}/(n-1)!)_j
    bracket = omega.power(n - 1) * (trace / fact) \
        - inner * ((fact * ratio) ** (1.0 / (n - 1)))
    lam, _ = root_field(bracket.data, n)
    detratio = np.real(np.linalg.det(lam)) / omega.det
    lt = lam / (fact * np.asarray(detratio))[..., None, None]
    return lam, lt


def rho_lambda_tilde(state: MAState):
    """``(rho, lambda, lambda~_A, lambda~_B)`` as H-matrix arrays."""
    R = state.rho
    ltA = lambda_tilde_eigen(state.omega, R)
    lam, ltB = lambda_invariant(state.omega, R)
    return R, lam, ltA, ltB


def linearize_apply(state: MAState, h) -> np.ndarray:
    """``(d_phi C)(h)`` via precomputed coefficient fields."""
    alpha, beta, betab = state.lin_coeffs
    dh, dbh, ddb = scalar_derivatives(state.bg.grid, h)
    tr = np.einsum("...ab,...ab->...", alpha, ddb) + np.einsum("...a,...a->...", beta, dh) \
        + np.einsum("...a,...a->...", betab, dbh)
    return np.real(state.Cval * tr / (state.n - 1))


def linearize_apply_forms(state: MAState, h) -> np.ndarray:
    """Same map evaluated from the forms: ``C/(n-1) tr(A^{-1} A'(h))``."""
    dL = _dlambda_coeffs(state.bg, *scalar_derivatives(state.bg.grid, h))
    A2 = alg.nn_matrix(dL)
    tr = np.trace(state.Ainv @ A2, axis1=-2, axis2=-1)
    return np.real(state.Cval * tr / (state.n - 1))


def _laplace_with(Hm, ddb):
    """``tr_H(i∂∂̄h) = sum_ab (H^{-1})_ba ∂_a∂̄_b h``."""
    Hi = np.linalg.inv(Hm)
    return np.real(np.einsum("...ba,...ab->...", Hi, ddb))


def principal_part_apply(state: MAState, h, both=False):
    """Principal part of ``C^{-1} d_phi C``: ``(n-2)!/(n-1) Delta_{lambda~} h``.

    With ``both`` the second written form is returned as well.
    """
    n = state.n
    _, _, ddb = scalar_derivatives(state.bg.grid, h)
    R = state.rho
    lt = lambda_tilde_eigen(state.omega, R)
    first = math.factorial(n - 2) / (n - 1) * _laplace_with(lt, ddb)
    if not both:
        return first
    H = state.omega.H_full
    tr_rho_w = np.real(np.trace(np.linalg.solve(R, H), axis1=-2, axis2=-1))
    second = math.factorial(n - 1) / (n - 1) ** 2 * (tr_rho_w * _laplace_with(H, ddb) - _laplace_with(R, ddb))
    return first, second


def classical_ma_ratio(omega: MetricField, phi) -> np.ndarray:
    """``(omega + i∂∂̄phi)^2 / omega^2`` for n = 2, written directly."""
    if omega.n != 2:
        raise ValueError("classical ratio is for n = 2")
    _, _, ddb = scalar_derivatives(omega.grid, phi)
    return np.real(np.linalg.det(omega.H_full + ddb) / omega.det)
