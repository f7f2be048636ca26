"""Diagnostics for the Gauduchon and strongly Gauduchon cones on the torus."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import algebra as alg
from .algebra import PositivityError
from .fields import FormField, MetricField, apply_operator, l2_norm
from .hodge import harmonic_project
from .operator import root_field

__all__ = [
    "AeppliClassRep", "NormalizationError", "ReconstructionError",
    "t_map_defect", "aeppli_harmonic_rep", "gauduchon_reconstruct",
    "positivity_radius", "gauduchon_normalize", "gauduchon_residual",
    "metric_from_power", "GauduchonResult",
]


class NormalizationError(RuntimeError):
    pass


class ReconstructionError(PositivityError):
    pass


def _ddbar(F):
    a = apply_operator("db", F)
    return None if a is None else apply_operator("d", a)


def _rel(x, ref):
    return x / max(ref, 1e-300)


def gauduchon_residual(omega: MetricField) -> float:
    """``|∂∂̄ omega^{n-1}|_inf / |omega^{n-1}|_inf``."""
    W = omega.power(omega.n - 1)
    dd = _ddbar(W)
    return 0.0 if dd is None else _rel(dd.norm_inf(), W.norm_inf())


def t_map_defect(Omega: FormField, reference: MetricField | None = None, tol=1e-8) -> float:
    """L2 norm of the Dolbeault-harmonic part of ``∂ Omega``.

    Zero exactly when the Aeppli class of ``Omega`` lies in the kernel of
    ``[Omega]_A -> [∂ Omega]_∂̄``.
    """
    ref = MetricField.constant(Omega.grid) if reference is None else reference
    dd = _ddbar(Omega)
    if dd is not None and dd.norm_inf() > tol * max(1.0, Omega.norm_inf()) * Omega.grid.N ** 2:
        raise ValueError(f"∂∂̄Ω does not vanish ({dd.norm_inf():.2e})")
    dO = apply_operator("d", Omega)
    if dO is None:
        return 0.0
    return l2_norm(ref, harmonic_project("Dolbeault", ref, dO))


@dataclass
class AeppliClassRep:
    rep: FormField
    source: FormField
    laplacian_residual: float
    imag_defect: float


def aeppli_harmonic_rep(omega: MetricField, Gamma: FormField, tol=1e-8) -> AeppliClassRep:
    from .hodge import laplacian_apply
    dd = _ddbar(Gamma)
    if dd is not None and dd.norm_inf() > tol * max(1.0, Gamma.norm_inf()) * Gamma.grid.N ** 2:
        raise ValueError(f"∂∂̄Γ does not vanish ({dd.norm_inf():.2e})")
    h = harmonic_project("Aeppli", omega, Gamma)
    res = laplacian_apply("Aeppli", omega, h).norm_inf()
    imag = h.realness_defect() if Gamma.p == Gamma.q and Gamma.realness_defect() <= 1e-12 * max(1, Gamma.norm_inf()) else math.nan
    return AeppliClassRep(h, Gamma, res, imag)


def metric_from_power(Gamma: FormField) -> MetricField:
    """The metric ``gamma`` with ``gamma^{n-1} = Gamma`` (pointwise root)."""
    n = Gamma.n
    G, _ = root_field(Gamma.data, n)
    return MetricField(Gamma.grid, G)


def gauduchon_reconstruct(omega: MetricField, alpha_target: FormField,
                          reference: MetricField | None = None) -> MetricField:
    """Root of ``alpha_target + (omega^{n-1} - harmonic part)``.

    The harmonic part is taken for the Aeppli Laplacian of ``reference``
    (the flat metric by default).
    """
    ref = MetricField.constant(omega.grid) if reference is None else reference
    W = omega.power(omega.n - 1)
    Om = harmonic_project("Aeppli", ref, W)
    Gamma = alpha_target + (W - Om)
    try:
        return metric_from_power(Gamma.real_part())
    except PositivityError as e:
        raise ReconstructionError(f"reconstructed form is not positive: {e}", e.min_eigenvalue, e.where) from e


def positivity_radius(omega: MetricField, direction: FormField, rtol=1e-10) -> float:
    """Largest ``eps`` with ``omega^{n-1} + eps * direction`` positive (bisection)."""
    n = omega.n
    W = omega.power(n - 1)

    def ok(eps):
        try:
            root_field((W + direction * eps).data, n)
            return True
        except PositivityError:
            return False

    lo, hi = 0.0, 1.0
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


@dataclass
class GauduchonResult:
    metric: MetricField
    psi: np.ndarray
    residual: float
    iterations: int


def gauduchon_normalize(omega0: MetricField, tol=1e-13, maxiter=400) -> GauduchonResult:
    """Conformal factor ``psi > 0`` (mean 1) with ``∂∂̄(psi omega0^{n-1}) = 0``.

    The null vector of ``L psi = i∂∂̄(psi omega0^{n-1}) / dV`` is sought as
    ``1 + eta`` with ``eta`` free of corner modes; the deflated equation
    ``L eta = -L 1`` is solved by preconditioned GMRES.
    """
    grid, n = omega0.grid, omega0.n
    W0 = omega0.power(n - 1)
    if n == 1:
        raise ValueError("needs n >= 2")
    dv = alg.top_dv_coeff(n)
    corner = grid.corner_mask

    def L(psi):
        F = W0 * psi
        return np.real(1j * _ddbar(F).data[..., 0] / dv)

    # constant-coefficient symbol at the grid-averaged form
    Wbar = W0.data.reshape(-1, W0.data.shape[-1]).mean(axis=0)
    sig, tau = grid.symbols
    sym = np.zeros(grid.shape, dtype=complex)
    eye = np.eye(n * n)
    for a in range(n):
        for b in range(n):
            c = alg.wedge_coeffs(n, (1, 1), eye[a * n + b], (n - 1, n - 1), Wbar)[0]
            sym = sym + sig[a] * tau[b] * (1j * c / dv)
    sym = np.where(corner, 1.0, sym)

    def proj0(x):
        xh = grid.fft(x)
        xh[corner] = 0
        return np.real(grid.ifft(xh))

    M = grid.npts
    shape = grid.shape

    def A(x):
        x = x.reshape(shape)
        x0 = proj0(x)
        return (L(x0) + (x - x0)).reshape(-1)

    def P(r):
        rh = grid.fft(r.reshape(shape))
        return np.real(grid.ifft(rh / sym)).reshape(-1)

    b = -L(np.ones(shape))
    nb = np.linalg.norm(b)
    its = 0
    if nb > 0:
        count = [0]

        def cb(_):
            count[0] += 1
        Aop = spla.LinearOperator((M, M), matvec=A, dtype=float)
        Pop = spla.LinearOperator((M, M), matvec=P, dtype=float)
        x, info = spla.gmres(Aop, b.reshape(-1), M=Pop, rtol=tol, atol=0.0, restart=60,
                             maxiter=maxiter, callback=cb, callback_type="pr_norm")
        its = count[0]
        eta = proj0(x.reshape(shape))
    else:
        eta = np.zeros(shape)
    psi = 1.0 + eta
    psi = psi / psi.mean()
    if np.min(psi) <= 0:
        raise NormalizationError(f"null vector is not sign-definite (min {np.min(psi):.3e})")
    gamma = MetricField(grid, omega0.H_full * psi[..., None, None] ** (1.0 / (n - 1)))
    res = gauduchon_residual(gamma)
    if res > 1e-8:
        raise NormalizationError(f"Gauduchon residual {res:.2e} above tolerance")
    return GauduchonResult(gamma, psi, res, its)
