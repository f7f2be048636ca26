"""Newton/continuity solver for ``C(phi) = exp(f + c)`` with ``sup phi = 0``.

The unknown is the pair ``(phi, c)``. Each Newton step solves the bordered
system

    d_phi C(h) - exp(f_t + c) dc = -(C(phi) - exp(f_t + c)),   mean(h) = 0

by restarted GMRES, preconditioned with the inverse of the constant-coefficient
principal part (diagonal in Fourier space).

Corner modes (every wavenumber 0 or N/2) are annihilated by the spectral
derivatives, so ``C`` cannot see them: increments ``h`` are kept free of them
and the non-constant corner components of the residual are projected out.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .algebra import PositivityError
from .cone import gauduchon_residual
from .fields import MetricField
from .operator import POSITIVITY_MARGIN, Background, linearize_apply, ma_state

__all__ = [
    "SolverConfig", "SolveReport", "GaugedFunction", "gauge", "mms_generate",
    "newton_solve", "KrylovError",
]

log = logging.getLogger(__name__)


class KrylovError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 30
    krylov_tol: float = 1e-8
    krylov_max: int = 500
    krylov_restart: int = 50
    initial_step: float = 1.0
    min_step: float = 1.0 / 64
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    positivity_margin: float = POSITIVITY_MARGIN
    gauduchon_tol: float = 1e-9

    def __post_init__(self):
        for name in ("newton_tol", "krylov_tol", "initial_step", "min_step",
                     "positivity_margin", "gauduchon_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        for name in ("max_newton", "krylov_max", "krylov_restart"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")


@dataclass(frozen=True)
class GaugedFunction:
    values: np.ndarray
    gauge: str


def gauge(phi, target: str = "sup-zero") -> GaugedFunction:
    """Shift ``phi`` by its mean (``mean-zero``) or its maximum (``sup-zero``)."""
    phi = np.asarray(phi, dtype=float)
    if target == "mean-zero":
        return GaugedFunction(phi - phi.mean(), target)
    if target == "sup-zero":
        return GaugedFunction(phi - phi.max(), target)
    raise ValueError(f"unknown gauge {target!r}")


def mms_generate(omega, phi_star) -> np.ndarray:
    """Right-hand side ``f = log C(phi_star)`` of a manufactured problem."""
    st = ma_state(omega, phi_star)
    return np.log(st.Cval)


@dataclass
class SolveReport:
    converged: bool
    status: str
    phi: GaugedFunction
    c: float
    residuals: list = field(default_factory=list)
    full_residual: float = math.nan
    newton_iterations: int = 0
    krylov_iterations: int = 0
    min_eigenvalues: list = field(default_factory=list)
    continuity: list = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("phi")
        d["gauge"] = self.phi.gauge
        d["phi_sup"] = float(self.phi.values.max())
        d["phi_min"] = float(self.phi.values.min())
        return d


class _Projections:
    def __init__(self, grid):
        self.grid = grid
        self.corner = grid.corner_mask
        self.zero = tuple([0] * len(grid.shape))
        self.nonconst = self.corner.copy()
        self.nonconst[self.zero] = False

    def strip_corners(self, x):
        xh = self.grid.fft(x)
        xh[self.corner] = 0
        return np.real(self.grid.ifft(xh))

    def strip_nonconst_corners(self, x):
        xh = self.grid.fft(x)
        xh[self.nonconst] = 0
        return np.real(self.grid.ifft(xh))

    def nonconst_corner_part(self, x):
        xh = self.grid.fft(x)
        xh[~self.nonconst] = 0
        return np.real(self.grid.ifft(xh))


def _principal_symbol(state):
    """Fourier symbol of the grid-averaged second-order part of ``d_phi C``."""
    grid, n = state.bg.grid, state.n
    alpha, _, _ = state.lin_coeffs
    w = (state.Cval / (n - 1))[..., None, None] * alpha
    abar = w.reshape(-1, n, n).mean(axis=0)
    sig, tau = grid.symbols
    sym = np.zeros(grid.shape, dtype=complex)
    for a in range(n):
        for b in range(n):
            sym = sym + abar[a, b] * sig[a] * tau[b]
    return sym


class _NewtonSystem:
    def __init__(self, state, E, proj: _Projections, cfg: SolverConfig):
        self.state, self.E, self.proj, self.cfg = state, E, proj, cfg
        grid = state.bg.grid
        self.shape = grid.shape
        self.M = grid.npts
        sym = _principal_symbol(state)
        self.sym = np.where(proj.corner, 1.0, sym)
        self.Emean = float(E.mean())

    def matvec(self, x):
        h = x[:-1].reshape(self.shape)
        dc = x[-1]
        p = self.proj
        out = p.strip_nonconst_corners(linearize_apply(self.state, p.strip_corners(h)) - self.E * dc) \
            + p.nonconst_corner_part(h)
        return np.concatenate([out.reshape(-1), [h.mean()]])

    def precond(self, y):
        r = y[:-1].reshape(self.shape)
        s = y[-1]
        g = self.proj.grid
        rh = g.fft(r)
        r0 = rh[self.proj.zero].real / self.M
        hh = rh / self.sym
        hh[self.proj.zero] = s * self.M
        h = np.real(g.ifft(hh))
        return np.concatenate([h.reshape(-1), [-r0 / self.Emean]])

    def solve(self, R):
        size = self.M + 1
        b = np.concatenate([-self.proj.strip_nonconst_corners(R).reshape(-1), [0.0]])
        A = spla.LinearOperator((size, size), matvec=self.matvec, dtype=float)
        P = spla.LinearOperator((size, size), matvec=self.precond, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1
        x, info = spla.gmres(A, b, M=P, rtol=self.cfg.krylov_tol, atol=0.0,
                             restart=self.cfg.krylov_restart, maxiter=self.cfg.krylov_max,
                             callback=cb, callback_type="pr_norm")
        if info != 0:
            rel = np.linalg.norm(self.matvec(x) - b) / max(np.linalg.norm(b), 1e-300)
            raise KrylovError(f"GMRES stopped after {count[0]} iterations, relative residual {rel:.2e}")
        h = self.proj.strip_corners(x[:-1].reshape(self.shape))
        return h, float(x[-1]), count[0]


class _Tracker:
    def __init__(self):
        self.residuals = []
        self.min_eigs = []
        self.newton = 0
        self.krylov = 0


def _residual(state, ft, c, proj):
    E = np.exp(ft + c)
    R = state.Cval - E
    return R, E, float(np.max(np.abs(proj.strip_nonconst_corners(R))))


def _newton(bg, ft, phi, c, cfg, proj, tr: _Tracker):
    """Newton iteration at fixed ``f_t``; returns ``(phi, c, state)`` or raises."""
    state = ma_state(bg, phi, cfg.positivity_margin)
    R, E, r = _residual(state, ft, c, proj)
    for _ in range(cfg.max_newton + 1):
        tr.residuals.append(r)
        tr.min_eigs.append(state.min_eigenvalue)
        log.debug("newton residual %.3e (min eig %.3e)", r, state.min_eigenvalue)
        if r <= cfg.newton_tol:
            return phi, c, state
        if tr.newton >= cfg.max_newton:
            break
        h, dc, its = _NewtonSystem(state, E, proj, cfg).solve(R)
        tr.newton += 1
        tr.krylov += its
        s = 1.0
        for _ in range(cfg.max_backtracks + 1):
            phi_n, c_n = phi + s * h, c + s * dc
            try:
                st_n = ma_state(bg, phi_n, cfg.positivity_margin)
            except PositivityError:
                s *= cfg.backtrack_factor
                continue
            R_n, E_n, r_n = _residual(st_n, ft, c_n, proj)
            if r_n < r:
                break
            s *= cfg.backtrack_factor
        else:
            raise _StepFailure("line search exhausted")
        phi, c, state, R, E, r = phi_n, c_n, st_n, R_n, E_n, r_n
    raise _StepFailure(f"no convergence within {cfg.max_newton} Newton iterations (residual {r:.2e})")


class _StepFailure(RuntimeError):
    pass


def newton_solve(omega: MetricField, f, cfg: SolverConfig | None = None, phi0=None) -> SolveReport:
    """Solve ``C(phi) = exp(f + c)`` by continuity in ``t`` and damped Newton.

    The path is ``f_t = (1 - t) f_0 + t f`` with ``f_0 = log C(phi0)``, so
    ``(phi0, 0)`` is an exact root at ``t = 0`` (``f_0 = 0`` when ``phi0`` is
    omitted). Convergence is declared when the residual, with its
    non-constant corner modes removed, is below ``newton_tol`` in L∞.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    grid = omega.grid
    g = gauduchon_residual(omega)
    if g > cfg.gauduchon_tol:
        raise ValueError(f"background is not Gauduchon (residual {g:.2e})")
    f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
    bg = Background(omega)
    proj = _Projections(grid)
    if phi0 is None:
        phi = np.zeros(grid.shape)
        f0 = np.zeros(grid.shape)
    else:
        phi = proj.strip_corners(np.asarray(phi0, dtype=float))
        f0 = mms_generate(bg, phi)
    c = 0.0
    tr = _Tracker()
    t, step = 0.0, cfg.initial_step
    status, msg = "converged", ""
    path = []
    state = None
    while True:
        t_next = min(1.0, t + step)
        ft = (1.0 - t_next) * f0 + t_next * f
        try:
            phi_n, c_n, state_n = _newton(bg, ft, phi, c, cfg, proj, tr)
        except (_StepFailure, KrylovError, PositivityError) as e:
            kind = {KrylovError: "krylov", PositivityError: "positivity"}.get(type(e), "newton")
            log.info("continuity step %.4g -> %.4g failed (%s): %s", t, t_next, kind, e)
            step *= 0.5
            if step < cfg.min_step or tr.newton >= cfg.max_newton:
                status = "step_underflow" if step < cfg.min_step else "newton_budget"
                msg = f"{kind}: {e}"
                break
            continue
        phi, c, state = phi_n, c_n, state_n
        t = t_next
        path.append(t)
        if t >= 1.0:
            break
        step = min(2 * step, cfg.initial_step)
    converged = status == "converged"
    if state is None:
        state = ma_state(bg, phi, cfg.positivity_margin)
    full = float(np.max(np.abs(state.Cval - np.exp((1 - t) * f0 + t * f + c))))
    return SolveReport(
        converged=converged, status=status, phi=gauge(phi, "sup-zero"), c=float(c),
        residuals=[float(r) for r in tr.residuals], full_residual=full,
        newton_iterations=tr.newton, krylov_iterations=tr.krylov,
        min_eigenvalues=[float(x) for x in tr.min_eigs], continuity=path,
        wall_time=time.perf_counter() - t0, message=msg,
    )
