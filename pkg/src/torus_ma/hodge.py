"""Fourth-order Laplacians, Green operators and harmonic projections.

Two strategies:

* per-mode: a constant metric commutes with the FFT, so each Fourier mode is a
  small dense block, diagonalized after symmetrizing with the weight ``W``;
* krylov: for variable metrics, preconditioned CG on ``S = W Delta`` (Hermitian,
  positive semidefinite), with the kernel computed once per metric and bidegree.

Discrete kernels include, besides constant forms, the "corner" Fourier modes
whose wavenumbers are all 0 or N/2: every first-derivative symbol vanishes there.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import algebra as alg
from .algebra import DegreeError, dim
from .fields import FormField, MetricField, apply_operator, l2_norm

__all__ = [
    "KINDS", "GreenSolve", "SolverError", "ExactnessError",
    "laplacian_terms", "laplacian_apply", "green_apply", "harmonic_project",
    "three_space_decompose", "min_ddbar_solve", "smallest_positive_eigenvalue",
    "d_closed_aeppli_rep", "hs_completion", "harmonic_basis", "project_pluriclosed",
]

KINDS = ("Dolbeault", "BottChern", "Aeppli", "DdbarBar", "DeRham")

# each term lists the primitive operators in order of application
_TERMS = {
    "BottChern": (
        ("d", "ds"), ("db", "dbs"),
        ("db", "d", "ds", "dbs"), ("ds", "dbs", "db", "d"),
        ("db", "ds", "d", "dbs"), ("d", "dbs", "db", "ds"),
    ),
    "Aeppli": (
        ("ds", "d"), ("dbs", "db"),
        ("db", "d", "ds", "dbs"), ("ds", "dbs", "db", "d"),
        ("ds", "db", "dbs", "d"), ("dbs", "d", "ds", "db"),
    ),
    "DdbarBar": (("ds", "dbs", "db", "d"), ("db", "d", "ds", "dbs")),
    "Dolbeault": (("db", "dbs"), ("dbs", "db")),
    "DeRham": (("d", "ds"), ("db", "dbs")),
}

_SHIFT = {"d": (1, 0), "db": (0, 1), "ds": (-1, 0), "dbs": (0, -1)}

KERNEL_RTOL = 1e-12


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class ExactnessError(ValueError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class GreenSolve:
    kind: str = "BottChern"
    tol: float = 1e-12
    maxiter: int = 3000
    strategy: str = "auto"  # auto | per-mode | krylov

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Laplacian kind {self.kind!r}")
        if self.strategy not in ("auto", "per-mode", "krylov"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def resolve(self, metric):
        if self.strategy == "auto":
            return "per-mode" if metric.is_constant else "krylov"
        if self.strategy == "per-mode" and not metric.is_constant:
            raise ValueError("per-mode strategy needs a constant metric")
        return self.strategy


def _gs(kind_or_gs):
    return kind_or_gs if isinstance(kind_or_gs, GreenSolve) else GreenSolve(kind_or_gs)


def _valid_path(ops, p, q, n):
    for o in ops:
        dp, dq = _SHIFT[o]
        p, q = p + dp, q + dq
        if not (0 <= p <= n and 0 <= q <= n):
            return False
    return True


def laplacian_terms(kind, p, q, n):
    if kind == "DeRham" and (p, q) != (0, 0):
        raise DegreeError("the de Rham Laplacian is provided on functions only")
    return [t for t in _TERMS[kind] if _valid_path(t, p, q, n)]


def laplacian_apply(kind, metric: MetricField, F: FormField) -> FormField:
    out = np.zeros_like(F.data)
    for ops in laplacian_terms(kind, F.p, F.q, F.n):
        G = F
        for o in ops:
            G = apply_operator(o, G, metric)
        out += G.data
    return FormField(F.grid, F.p, F.q, out)


# ---------------------------------------------------------------------------
# per-mode machinery (constant metrics)

def _sqrt_weight(metric, p, q):
    W = metric.weight_matrix(p, q)
    W = 0.5 * (W + W.conj().T)
    w, U = np.linalg.eigh(W)
    R = (U * np.sqrt(w)) @ U.conj().T
    Ri = (U / np.sqrt(w)) @ U.conj().T
    return R, Ri


def _op_blocks(grid, metric, o, p, q, sl):
    """Blocks of a primitive operator from bidegree (p,q) on modes ``sl``."""
    n = grid.n
    sig, tau = grid.symbols
    holo = o in ("d", "ds")
    syms = sig if holo else tau
    flat = [np.broadcast_to(s, grid.shape).reshape(-1)[sl] for s in syms]
    dsh = (1, 0) if holo else (0, 1)
    if o in ("d", "db"):
        T = alg.wedge_table(n, *dsh, p, q)
        return sum(flat[j][:, None, None] * T[None, :, j, :] for j in range(n))
    ps, qs = p - dsh[0], q - dsh[1]
    T = alg.wedge_table(n, *dsh, ps, qs)
    A = sum(flat[j][:, None, None] * T[None, :, j, :] for j in range(n))  # (m, d_pq, d_src)
    Ws = metric.weight_matrix(ps, qs)
    Wt = metric.weight_matrix(p, q)
    return np.linalg.solve(Ws, np.conj(np.swapaxes(A, 1, 2)) @ Wt)


def _laplacian_blocks(kind, grid, metric, p, q, sl):
    d = dim(grid.n, p, q)
    m = len(range(*sl.indices(grid.npts)))
    B = np.zeros((m, d, d), dtype=complex)
    for ops in laplacian_terms(kind, p, q, grid.n):
        M = None
        a, b = p, q
        for o in ops:
            blk = _op_blocks(grid, metric, o, a, b, sl)
            M = blk if M is None else blk @ M
            a, b = a + _SHIFT[o][0], b + _SHIFT[o][1]
        B += M
    return B


class ModeSpectrum:
    """Eigen-decomposition of the Hermitianized per-mode blocks."""

    CACHE_BYTES = 200e6

    def __init__(self, kind, metric: MetricField, p, q):
        self.kind, self.metric, self.p, self.q = kind, metric, p, q
        self.grid = metric.grid
        self.d = dim(self.grid.n, p, q)
        self.R, self.Ri = _sqrt_weight(metric, p, q)
        M = self.grid.npts
        self.chunk = max(1, int(8e6 // (self.d * self.d * 16)))
        self.slices = [slice(s, min(s + self.chunk, M)) for s in range(0, M, self.chunk)]
        keep = M * self.d * self.d * 16 <= self.CACHE_BYTES
        self.vals, self._vecs = [], [] if keep else None
        for sl in self.slices:
            mu, V = self._eig(sl)
            self.vals.append(mu)
            if keep:
                self._vecs.append(V)
        self.vals = np.concatenate(self.vals)
        self.mu_max = float(np.max(np.abs(self.vals), initial=0.0))
        self.threshold = KERNEL_RTOL * max(self.mu_max, 1e-300)

    def _eig(self, sl):
        B = _laplacian_blocks(self.kind, self.grid, self.metric, self.p, self.q, sl)
        Bt = self.R @ B @ self.Ri
        Bt = 0.5 * (Bt + np.conj(np.swapaxes(Bt, 1, 2)))
        return np.linalg.eigh(Bt)

    def vecs(self, i):
        if self._vecs is not None:
            return self._vecs[i]
        return self._eig(self.slices[i])[1]

    def apply(self, data, fn):
        """Apply ``f(Delta)`` where ``fn`` maps eigenvalues to multipliers."""
        g = self.grid
        Fh = g.fft(data).reshape(-1, self.d)
        out = np.empty_like(Fh)
        for i, sl in enumerate(self.slices):
            mu = self.vals[sl]
            V = self.vecs(i)
            y = Fh[sl] @ self.R.T
            z = np.einsum("mji,mj->mi", np.conj(V), y)
            z *= fn(mu)
            y = np.einsum("mij,mj->mi", V, z)
            out[sl] = y @ self.Ri.T
        return g.ifft(out.reshape(g.shape + (self.d,)))

    def green(self, data):
        thr = self.threshold
        return self.apply(data, lambda mu: np.where(mu > thr, 1.0 / np.where(mu > thr, mu, 1.0), 0.0))

    def kernel_part(self, data):
        thr = self.threshold
        return self.apply(data, lambda mu: (mu <= thr).astype(float))

    def precond(self, data):
        """``f(Delta)`` with kernel eigenvalues replaced by 1 (positive definite)."""
        thr = self.threshold
        return self.apply(data, lambda mu: np.where(mu > thr, 1.0 / np.where(mu > thr, mu, 1.0), 1.0))

    def smallest_positive(self):
        pos = self.vals[self.vals > self.threshold]
        return float(pos.min())


def _spectrum(kind, metric, p, q) -> ModeSpectrum:
    cache = metric.__dict__.setdefault("_mode_cache", {})
    key = (kind, p, q)
    if key not in cache:
        cache[key] = ModeSpectrum(kind, metric, p, q)
    return cache[key]


# ---------------------------------------------------------------------------
# krylov machinery (variable metrics)

class _KrylovSystem:
    def __init__(self, gs: GreenSolve, metric, p, q):
        self.gs, self.metric, self.p, self.q = gs, metric, p, q
        self.grid = metric.grid
        self.shape = self.grid.shape + (dim(self.grid.n, p, q),)
        self.size = int(np.prod(self.shape))
        self.avg = metric.averaged()
        self.spec = _spectrum(gs.kind, self.avg, p, q)

    def S(self, x):
        F = FormField(self.grid, self.p, self.q, x.reshape(self.shape))
        L = laplacian_apply(self.gs.kind, self.metric, F)
        return self.metric.weight(L.data, self.p, self.q).reshape(-1)

    def M(self, r):
        y = self.avg.weight_inv(r.reshape(self.shape), self.p, self.q)
        return self.spec.precond(y).reshape(-1)

    def solve(self, b, x0=None):
        A = spla.LinearOperator((self.size, self.size), matvec=self.S, dtype=complex)
        Mop = spla.LinearOperator((self.size, self.size), matvec=self.M, dtype=complex)
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        x, info = spla.cg(A, b, x0=x0, rtol=self.gs.tol, atol=0.0, maxiter=self.gs.maxiter, M=Mop)
        res = np.linalg.norm(self.S(x) - b) / nb
        if info != 0 and res > 1e3 * self.gs.tol:
            raise SolverError(f"{self.gs.kind} Krylov solve did not converge (relative residual {res:.2e})", res)
        return x


def _corner_modes(grid):
    """Real fields exp(i k.x) for all corner wavenumbers (entries +-1)."""
    x = grid.coords()
    out = []
    for bits in range(1 << grid.ndim):
        f = np.ones(grid.shape)
        for ax in range(grid.ndim):
            if bits >> ax & 1:
                f = f * np.cos(grid.N // 2 * x[ax])
        out.append(np.rint(f))
    return out


def harmonic_basis(gs, metric: MetricField, p, q):
    """W-orthonormal basis (list of arrays) of ker Delta for a variable metric."""
    gs = _gs(gs)
    cache = metric.__dict__.setdefault("_kernel_cache", {})
    key = (gs.kind, p, q)
    if key in cache:
        return cache[key]
    sysm = _KrylovSystem(gs, metric, p, q)
    d = dim(metric.n, p, q)
    cols = []
    for f in _corner_modes(metric.grid):
        for i in range(d):
            c = np.zeros(sysm.shape, dtype=complex)
            c[..., i] = f
            c = c.reshape(-1)
            Sc = sysm.S(c)
            y = sysm.solve(Sc) if np.linalg.norm(Sc) > 0 else 0.0
            cols.append(c - y)
    Hm = np.array(cols).T
    WH = np.array([metric.weight(h.reshape(sysm.shape), p, q).reshape(-1) for h in cols]).T
    Gram = Hm.conj().T @ WH * metric.grid.cell
    Gram = 0.5 * (Gram + Gram.conj().T)
    w, U = np.linalg.eigh(Gram)
    if w[0] <= 1e-10 * w[-1]:
        raise SolverError("kernel refinement produced a dependent family")
    Q = Hm @ (U / np.sqrt(w))
    basis = [Q[:, i].reshape(sysm.shape) for i in range(Q.shape[1])]
    cache[key] = basis
    return basis


def _krylov_kernel_part(gs, metric, F):
    basis = harmonic_basis(gs, metric, F.p, F.q)
    wf = metric.weight(F.data, F.p, F.q)
    out = np.zeros_like(F.data)
    for h in basis:
        out += h * (np.vdot(h, wf) * metric.grid.cell)
    return out


# ---------------------------------------------------------------------------
# public API

def harmonic_project(kind, metric: MetricField, F: FormField) -> FormField:
    gs = _gs(kind)
    if gs.resolve(metric) == "per-mode":
        data = _spectrum(gs.kind, metric, F.p, F.q).kernel_part(F.data)
    else:
        data = _krylov_kernel_part(gs, metric, F)
    return FormField(F.grid, F.p, F.q, data)


def green_apply(gs, metric: MetricField, v: FormField, assume_range=False) -> FormField:
    """``w`` with ``Delta w = P v`` and ``w`` orthogonal to ``ker Delta``.

    ``assume_range`` skips the kernel projection of the input; it is valid when
    ``v`` is known to lie in the range (e.g. ``v`` is ∂∂̄-exact for Bott-Chern),
    and then the variable-metric path needs no kernel basis.
    """
    gs = _gs(gs)
    p, q = v.bidegree
    if gs.resolve(metric) == "per-mode":
        return FormField(v.grid, p, q, _spectrum(gs.kind, metric, p, q).green(v.data))
    sysm = _KrylovSystem(gs, metric, p, q)
    pv = v.data if assume_range else v.data - _krylov_kernel_part(gs, metric, v)
    b = metric.weight(pv, p, q).reshape(-1)
    x = sysm.solve(b).reshape(sysm.shape)
    w = FormField(v.grid, p, q, x)
    if not assume_range:
        w = w - FormField(v.grid, p, q, _krylov_kernel_part(gs, metric, w))
    return w


def three_space_decompose(kind, metric, F: FormField):
    """``(h, e, c)`` with ``F = h + e + c``.

    Bott-Chern: ``e`` in Im ∂∂̄, ``c`` in Im ∂* + Im ∂̄*.
    Aeppli: ``e`` in Im ∂ + Im ∂̄, ``c`` in Im (∂∂̄)*.
    """
    gs = _gs(kind)
    if gs.kind not in ("BottChern", "Aeppli"):
        raise ValueError("three-space decomposition is defined for BottChern and Aeppli")
    h = harmonic_project(gs, metric, F)
    w = green_apply(gs, metric, F)
    p, q, n = F.p, F.q, F.n
    e = FormField.zeros(F.grid, p, q)
    if gs.kind == "BottChern":
        terms = [("ds", "dbs", "db", "d")]
        target = "e"
    else:
        terms = [("db", "d", "ds", "dbs")]
        target = "c"
    part = FormField.zeros(F.grid, p, q)
    for ops in terms:
        if _valid_path(ops, p, q, n):
            G = w
            for o in ops:
                G = apply_operator(o, G, metric)
            part = part + G
    rest = F - h - part
    if target == "e":
        e, c = part, rest
    else:
        c, e = part, rest
    return h, e, c


def _ddbar(F):
    a = apply_operator("db", F)
    return None if a is None else apply_operator("d", a)


def _ddbar_star(metric, F):
    a = apply_operator("ds", F, metric)
    return None if a is None else apply_operator("dbs", a, metric)


@dataclass
class DdbarSolution:
    u: FormField
    green: FormField  # Delta^{-1} v
    residual: float  # ||∂∂̄u - v|| / ||v||


def min_ddbar_solve(metric, v: FormField, via="BC", tol=1e-8, gs: GreenSolve | None = None):
    """Minimal L2 solution of ``∂∂̄ u = v`` as ``(∂∂̄)* Delta^{-1} v``."""
    kind = {"BC": "BottChern", "BottChern": "BottChern", "DdbarBar": "DdbarBar"}[via]
    if v.p < 1 or v.q < 1:
        raise DegreeError("∂∂̄ targets bidegrees with p, q >= 1")
    nv = l2_norm(metric, v)
    if nv == 0:
        z = FormField.zeros(v.grid, v.p - 1, v.q - 1)
        return DdbarSolution(z, FormField.zeros(v.grid, v.p, v.q), 0.0)
    g = GreenSolve(kind) if gs is None else GreenSolve(kind, gs.tol, gs.maxiter, gs.strategy)
    w = green_apply(g, metric, v, assume_range=not metric.is_constant)
    u = _ddbar_star(metric, w)
    res = l2_norm(metric, _ddbar(u) - v) / nv
    if res > tol:
        raise ExactnessError(f"right-hand side is not ∂∂̄-exact (relative residual {res:.2e})", res)
    return DdbarSolution(u, w, res)


def smallest_positive_eigenvalue(kind, metric, p=0, q=0, tol=1e-6, seed=0):
    """Smallest positive eigenvalue of the Laplacian on (p,q)-forms."""
    gs = _gs(kind)
    if gs.resolve(metric) == "per-mode":
        return _spectrum(gs.kind, metric, p, q).smallest_positive()
    # generalized problem S x = lambda W x, constrained off the kernel
    sysm = _KrylovSystem(gs, metric, p, q)
    basis = harmonic_basis(gs, metric, p, q)
    N = sysm.size

    def real_op(f):
        def mv(X):
            X = np.atleast_2d(X.T).T if X.ndim == 1 else X
            Z = X[:N] + 1j * X[N:]
            cols = [f(Z[:, i]) for i in range(Z.shape[1])]
            Y = np.array(cols).T
            return np.vstack([Y.real, Y.imag])
        return spla.LinearOperator((2 * N, 2 * N), matvec=mv, matmat=mv, dtype=float)

    W = lambda x: sysm.metric.weight(x.reshape(sysm.shape), p, q).reshape(-1)
    Y = np.array([np.concatenate([h.reshape(-1).real, h.reshape(-1).imag]) for h in basis]
                 + [np.concatenate([-h.reshape(-1).imag, h.reshape(-1).real]) for h in basis]).T
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2 * N, 4))
    # eigenvalue error is quadratic in the residual tolerance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        vals, _ = spla.lobpcg(real_op(sysm.S), X, B=real_op(W), M=real_op(sysm.M), Y=Y,
                              tol=tol, maxiter=500, largest=False)
    lam = float(np.min(vals))
    if not lam > 0:
        raise SolverError(f"eigenvalue iteration failed (got {lam})")
    return lam


def d_closed_aeppli_rep(metric, Omega: FormField, tol=1e-9):
    """``∂(∂∂̄)*G(∂̄Ω) + Ω - ∂̄(∂∂̄)*G(∂Ω)``: d-closed and Aeppli-cohomologous to Ω."""
    dd = _ddbar(Omega)
    if dd is not None:
        ref = max(1.0, Omega.norm_inf())
        if dd.norm_inf() > tol * ref * max(1, Omega.grid.N) ** 2:
            raise ValueError(f"∂∂̄Ω does not vanish ({dd.norm_inf():.2e})")
    G = Omega
    a = apply_operator("db", Omega)
    if a is not None and a.p >= 1:
        xi = min_ddbar_solve(metric, a, "BC", tol=1e-6).u
        G = G + apply_operator("d", xi)
    b = apply_operator("d", Omega)
    if b is not None and b.q >= 1:
        eta = min_ddbar_solve(metric, b, "BC", tol=1e-6).u
        G = G - apply_operator("db", eta)
    return G


def hs_completion(omega: MetricField, reference: MetricField | None = None):
    """(2,0)-form ``alpha`` with ``∂̄ alpha = -∂ omega`` of minimal norm.

    Uses the Dolbeault Green operator of ``reference`` (flat metric by default).
    Returns ``(alpha, diagnostics)``.
    """
    grid = omega.grid
    if grid.n < 2:
        raise DegreeError("needs n >= 2")
    ref = MetricField.constant(grid) if reference is None else reference
    w = omega.form()
    dw = apply_operator("d", w)  # (2,1)
    ddb = _ddbar(w)
    if ddb.norm_inf() > 1e-8 * max(1.0, w.norm_inf()):
        raise ValueError(f"metric is not pluriclosed (|∂∂̄ω| = {ddb.norm_inf():.2e})")
    G = green_apply(GreenSolve("Dolbeault"), ref, -dw)
    alpha = apply_operator("dbs", G, ref)
    resid = apply_operator("db", alpha) + dw
    if resid.norm_inf() > 1e-8 * max(1.0, dw.norm_inf()):
        raise ValueError(f"∂ω is not ∂̄-exact (residual {resid.norm_inf():.2e})")
    beta = alpha.conj()
    d_alpha = apply_operator("d", alpha)
    closed = max(
        d_alpha.norm_inf() if d_alpha is not None else 0.0,
        resid.norm_inf(),
        (apply_operator("db", w) + apply_operator("d", beta)).norm_inf(),
        apply_operator("db", beta).norm_inf() if apply_operator("db", beta) is not None else 0.0,
    )
    diag = {"d_alpha": d_alpha.norm_inf() if d_alpha is not None else 0.0, "d_closed": closed}
    return alpha, diag


def project_pluriclosed(metric: MetricField, P: FormField) -> FormField:
    """Remove from a real (1,1)-form its component that ∂∂̄ sees (flat per-mode)."""
    flat = MetricField.constant(P.grid)
    v = _ddbar(P)
    if v is None:
        return P
    u = min_ddbar_solve(flat, v, "BC", tol=1e-6).u
    return (P - u).real_part()
