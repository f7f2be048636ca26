"""Spectral forms on the flat torus C^n / (2 pi Z)^{2n}.

Arrays are laid out as ``(N,) * 2n + (ncoef,)`` with real axes ordered
``x1, y1, ..., xn, yn``.  Differentials are Fourier multipliers; adjoints are
exact discrete adjoints for the metric-weighted L2 product.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import algebra as alg
from .algebra import DegreeError, MetricError, PointForm, dim

__all__ = [
    "TorusGrid", "FormField", "FormSum", "MetricField", "MetricSpec",
    "differential", "adjoint", "apply_operator", "l2_inner", "l2_norm",
    "integrate", "sample_metric", "random_field", "random_scalar",
    "write_dump", "read_dump", "set_workers",
]

_WORKERS = 1


def set_workers(k: int):
    """Thread count handed to scipy.fft."""
    global _WORKERS
    _WORKERS = max(1, int(k))


# ---------------------------------------------------------------------------
# grid

class TorusGrid:
    """Uniform grid with ``N`` points on each of the ``2n`` real axes."""

    def __init__(self, n: int, N: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        if N < 4 or N % 2:
            raise ValueError("N must be even and >= 4")
        self.n, self.N = int(n), int(N)
        self.h = 2 * math.pi / self.N
        self.ndim = 2 * self.n
        self.shape = (self.N,) * self.ndim
        self.axes = tuple(range(self.ndim))
        self.npts = self.N ** self.ndim

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and (self.n, self.N) == (other.n, other.N)

    def __hash__(self):
        return hash((self.n, self.N))

    def __repr__(self):
        return f"TorusGrid(n={self.n}, N={self.N})"

    @cached_property
    def k(self):
        """Integer wavenumbers in FFT order (the Nyquist entry is -N/2)."""
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    def _axis(self, v, ax):
        s = [1] * self.ndim
        s[ax] = self.N
        return v.reshape(s)

    def wavenumber(self, ax, nyquist=False):
        k = self.k.copy()
        if not nyquist:
            k[self.N // 2] = 0.0
        return self._axis(k, ax)

    @cached_property
    def symbols(self):
        """``(sigma, tau)``: lists of Fourier symbols of d/dz_j and d/dzbar_j."""
        sig, tau = [], []
        for j in range(self.n):
            kx = self.wavenumber(2 * j)
            ky = self.wavenumber(2 * j + 1)
            sig.append(0.5 * (1j * kx + ky))
            tau.append(0.5 * (1j * kx - ky))
        return sig, tau

    def coords(self):
        x = np.arange(self.N) * self.h
        return [self._axis(x, ax) for ax in range(self.ndim)]

    @cached_property
    def corner_mask(self):
        """Modes whose every wavenumber is 0 or N/2 (all derivative symbols vanish)."""
        m = np.ones(self.shape, dtype=bool)
        for ax in range(self.ndim):
            kk = np.abs(self.k)
            m = m & self._axis((kk == 0) | (kk == self.N // 2), ax)
        return m

    def band_mask(self, bandlimit):
        m = np.ones(self.shape, dtype=bool)
        for ax in range(self.ndim):
            m = m & self._axis(np.abs(self.k) <= bandlimit, ax)
        return m

    def fft(self, a):
        return sfft.fftn(a, axes=self.axes, workers=_WORKERS)

    def ifft(self, a):
        return sfft.ifftn(a, axes=self.axes, workers=_WORKERS)

    @property
    def cell(self):
        return self.h ** self.ndim


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class FormField:
    """A (p,q)-form sampled on a torus grid."""

    grid: TorusGrid
    p: int
    q: int
    data: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if not (0 <= self.p <= n and 0 <= self.q <= n):
            raise DegreeError(f"bidegree ({self.p},{self.q}) invalid for n={n}")
        d = np.asarray(self.data, dtype=complex)
        want = self.grid.shape + (dim(n, self.p, self.q),)
        if d.shape != want:
            raise ValueError(f"data shape {d.shape} != {want}")
        object.__setattr__(self, "data", d)

    # constructors
    @classmethod
    def zeros(cls, grid, p, q):
        return cls(grid, p, q, np.zeros(grid.shape + (dim(grid.n, p, q),), dtype=complex))

    @classmethod
    def constant(cls, grid, u: PointForm):
        d = np.broadcast_to(u.coeffs, grid.shape + u.coeffs.shape).copy()
        return cls(grid, u.p, u.q, d)

    @classmethod
    def scalar(cls, grid, values):
        return cls(grid, 0, 0, np.asarray(values, dtype=complex)[..., None])

    @property
    def n(self):
        return self.grid.n

    @property
    def bidegree(self):
        return (self.p, self.q)

    @property
    def values(self):
        """Scalar fields: the real part as a plain array."""
        if (self.p, self.q) != (0, 0):
            raise DegreeError("not a scalar field")
        return self.data[..., 0].real

    def at(self, idx) -> PointForm:
        return PointForm(self.n, self.p, self.q, self.data[idx])

    def _like(self, data, p=None, q=None):
        return FormField(self.grid, self.p if p is None else p, self.q if q is None else q, data)

    def _check(self, other):
        if not isinstance(other, FormField) or other.grid != self.grid or other.bidegree != self.bidegree:
            raise DegreeError("field bidegree/grid mismatch")

    def __add__(self, other):
        self._check(other)
        return self._like(self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.data - other.data)

    def __neg__(self):
        return self._like(-self.data)

    def __mul__(self, s):
        s = np.asarray(s)
        if s.ndim:
            s = s[..., None]  # pointwise scalar field
        return self._like(self.data * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        s = np.asarray(s)
        if s.ndim:
            s = s[..., None]
        return self._like(self.data / s)

    def conj(self):
        return self._like(alg.conj_coeffs(self.n, self.p, self.q, self.data), self.q, self.p)

    def real_part(self):
        """``(F + conj F) / 2`` for p = q."""
        if self.p != self.q:
            raise DegreeError("realness needs p = q")
        return self._like(0.5 * (self.data + self.conj().data))

    def realness_defect(self):
        if self.p != self.q:
            return math.inf
        return float(np.max(np.abs(self.data - self.conj().data), initial=0.0))

    def wedge(self, other):
        if isinstance(other, PointForm):
            c, bd = other.coeffs, (other.p, other.q)
        else:
            if other.grid != self.grid:
                raise DegreeError("grid mismatch")
            c, bd = other.data, other.bidegree
        out = alg.wedge_coeffs(self.n, self.bidegree, self.data, bd, c)
        return self._like(out, self.p + bd[0], self.q + bd[1])

    def __xor__(self, other):
        return self.wedge(other)

    def norm_inf(self):
        return float(np.max(np.abs(self.data), initial=0.0))

    def fft(self):
        return self.grid.fft(self.data)

    def __repr__(self):
        return f"FormField({self.grid}, ({self.p},{self.q}))"


class FormSum(dict):
    """Mixed-bidegree form: bidegree -> FormField."""

    def add(self, F: FormField):
        if F.bidegree in self:
            self[F.bidegree] = self[F.bidegree] + F
        else:
            self[F.bidegree] = F
        return self

    @classmethod
    def of(cls, *fields):
        s = cls()
        for F in fields:
            s.add(F)
        return s

    def norm_inf(self):
        return max((F.norm_inf() for F in self.values()), default=0.0)

    def __sub__(self, other):
        out = FormSum(self)
        for F in other.values():
            out.add(-F)
        return out


# ---------------------------------------------------------------------------
# metrics

class MetricField:
    """Positive (1,1)-form ``i sum H_jk(x) dz_j ^ dzbar_k`` on a grid.

    A constant metric keeps a single ``(n, n)`` matrix; all weights are then
    constant and per-mode Hodge theory applies.
    """

    def __init__(self, grid: TorusGrid, H, check=True):
        self.grid = grid
        n = grid.n
        H = np.asarray(H, dtype=complex)
        if H.shape == (n, n):
            self.is_constant = True
        elif H.shape == grid.shape + (n, n):
            self.is_constant = False
        else:
            raise ValueError(f"bad metric shape {H.shape}")
        H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
        self.H = H
        self._P = alg.frame_from_hermitian(H, check=check)
        self._compounds = {}

    @classmethod
    def constant(cls, grid, H=None):
        return cls(grid, np.eye(grid.n) if H is None else H)

    @property
    def n(self):
        return self.grid.n

    @cached_property
    def H_full(self):
        return np.broadcast_to(self.H, self.grid.shape + (self.n, self.n))

    @cached_property
    def mean_H(self):
        if self.is_constant:
            return self.H
        return self.H.reshape(-1, self.n, self.n).mean(axis=0)

    def averaged(self):
        return MetricField(self.grid, self.mean_H)

    @property
    def P(self):
        return self._P

    @cached_property
    def Pinv(self):
        return np.linalg.inv(self._P)

    @cached_property
    def det(self):
        """``omega^n / omega_flat^n`` (real, positive)."""
        return np.real(np.linalg.det(self.H))

    def K(self, p, inverse=False):
        key = (p, inverse)
        if key not in self._compounds:
            self._compounds[key] = alg.compound(self.Pinv if inverse else self._P, p)
        return self._compounds[key]

    def min_eigenvalue(self):
        return float(np.min(np.linalg.eigvalsh(self.H)))

    def form(self) -> FormField:
        c = 1j * self.H_full.reshape(self.grid.shape + (self.n * self.n,))
        return FormField(self.grid, 1, 1, np.array(c))

    def power(self, k) -> FormField:
        """``omega^k`` as a field (``k = 0`` gives the constant 1)."""
        w = self.form()
        out = FormField(self.grid, 0, 0, np.ones(self.grid.shape + (1,), dtype=complex))
        for _ in range(k):
            out = out.wedge(w)
        return out

    def point(self, idx=None) -> alg.MetricPoint:
        if self.is_constant:
            return alg.MetricPoint(self.n, self.H)
        return alg.MetricPoint(self.n, self.H[idx])

    def scaled(self, c):
        return MetricField(self.grid, self.H * c)

    # pointwise weights -------------------------------------------------
    def _det_b(self):
        d = self.det
        return d if self.is_constant else d[..., None]

    def to_frame(self, data, p, q):
        return alg.transform_coeffs(data, p, q, self.K(p), self.K(q))

    def from_frame(self, data, p, q):
        return alg.transform_coeffs(data, p, q, self.K(p, True), self.K(q, True))

    def _gram(self, p, inverse=False):
        """``K K^H`` (or ``I^H I`` for the inverse frame): both coframe changes in one."""
        key = ("gram", p, inverse)
        if key not in self._compounds:
            K = self.K(p, inverse)
            Kh = np.conj(np.swapaxes(K, -1, -2))
            self._compounds[key] = Kh @ K if inverse else K @ Kh
        return self._compounds[key]

    def weight(self, data, p, q):
        """``W u`` with ``v^H W u = <u, v> dV_omega / dV_flat`` pointwise."""
        y = alg.transform_coeffs(data, p, q, self._gram(p), self._gram(q))
        return y * self._det_b()

    def weight_inv(self, data, p, q):
        y = alg.transform_coeffs(data, p, q, self._gram(p, True), self._gram(q, True))
        return y / self._det_b()

    def weight_matrix(self, p, q):
        """Constant metrics only: the dense weight matrix of bidegree (p,q)."""
        if not self.is_constant:
            raise ValueError("weight_matrix needs a constant metric")
        d = dim(self.n, p, q)
        return self.weight(np.eye(d, dtype=complex), p, q).T

    def star(self, F: FormField) -> FormField:
        n = self.n
        p, q = F.bidegree
        a, b = n - q, n - p
        x = alg.right_matmul(self.to_frame(F.data, p, q), alg.star_table(n, p, q).T)
        return FormField(self.grid, a, b, self.from_frame(x, a, b))

    def inner_pointwise(self, F, G):
        F._check(G)
        x = self.to_frame(F.data, F.p, F.q)
        y = self.to_frame(G.data, G.p, G.q)
        return np.sum(x * np.conj(y), axis=-1)


# ---------------------------------------------------------------------------
# differentials

@dataclass(frozen=True)
class _Op:
    which: str  # 'd', 'db', 'ds', 'dbs'

    @property
    def shift(self):
        return {"d": (1, 0), "db": (0, 1), "ds": (-1, 0), "dbs": (0, -1)}[self.which]


def _first_order_hat(grid, Fhat, p, q, which, adjoint=False):
    """Fourier-side action of dz_j ^ d_j (or its unweighted adjoint)."""
    n = grid.n
    sig, tau = grid.symbols
    holo = which == "d"
    syms = sig if holo else tau
    if not adjoint:
        T = alg.wedge_table(n, *((1, 0) if holo else (0, 1)), p, q)
        Y = alg.right_matmul(Fhat, T.transpose(2, 1, 0).reshape(T.shape[2], -1))
        Y = Y.reshape(Y.shape[:-1] + (n, T.shape[0]))
        return sum(syms[j][..., None] * Y[..., j, :] for j in range(n))
    # adjoint: F has bidegree (p,q) = target of the forward map
    ps, qs = (p - 1, q) if holo else (p, q - 1)
    T = alg.wedge_table(n, *((1, 0) if holo else (0, 1)), ps, qs)
    Y = alg.right_matmul(Fhat, T.reshape(T.shape[0], -1))
    Y = Y.reshape(Y.shape[:-1] + (n, T.shape[2]))
    return sum(np.conj(syms[j])[..., None] * Y[..., j, :] for j in range(n))


def _shifted(p, q, which, n):
    dp, dq = _Op(which).shift
    a, b = p + dp, q + dq
    return (a, b) if (0 <= a <= n and 0 <= b <= n) else None


def apply_operator(which, F: FormField, metric: MetricField | None = None):
    """Apply one of ``d``, ``db`` (forward) or ``ds``, ``dbs`` (weighted adjoints).

    Returns ``None`` when the output bidegree is out of range (the zero map).
    """
    n = F.n
    bd = _shifted(F.p, F.q, which, n)
    if bd is None:
        return None
    g = F.grid
    if which in ("d", "db"):
        out = g.ifft(_first_order_hat(g, F.fft(), F.p, F.q, which))
        return FormField(g, *bd, out)
    if metric is None:
        raise ValueError("adjoints need a metric")
    fwd = "d" if which == "ds" else "db"
    wf = metric.weight(F.data, F.p, F.q)
    out = g.ifft(_first_order_hat(g, g.fft(wf), F.p, F.q, fwd, adjoint=True))
    return FormField(g, *bd, metric.weight_inv(out, *bd))


def differential(F, which: str):
    """``which`` in ``{'d', 'db', 'D'}`` (``'D'`` is the full d).

    The pure-type cases return a FormField (or raise when the output bidegree
    does not exist); the full differential returns a :class:`FormSum`.
    """
    which = {"del": "d", "dbar": "db", "∂": "d", "∂̄": "db", "d_full": "D"}.get(which, which)
    if isinstance(F, FormSum) or which == "D":
        ops = ("d", "db") if which == "D" else (which,)
        items = F.values() if isinstance(F, FormSum) else [F]
        out = FormSum()
        for G in items:
            for w in ops:
                r = apply_operator(w, G)
                if r is not None:
                    out.add(r)
        return out
    r = apply_operator(which, F)
    if r is None:
        raise DegreeError(f"{which} of a ({F.p},{F.q})-form leaves the range")
    return r


def adjoint(metric: MetricField, which: str):
    """Weighted adjoint as a callable on FormFields.

    ``which`` in ``{'ds', 'dbs', 'Ds', 'ddbs'}`` for ∂*, ∂̄*, d*, (∂∂̄)*.
    """
    if which in ("ds", "dbs"):
        def op(F):
            r = apply_operator(which, F, metric)
            if r is None:
                raise DegreeError(f"{which} of a ({F.p},{F.q})-form leaves the range")
            return r
        return op
    if which == "ddbs":
        def op(F):
            a = apply_operator("ds", F, metric)
            r = None if a is None else apply_operator("dbs", a, metric)
            if r is None:
                raise DegreeError("(∂∂̄)* leaves the range")
            return r
        return op
    if which == "Ds":
        def op(F):
            items = F.values() if isinstance(F, FormSum) else [F]
            out = FormSum()
            for G in items:
                for w in ("ds", "dbs"):
                    r = apply_operator(w, G, metric)
                    if r is not None:
                        out.add(r)
            return out
        return op
    raise ValueError(f"unknown adjoint {which!r}")


# ---------------------------------------------------------------------------
# integrals

def l2_inner(metric: MetricField, F: FormField, G: FormField) -> complex:
    """``sum_x <F, G>_omega (dV_omega / dV_flat) h^{2n}``."""
    F._check(G)
    wf = metric.weight(F.data, F.p, F.q)
    return complex(np.vdot(G.data, wf) * F.grid.cell)


def l2_norm(metric, F):
    return math.sqrt(max(l2_inner(metric, F, F).real, 0.0))


def integrate(F: FormField) -> complex:
    """Integral of an (n,n)-form, normalized so that dV_flat integrates to (2 pi)^{2n}."""
    n = F.n
    if F.bidegree != (n, n):
        raise DegreeError("only top forms integrate")
    return complex(F.data[..., 0].sum() / alg.top_dv_coeff(n) * F.grid.cell)


# ---------------------------------------------------------------------------
# sampling

def _gaussian_hat(grid, rng, ncomp, bandlimit):
    mask = grid.band_mask(bandlimit)
    z = rng.standard_normal(grid.shape + (ncomp,)) + 1j * rng.standard_normal(grid.shape + (ncomp,))
    z *= mask[..., None]
    nm = max(int(mask.sum()), 1)
    return grid.ifft(z) * (grid.npts / math.sqrt(nm))


def random_field(grid, p, q, seed=0, bandlimit=2, real=False) -> FormField:
    """Band-limited Gaussian (p,q)-form; ``real`` symmetrizes under conjugation."""
    rng = np.random.default_rng(seed)
    data = _gaussian_hat(grid, rng, dim(grid.n, p, q), bandlimit)
    F = FormField(grid, p, q, data)
    if real:
        F = F.real_part()
    return F


def random_scalar(grid, seed=0, bandlimit=2, amplitude=None) -> np.ndarray:
    """Real band-limited scalar; scaled to ``max |f| = amplitude`` if given."""
    rng = np.random.default_rng(seed)
    f = _gaussian_hat(grid, rng, 1, bandlimit)[..., 0].real
    f = f - f.mean()
    if amplitude is not None:
        f = f * (amplitude / np.max(np.abs(f)))
    return f


@dataclass(frozen=True)
class MetricSpec:
    """``kind`` in {constant, conformal, perturbed}."""

    kind: str = "constant"
    H: tuple | None = None
    seed: int = 0
    amplitude: float = 0.0
    bandlimit: int = 1


def _as_H(n, H):
    if H is None:
        return np.eye(n, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if H.shape != (n, n):
        raise ValueError("H must be n x n")
    return H


def sample_metric(grid: TorusGrid, spec: MetricSpec) -> MetricField:
    n = grid.n
    H0 = _as_H(n, spec.H)
    alg.MetricPoint(n, H0)  # validates
    if spec.kind == "constant":
        return MetricField(grid, H0)
    if spec.kind == "conformal":
        s = random_scalar(grid, spec.seed, spec.bandlimit, spec.amplitude if spec.amplitude else None)
        return MetricField(grid, np.exp(s)[..., None, None] * H0)
    if spec.kind == "perturbed":
        if not 0 <= spec.amplitude < 1:
            raise MetricError("perturbation amplitude must lie in [0, 1)")
        rng = np.random.default_rng(spec.seed)
        Pm = _hermitian_real_fields(grid, rng, n, spec.bandlimit)
        norm = np.max(np.abs(np.linalg.eigvalsh(Pm)))
        lmin = float(np.linalg.eigvalsh(H0)[0])
        if norm > 0:
            Pm = Pm * (spec.amplitude * lmin / norm)
        H = H0 + Pm
        if np.min(np.linalg.eigvalsh(H)) <= 0:
            raise MetricError("perturbed metric lost positivity")
        return MetricField(grid, H)
    raise ValueError(f"unknown metric kind {spec.kind!r}")


def _hermitian_real_fields(grid, rng, n, bandlimit):
    """Hermitian-matrix-valued field with real band-limited entry functions."""
    M = np.zeros(grid.shape + (n, n), dtype=complex)
    for j in range(n):
        for k in range(j, n):
            re = _gaussian_hat(grid, rng, 1, bandlimit)[..., 0].real
            if j == k:
                M[..., j, j] = re
            else:
                im = _gaussian_hat(grid, rng, 1, bandlimit)[..., 0].real
                M[..., j, k] = re + 1j * im
                M[..., k, j] = re - 1j * im
    return M


# ---------------------------------------------------------------------------
# dumps

def write_dump(path, F: FormField):
    header = {
        "n": F.n, "N": F.grid.N, "p": F.p, "q": F.q,
        "coeff_order": "lex-bitmask",
        "layout": "row-major axes " + ",".join(f"x{j + 1},y{j + 1}" for j in range(F.n)),
        "scalar": "f64le interleaved re,im",
    }
    payload = np.ascontiguousarray(F.data, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(payload)


def read_dump(path) -> FormField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        raw = fh.read()
    g = TorusGrid(header["n"], header["N"])
    data = np.frombuffer(raw, dtype="<c16").reshape(g.shape + (dim(g.n, header["p"], header["q"]),))
    return FormField(g, header["p"], header["q"], data.copy())
