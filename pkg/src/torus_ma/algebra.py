"""Pointwise exterior algebra of (p,q)-forms on C^n.

Coefficients are stored over the monomials ``dz_I ^ dzbar_J`` with ``I`` and
``J`` encoded as bitmasks and ordered lexicographically by ``(I, J)``.  No
powers of ``i`` are absorbed into the basis.

Every routine working on raw coefficient arrays accepts arbitrary leading batch
dimensions, so the same code serves single points and whole grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "DegreeError", "MetricError", "PositivityError",
    "masks", "dim", "basis", "wedge_table", "wedge_coeffs", "conj_coeffs",
    "top_dv_coeff", "star_table", "compound", "frame_from_hermitian",
    "right_matmul", "transform_coeffs", "nn_matrix_table", "nn_matrix", "nn_form",
    "PointForm", "MetricPoint", "FrameChange",
    "wedge", "hodge_star", "inner_product", "lefschetz_contract",
    "lefschetz_decompose_11", "root_n_minus_1", "det_relation_check",
    "trace_relative", "trace_star_two_metrics", "power",
]

EIG_RTOL = 1e-12


class DegreeError(ValueError):
    """Bidegree out of range or mismatched."""


class MetricError(ValueError):
    """A Hermitian matrix that should be positive definite is not."""


class PositivityError(ValueError):
    """An (n-1,n-1)-form failed the positivity test."""

    def __init__(self, msg, min_eigenvalue=None, where=None):
        super().__init__(msg)
        self.min_eigenvalue = min_eigenvalue
        self.where = where


# ---------------------------------------------------------------------------
# combinatorics

@lru_cache(maxsize=None)
def masks(n: int, p: int) -> tuple:
    """Bitmasks over ``n`` axes with ``p`` bits set, ascending."""
    return tuple(m for m in range(1 << n) if bin(m).count("1") == p)


@lru_cache(maxsize=None)
def _mask_index(n: int, p: int) -> dict:
    return {m: i for i, m in enumerate(masks(n, p))}


def dim(n: int, p: int, q: int) -> int:
    return math.comb(n, p) * math.comb(n, q)


@lru_cache(maxsize=None)
def basis(n: int, p: int, q: int) -> tuple:
    """``(holo, anti)`` mask pairs in storage order."""
    return tuple((a, b) for a in masks(n, p) for b in masks(n, q))


def _check_bidegree(n, p, q):
    if not (0 <= p <= n and 0 <= q <= n):
        raise DegreeError(f"bidegree ({p},{q}) invalid for n={n}")


def _popcount(m):
    return bin(m).count("1")


def _merge_sign(a: int, b: int) -> int:
    """Sign of the shuffle sorting the factors of mask ``a`` followed by ``b``."""
    inv = 0
    for k in range(b.bit_length()):
        if b >> k & 1:
            inv += _popcount(a >> (k + 1))
    return -1 if inv & 1 else 1


@lru_cache(maxsize=None)
def wedge_table(n, p1, q1, p2, q2):
    """Dense table ``T[out, i, j]`` with ``(u^v)[out] = sum T u[i] v[j]``."""
    p, q = p1 + p2, q1 + q2
    if p > n or q > n:
        raise DegreeError(f"wedge overflows: ({p},{q}) with n={n}")
    out_idx = {bm: k for k, bm in enumerate(basis(n, p, q))}
    T = np.zeros((dim(n, p, q), dim(n, p1, q1), dim(n, p2, q2)))
    for i, (I, J) in enumerate(basis(n, p1, q1)):
        for j, (K, L) in enumerate(basis(n, p2, q2)):
            if I & K or J & L:
                continue
            # dz_I dzb_J dz_K dzb_L -> dz_I dz_K dzb_J dzb_L
            s = -1 if (_popcount(J) * _popcount(K)) & 1 else 1
            s *= _merge_sign(I, K) * _merge_sign(J, L)
            T[out_idx[(I | K, J | L)], i, j] = s
    T.setflags(write=False)
    return T


def wedge_coeffs(n, bd1, a, bd2, b):
    """Wedge of coefficient arrays ``a`` (bidegree ``bd1``) and ``b``."""
    T = wedge_table(n, *bd1, *bd2)
    tmp = np.tensordot(a, T, axes=([-1], [1]))  # (..., out, j)
    return np.einsum("...oj,...j->...o", tmp, b)


@lru_cache(maxsize=None)
def _conj_perm(n, p, q):
    """Index map and signs so that conj(u)[k] = sign[k] * conj(u[perm[k]])."""
    src = {bm: k for k, bm in enumerate(basis(n, p, q))}
    perm, sign = [], []
    for (I, J) in basis(n, q, p):
        # coefficient of dz_I dzb_J in conj(u) comes from u_{J,I}
        perm.append(src[(J, I)])
        sign.append(-1.0 if (_popcount(I) * _popcount(J)) & 1 else 1.0)
    return np.array(perm), np.array(sign)


def conj_coeffs(n, p, q, c):
    """Coefficients of the complex conjugate form, bidegree ``(q, p)``."""
    perm, sign = _conj_perm(n, p, q)
    return sign * np.conj(c[..., perm])


@lru_cache(maxsize=None)
def _omega_flat(n):
    """Coefficients of ``i sum dz_j ^ dzbar_j``."""
    c = np.zeros(dim(n, 1, 1), dtype=complex)
    for j in range(n):
        c[j * n + j] = 1j
    return c


@lru_cache(maxsize=None)
def top_dv_coeff(n) -> complex:
    """Coefficient of ``omega^n / n!`` (identity metric) on the top monomial."""
    acc = np.ones(1, dtype=complex)
    w = _omega_flat(n)
    for k in range(n):
        acc = wedge_coeffs(n, (k, k), acc, (1, 1), w)
    return complex(acc[0] / math.factorial(n))


@lru_cache(maxsize=None)
def star_table(n, p, q):
    """Hodge star for the identity metric as a matrix (n-q,n-p) <- (p,q).

    Solves ``u ^ *w = <u, conj w> dV`` for every basis monomial ``u`` of
    bidegree (q, p); monomials are orthonormal for the identity metric.
    """
    _check_bidegree(n, p, q)
    a, b = n - q, n - p
    # W[k, l] = top coefficient of E_k ^ F_l, E_k of bidegree (q,p), F_l of (a,b)
    W = wedge_table(n, q, p, a, b)[0]
    perm, sign = _conj_perm(n, p, q)
    # <E_k, conj w> = conj(conj(w)[k]) = sign[k] * w[perm[k]]
    Q = np.zeros((dim(n, q, p), dim(n, p, q)))
    Q[np.arange(len(perm)), perm] = sign
    S = top_dv_coeff(n) * np.linalg.solve(W, Q)
    S.setflags(write=False)
    return S


# ---------------------------------------------------------------------------
# frames

@lru_cache(maxsize=None)
def _compound_index(n, p):
    ms = masks(n, p)
    idx = np.array([[k for k in range(n) if m >> k & 1] for m in ms], dtype=int)
    return idx.reshape(len(ms), p)


def compound(P, p):
    """p-th compound matrix (all p x p minors) of a batch of n x n matrices."""
    n = P.shape[-1]
    if p == 0:
        return np.ones(P.shape[:-2] + (1, 1), dtype=P.dtype)
    if p == 1:
        return P
    idx = _compound_index(n, p)
    d = idx.shape[0]
    rows = idx[:, None, :, None]
    cols = idx[None, :, None, :]
    sub = P[..., rows, cols]  # (..., d, d, p, p)
    return np.linalg.det(sub).reshape(P.shape[:-2] + (d, d))


def frame_from_hermitian(H, check=True):
    """Return ``P`` with ``dz = P theta`` and ``theta`` orthonormal for ``H``.

    ``P^T H conj(P) = I``.  Built from the eigendecomposition of ``conj(H)``.
    """
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    e, V = np.linalg.eigh(np.conj(H))
    if check:
        emax = np.max(np.abs(e), axis=-1, keepdims=True)
        if np.any(e <= EIG_RTOL * emax) or np.any(emax == 0):
            raise MetricError(f"metric not positive definite (min eigenvalue {e.min():.3e})")
    return V / np.sqrt(e)[..., None, :]


def right_matmul(a, M):
    """``a @ M`` for a stack of row vectors, as one flat matrix product."""
    out = a.reshape(-1, a.shape[-1]) @ M
    return out.reshape(a.shape[:-1] + (M.shape[-1],))


def transform_coeffs(c, p, q, Kp, Kq):
    """Change coframe: ``C' = Kp^T C conj(Kq)`` on the (dp, dq) coefficient grid."""
    dp, dq = Kp.shape[-1], Kq.shape[-1]
    if Kp.ndim == 2 and Kq.ndim == 2:
        return right_matmul(c, np.kron(Kp, np.conj(Kq)))
    # per-point frames: sum over the short coefficient axes, vectorized over the grid
    C = c.reshape(c.shape[:-1] + (dp, dq))
    T = sum(Kp[..., a, :, None] * C[..., a, None, :] for a in range(dp))
    Kc = np.conj(Kq)
    out = sum(T[..., :, b, None] * Kc[..., b, None, :] for b in range(dq))
    return out.reshape(out.shape[:-2] + (dp * dq,))


# ---------------------------------------------------------------------------
# (n-1, n-1) coefficient matrices

@lru_cache(maxsize=None)
def nn_matrix_table(n):
    """``Z[idx, j, k]`` so that ``C_jk = sum_idx G[idx] Z[idx, j, k]``.

    ``C_jk`` is the coefficient of ``G ^ (i dz_k ^ dzbar_j)`` on ``dV``, so the
    form ``prod_{l != j} (i dz_l ^ dzbar_l)`` has ``C = e_j e_j^T``.
    """
    T = wedge_table(n, n - 1, n - 1, 1, 1)[0]  # (d_{n-1,n-1}, n*n)
    Z = np.zeros((dim(n, n - 1, n - 1), n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            Z[:, j, k] = 1j * T[:, k * n + j] / top_dv_coeff(n)
    Z.setflags(write=False)
    return Z


@lru_cache(maxsize=None)
def _nn_inverse(n):
    Z = nn_matrix_table(n).reshape(dim(n, n - 1, n - 1), n * n)
    return np.linalg.inv(Z)  # maps flattened C back to coefficients


def nn_matrix(G):
    """Coefficient matrix of an (n-1,n-1) coefficient array (ambient frame)."""
    n = math.isqrt(G.shape[-1])
    return np.einsum("...i,ijk->...jk", G, nn_matrix_table(n))


def nn_form(C):
    """Inverse of :func:`nn_matrix`."""
    n = C.shape[-1]
    flat = C.reshape(C.shape[:-2] + (n * n,))
    return flat @ _nn_inverse(n)


# ---------------------------------------------------------------------------
# value types

@dataclass(frozen=True, eq=False)
class PointForm:
    """A (p,q)-form at a point: ``sum coeffs[k] dz_I ^ dzbar_J``."""

    n: int
    p: int
    q: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_bidegree(self.n, self.p, self.q)
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.size != dim(self.n, self.p, self.q):
            raise DegreeError(f"expected {dim(self.n, self.p, self.q)} coefficients, got {c.size}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n, p, q):
        return cls(n, p, q, np.zeros(dim(n, p, q), dtype=complex))

    @classmethod
    def monomial(cls, n, holo, anti, value=1.0):
        """``value * dz_holo ^ dzbar_anti``; ``holo``/``anti`` are index tuples."""
        I = sum(1 << j for j in holo)
        J = sum(1 << j for j in anti)
        if bin(I).count("1") != len(holo) or bin(J).count("1") != len(anti):
            raise DegreeError("repeated index")
        # sort factors, tracking sign
        s = _sort_sign(holo) * _sort_sign(anti)
        f = cls.zeros(n, len(holo), len(anti))
        c = np.zeros_like(f.coeffs)
        c[basis(n, len(holo), len(anti)).index((I, J))] = s * value
        return cls(n, len(holo), len(anti), c)

    @property
    def degree(self):
        return self.p + self.q

    def conj(self):
        return PointForm(self.n, self.q, self.p, conj_coeffs(self.n, self.p, self.q, self.coeffs))

    def is_real(self, tol=1e-12):
        if self.p != self.q:
            return False
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        return bool(np.max(np.abs(self.coeffs - self.conj().coeffs), initial=0.0) <= tol * scale)

    def _same(self, other):
        if (self.n, self.p, self.q) != (other.n, other.p, other.q):
            raise DegreeError("bidegree mismatch")

    def __add__(self, other):
        self._same(other)
        return PointForm(self.n, self.p, self.q, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._same(other)
        return PointForm(self.n, self.p, self.q, self.coeffs - other.coeffs)

    def __neg__(self):
        return PointForm(self.n, self.p, self.q, -self.coeffs)

    def __mul__(self, s):
        return PointForm(self.n, self.p, self.q, self.coeffs * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return PointForm(self.n, self.p, self.q, self.coeffs / s)

    def __xor__(self, other):
        return wedge(self, other)

    def norm_inf(self):
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def __repr__(self):
        return f"PointForm(n={self.n}, ({self.p},{self.q}), {np.array2string(self.coeffs, precision=4)})"


def _sort_sign(idx):
    idx = list(idx)
    s = 1
    for i in range(len(idx)):
        for j in range(i + 1, len(idx)):
            if idx[i] > idx[j]:
                s = -s
    return s


@dataclass(frozen=True)
class FrameChange:
    """``B`` with ``B^H H B = I``; the orthonormal coframe is ``theta = B^T dzbar``-dual.

    Concretely ``dz = conj(B) theta``.
    """

    B: np.ndarray
    detB: complex

    @property
    def P(self):
        return np.conj(self.B)


@dataclass(frozen=True, eq=False)
class MetricPoint:
    """Positive (1,1)-form ``i sum H_jk dz_j ^ dzbar_k``."""

    n: int
    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.shape != (self.n, self.n):
            raise DegreeError("H must be n x n")
        scale = max(1.0, float(np.max(np.abs(H))))
        if np.max(np.abs(H - H.conj().T)) > 1e-10 * scale:
            raise MetricError("H is not Hermitian")
        H = 0.5 * (H + H.conj().T)
        e = np.linalg.eigvalsh(H)
        if e[0] <= EIG_RTOL * abs(e[-1]) or e[-1] <= 0:
            raise MetricError(f"metric not positive definite (min eigenvalue {e[0]:.3e})")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @classmethod
    def identity(cls, n):
        return cls(n, np.eye(n))

    @classmethod
    def from_form(cls, u: PointForm):
        if (u.p, u.q) != (1, 1):
            raise DegreeError("metric must be a (1,1)-form")
        return cls(u.n, (-1j * u.coeffs).reshape(u.n, u.n))

    @property
    def form(self) -> PointForm:
        return PointForm(self.n, 1, 1, 1j * self.H.reshape(-1))

    def frame(self) -> FrameChange:
        P = frame_from_hermitian(self.H)
        return FrameChange(np.conj(P), complex(np.linalg.det(np.conj(P))))

    def det(self) -> float:
        """``omega^n / omega_flat^n``."""
        return float(np.real(np.linalg.det(self.H)))


# ---------------------------------------------------------------------------
# operations on PointForm

def wedge(u: PointForm, v: PointForm) -> PointForm:
    if u.n != v.n:
        raise DegreeError("dimension mismatch")
    c = wedge_coeffs(u.n, (u.p, u.q), u.coeffs, (v.p, v.q), v.coeffs)
    return PointForm(u.n, u.p + v.p, u.q + v.q, c)


def power(u: PointForm, k: int) -> PointForm:
    out = PointForm(u.n, 0, 0, np.ones(1))
    for _ in range(k):
        out = wedge(out, u)
    return out


def star_coeffs(n, p, q, c, P):
    """Hodge star of coefficient array ``c`` for metric frames ``P`` (batched)."""
    a, b = n - q, n - p
    cf = transform_coeffs(c, p, q, compound(P, p), compound(P, q))
    s = cf @ star_table(n, p, q).T
    Pi = np.linalg.inv(P)
    return transform_coeffs(s, a, b, compound(Pi, a), compound(Pi, b))


def hodge_star(omega: MetricPoint, u: PointForm) -> PointForm:
    P = omega.frame().P
    return PointForm(u.n, u.n - u.q, u.n - u.p, star_coeffs(u.n, u.p, u.q, u.coeffs, P))


def inner_coeffs(n, p, q, a, b, P):
    """Pointwise inner product ``<a, b>`` of coefficient arrays."""
    Kp, Kq = compound(P, p), compound(P, q)
    ta = transform_coeffs(a, p, q, Kp, Kq)
    tb = transform_coeffs(b, p, q, Kp, Kq)
    return np.sum(ta * np.conj(tb), axis=-1)


def inner_product(omega: MetricPoint, u: PointForm, v: PointForm) -> complex:
    u._same(v)
    return complex(inner_coeffs(u.n, u.p, u.q, u.coeffs, v.coeffs, omega.frame().P))


def lefschetz_contract(omega: MetricPoint, alpha: PointForm):
    """``Lambda_omega alpha = tr(H^{-1} A)`` for ``alpha = i sum A_jk dz_j ^ dzbar_k``."""
    if (alpha.p, alpha.q) != (1, 1):
        raise DegreeError("contraction implemented on (1,1)-forms")
    A = (-1j * alpha.coeffs).reshape(alpha.n, alpha.n)
    t = complex(np.trace(np.linalg.solve(omega.H, A)))
    return t.real if alpha.is_real() else t


def lefschetz_decompose_11(omega: MetricPoint, alpha: PointForm):
    s = lefschetz_contract(omega, alpha) / alpha.n
    return alpha - omega.form * s, s


def _theta_nn_matrix(G: PointForm, omega0: MetricPoint | None):
    n = G.n
    if (G.p, G.q) != (n - 1, n - 1):
        raise DegreeError("expected an (n-1,n-1)-form")
    c = G.coeffs
    if omega0 is not None:
        P = omega0.frame().P
        c = transform_coeffs(c, n - 1, n - 1, compound(P, n - 1), compound(P, n - 1))
    return nn_matrix(c)


def root_matrix(C, n):
    """H-matrix of the (n-1)-th root from the coefficient matrix ``C`` (batched).

    Returns ``(G, e)`` with ``e`` the eigenvalues of ``C / (n-1)!``.  Positivity
    is the caller's business.
    """
    M = C / math.factorial(n - 1)
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    e, U = np.linalg.eigh(M)
    logdet = np.sum(np.log(np.abs(e)), axis=-1, keepdims=True) / (n - 1)
    g = np.exp(logdet) / e
    G = np.einsum("...ij,...j,...kj->...ik", U, g, np.conj(U))
    return G, e


def _positivity(e, where=""):
    emax = np.max(e, axis=-1)
    emin = np.min(e, axis=-1)
    bad = emin <= EIG_RTOL * np.abs(emax)
    if np.any(bad):
        worst = float(np.min(emin))
        raise PositivityError(f"form not positive{where}: min eigenvalue {worst:.3e}", worst)


def root_n_minus_1(omega0: MetricPoint, G: PointForm) -> MetricPoint:
    """The positive (1,1)-form ``gamma`` with ``gamma^(n-1) = G``."""
    n = G.n
    if n < 2:
        raise DegreeError("root needs n >= 2")
    C = _theta_nn_matrix(G, omega0)
    scale = max(1.0, float(np.max(np.abs(C))))
    if np.max(np.abs(C - C.conj().T)) > 1e-10 * scale:
        raise PositivityError("form is not real", None)
    Gm, e = root_matrix(C, n)
    _positivity(e)
    # back to the ambient frame: H_dz = Pi^T G conj(Pi) with Pi = P^{-1}
    if omega0 is not None:
        Pi = np.linalg.inv(omega0.frame().P)
        Gm = Pi.T @ Gm @ np.conj(Pi)
    return MetricPoint(n, Gm)


def det_relation_check(G: PointForm, omega0: MetricPoint | None = None):
    n = G.n
    C = _theta_nn_matrix(G, omega0)
    Gm, e = root_matrix(C, n)
    _positivity(e)
    lhs = float(np.real(np.linalg.det(Gm)))
    rhs = float(np.real(np.linalg.det(C))) ** (1.0 / (n - 1)) / math.factorial(n - 1) ** (n / (n - 1))
    return lhs, rhs


def trace_relative(G: PointForm, G2: PointForm, omega0: MetricPoint | None = None) -> complex:
    """``tr(A^{-1} A')`` of the coefficient matrices of ``G`` and ``G2``."""
    A = _theta_nn_matrix(G, omega0)
    A2 = _theta_nn_matrix(G2, omega0)
    return complex(np.trace(np.linalg.solve(A, A2)))


def trace_star_two_metrics(omega: MetricPoint, gamma: MetricPoint, G: PointForm):
    """Both sides of ``tr_g(*_g G) = <g, *_w G>_w / (g^n/w^n)``."""
    lhs = lefschetz_contract(gamma, hodge_star(gamma, G))
    ratio = gamma.det() / omega.det()
    rhs = inner_product(omega, gamma.form, hodge_star(omega, G)) / ratio
    return complex(lhs).real, complex(rhs).real
