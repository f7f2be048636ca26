"""Independent reference implementations used to produce expected values.

Nothing here calls into the library's algebra, frames or Laplacians; the
only shared convention is the coefficient ordering of a PointForm, which
is read off ``basis`` when converting.

Forms are dicts ``{generator tuple: coefficient}`` where generators
``0..n-1`` stand for dz_j and ``n..2n-1`` for dzbar_j; a key is kept sorted
and the sign of every reordering is tracked explicitly.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# symbolic exterior algebra

def _sort_with_sign(gens):
    gens = list(gens)
    if len(set(gens)) < len(gens):
        return None, 0
    sign = 1
    for i in range(len(gens)):  # bubble sort, counting swaps
        for j in range(len(gens) - 1 - i):
            if gens[j] > gens[j + 1]:
                gens[j], gens[j + 1] = gens[j + 1], gens[j]
                sign = -sign
    return tuple(gens), sign


def wedge(a: dict, b: dict) -> dict:
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            key, s = _sort_with_sign(ka + kb)
            if key is None:
                continue
            out[key] = out.get(key, 0) + s * va * vb
    return {k: v for k, v in out.items() if v != 0}


def add(a, b, s=1.0):
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + s * v
    return out


def scale(a, s):
    return {k: s * v for k, v in a.items()}


def conj(a: dict, n: int) -> dict:
    out = {}
    for k, v in a.items():
        swapped = [g + n if g < n else g - n for g in k]
        key, s = _sort_with_sign(swapped)
        out[key] = out.get(key, 0) + s * np.conj(v)
    return out


def one_form(n, coeffs, anti=False):
    off = n if anti else 0
    return {(j + off,): c for j, c in enumerate(coeffs) if c != 0}


def substitute(a: dict, n: int, P) -> dict:
    """Rewrite ``a`` after ``dz_j -> sum_k P[j,k] dz_k`` (and the conjugate for dzbar)."""
    P = np.asarray(P)
    out = {}
    for key, v in a.items():
        term = {(): v}
        for g in key:
            if g < n:
                term = wedge(term, one_form(n, P[g]))
            else:
                term = wedge(term, one_form(n, np.conj(P[g - n]), anti=True))
        out = add(out, term)
    return out


# ---------------------------------------------------------------------------
# conversion to and from the library layout

def from_coeffs(n, p, q, coeffs):
    from torus_ma.algebra import basis
    out = {}
    for (I, J), c in zip(basis(n, p, q), coeffs):
        key = tuple(j for j in range(n) if I >> j & 1) + tuple(n + j for j in range(n) if J >> j & 1)
        if c != 0:
            out[key] = out.get(key, 0) + c
    return out


def to_coeffs(n, p, q, a: dict):
    from torus_ma.algebra import basis
    idx = {}
    for k, (I, J) in enumerate(basis(n, p, q)):
        key = tuple(j for j in range(n) if I >> j & 1) + tuple(n + j for j in range(n) if J >> j & 1)
        idx[key] = k
    c = np.zeros(len(idx), dtype=complex)
    for key, v in a.items():
        if key not in idx:
            raise ValueError(f"term {key} not of bidegree ({p},{q})")
        c[idx[key]] += v
    return c


def monomials(n, p, q):
    for I in itertools.combinations(range(n), p):
        for J in itertools.combinations(range(n, 2 * n), q):
            yield I + J


# ---------------------------------------------------------------------------
# metric quantities

def kahler_form(n, H):
    out = {}
    for j in range(n):
        for k in range(n):
            if H[j][k] != 0:
                out[(j, n + k)] = 1j * H[j][k]
    return out


def power(a, k):
    out = {(): 1.0}
    for _ in range(k):
        out = wedge(out, a)
    return out


def frame(H):
    """``Q`` with ``Q^H H Q = I`` from a Cholesky factor; dz = conj(Q) theta."""
    L = np.linalg.cholesky(np.asarray(H, dtype=complex))
    Q = np.linalg.inv(L).conj().T
    return np.conj(Q)  # P with dz = P theta


def _flat_star_basis(n, p, q):
    """``star(conj v)`` for identity-metric monomials ``v`` of type (p,q).

    Solved from ``u ^ star(conj v) = <u, v> dV`` with ``dV = omega^n / n!`` and
    the monomials orthonormal.
    """
    dv = power(kahler_form(n, np.eye(n)), n)
    (vol_key, vol), = dv.items()
    dvc = vol / math.factorial(n)
    us = list(monomials(n, p, q))
    ws = list(monomials(n, n - p, n - q))  # bidegree of star(conj v)
    M = np.zeros((len(us), len(ws)), dtype=complex)
    for a, u in enumerate(us):
        for b, w in enumerate(ws):
            M[a, b] = wedge({u: 1.0}, {w: 1.0}).get(vol_key, 0) / dvc
    Minv = np.linalg.inv(M)
    return {v: {w: Minv[c, b] for c, w in enumerate(ws) if Minv[c, b] != 0}
            for b, v in enumerate(us)}


def star(n, H, p, q, coeffs):
    """Hodge star of a (p,q)-form given by library coefficients."""
    P = frame(H)
    th = substitute(from_coeffs(n, p, q, coeffs), n, P)  # theta components
    sc = _flat_star_basis(n, q, p)
    out = {}
    for key, val in th.items():
        # key = s * conj(v) with v a (q,p) monomial, so star(key) = s * star(conj v)
        (vkey, s), = conj({key: 1.0}, n).items()
        out = add(out, scale(sc[vkey], val * np.conj(s)))
    back = substitute(out, n, np.linalg.inv(P))
    return to_coeffs(n, n - q, n - p, back)


def inner(n, H, p, q, a, b):
    P = frame(H)
    ta = substitute(from_coeffs(n, p, q, a), n, P)
    tb = substitute(from_coeffs(n, p, q, b), n, P)
    return sum(v * np.conj(tb.get(k, 0)) for k, v in ta.items())


def lefschetz(H, A):
    return np.trace(np.linalg.solve(H, A))


# ---------------------------------------------------------------------------
# Fourier-side Hodge theory for constant metrics

def _wavenumbers(N):
    k = np.fft.fftfreq(N, d=1.0 / N)
    k[N // 2] = 0.0  # Nyquist zeroed in derivative symbols
    return k


def mode_symbols(n, N, kvec):
    """(sigma_j, tau_j) for the mode with integer wavenumbers ``kvec`` (length 2n)."""
    sig, tau = [], []
    for j in range(n):
        kx, ky = kvec[2 * j], kvec[2 * j + 1]
        if abs(kx) == N // 2:
            kx = 0
        if abs(ky) == N // 2:
            ky = 0
        sig.append(0.5 * (1j * kx + ky))
        tau.append(0.5 * (1j * kx - ky))
    return sig, tau


class ModeAlgebra:
    """∂, ∂̄ and the metric weight on the full exterior algebra at one mode."""

    def __init__(self, n, H):
        self.n = n
        self.blocks = [(a, b) for a in range(n + 1) for b in range(n + 1)]
        self.keys = [m for bd in self.blocks for m in monomials(n, *bd)]
        self.index = {m: i for i, m in enumerate(self.keys)}
        self.offsets = {}
        i = 0
        for bd in self.blocks:
            d = math.comb(n, bd[0]) * math.comb(n, bd[1])
            self.offsets[bd] = slice(i, i + d)
            i += d
        self.size = i
        # Gram matrix in the library layout of each block, times det(H)
        G = np.zeros((self.size, self.size), dtype=complex)
        for bd in self.blocks:
            sl = self.offsets[bd]
            d = sl.stop - sl.start
            E = np.eye(d)
            G[sl, sl] = np.array([[inner(n, H, *bd, E[c], E[r]) for c in range(d)]
                                  for r in range(d)])
        self.G = G * np.real(np.linalg.det(H))

    def _wedge_matrix(self, coef, anti):
        n = self.n
        one = one_form(n, coef, anti=anti)
        M = np.zeros((self.size, self.size), dtype=complex)
        for bd in self.blocks:
            sl = self.offsets[bd]
            for c in range(sl.stop - sl.start):
                e = np.zeros(sl.stop - sl.start)
                e[c] = 1.0
                t = wedge(one, from_coeffs(n, *bd, e))
                if not t:
                    continue
                tb = (bd[0], bd[1] + 1) if anti else (bd[0] + 1, bd[1])
                M[self.offsets[tb], sl.start + c] = to_coeffs(n, *tb, t)
        return M

    def ops(self, sig, tau):
        return self._wedge_matrix(sig, False), self._wedge_matrix(tau, True)

    def adj(self, X):
        return np.linalg.solve(self.G, X.conj().T @ self.G)


def mode_laplacian(kind, alg_: ModeAlgebra, sig, tau):
    D, Db = alg_.ops(sig, tau)
    A = alg_.adj
    DDb = D @ Db
    if kind == "BottChern":
        X = A(D) @ Db
        return A(D) @ D + A(Db) @ Db + A(DDb) @ DDb + DDb @ A(DDb) + A(X) @ X + X @ A(X)
    if kind == "Aeppli":
        Y = D @ A(Db)
        return D @ A(D) + Db @ A(Db) + A(DDb) @ DDb + DDb @ A(DDb) + Y @ A(Y) + A(Y) @ Y
    if kind == "DdbarBar":
        return DDb @ A(DDb) + A(DDb) @ DDb
    if kind == "Dolbeault":
        return Db @ A(Db) + A(Db) @ Db
    raise ValueError(kind)


def _modes(n, N):
    for kvec in itertools.product(range(N), repeat=2 * n):
        yield [k if k <= N // 2 else k - N for k in kvec]


def spectrum(kind, n, N, H, p, q):
    """All eigenvalues of the Laplacian on (p,q)-fields over the N^{2n} grid."""
    ma = ModeAlgebra(n, np.asarray(H, dtype=complex))
    sl = ma.offsets[(p, q)]
    G = ma.G[sl, sl]
    R = np.linalg.cholesky(G)
    vals = []
    for kk in _modes(n, N):
        sig, tau = mode_symbols(n, N, kk)
        L = mode_laplacian(kind, ma, sig, tau)[sl, sl]
        # L is G-self-adjoint; R^H L R^{-H} is Hermitian with the same spectrum
        S = R.conj().T @ L @ np.linalg.inv(R.conj().T)
        vals.extend(np.linalg.eigvalsh(0.5 * (S + S.conj().T)))
    return np.sort(np.array(vals))


def smallest_positive(kind, n, N, H, p, q, rel=1e-10):
    v = spectrum(kind, n, N, H, p, q)
    return float(v[v > rel * v.max()].min())


def kernel_dimension(kind, n, N, H, p, q, rel=1e-10):
    v = spectrum(kind, n, N, H, p, q)
    return int(np.sum(v <= rel * v.max()))


def mode_green(kind, n, N, H, p, q, kvec, v):
    """Green operator on a single Fourier mode (pseudoinverse of the dense block)."""
    ma = ModeAlgebra(n, np.asarray(H, dtype=complex))
    sl = ma.offsets[(p, q)]
    sig, tau = mode_symbols(n, N, kvec)
    L = mode_laplacian(kind, ma, sig, tau)[sl, sl]
    return np.linalg.pinv(L, rcond=1e-12) @ v


# ---------------------------------------------------------------------------
# classical complex Monge-Ampere for n = 2

def spectral_ddbar(phi):
    """∂_a ∂̄_b phi for a real function on the 4-torus grid (numpy FFT)."""
    N = phi.shape[0]
    k = _wavenumbers(N)
    kk = np.meshgrid(*([k] * 4), indexing="ij")
    sig = [0.5 * (1j * kk[0] + kk[1]), 0.5 * (1j * kk[2] + kk[3])]
    tau = [0.5 * (1j * kk[0] - kk[1]), 0.5 * (1j * kk[2] - kk[3])]
    ph = np.fft.fftn(phi)
    return np.array([[np.fft.ifftn(sig[a] * tau[b] * ph) for b in range(2)] for a in range(2)])


def classical_cy_n2(H, phi):
    """``(omega + i∂∂̄phi)^2 / omega^2`` with an explicit 2x2 determinant."""
    D = spectral_ddbar(phi)
    a = H[0][0] + D[0, 0]
    b = H[0][1] + D[0, 1]
    c = H[1][0] + D[1, 0]
    d = H[1][1] + D[1, 1]
    detH = H[0][0] * H[1][1] - H[0][1] * H[1][0]
    return np.real((a * d - b * c) / detH)


def lambda_tilde_eigen(rho):
    """``1/sum_{l != j} 1/rho_l`` for each j."""
    rho = np.asarray(rho, dtype=float)
    s = np.sum(1.0 / rho)
    return 1.0 / (s - 1.0 / rho)
