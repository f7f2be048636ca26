"""Quick residual checks shared by the command line and the test suite.

Every check returns a list of :class:`Check` records; a suite passes when each
residual is below its threshold.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import algebra as alg
from .fields import (MetricField, MetricSpec, TorusGrid, adjoint, apply_operator, l2_inner,
                     random_field, random_scalar, sample_metric)
from .hodge import green_apply, harmonic_project, laplacian_apply, three_space_decompose
from .operator import (linearize_apply, linearize_apply_forms, ma_state, principal_part_apply,
                       rho_lambda_tilde)

__all__ = ["Check", "random_metric_point", "random_real_form", "algebra_checks",
           "fields_checks", "hodge_checks", "linearize_checks", "fd_order", "SUITES"]


@dataclass
class Check:
    name: str
    residual: float
    threshold: float
    lower_bound: bool = False  # the value must reach the threshold instead

    @property
    def passed(self) -> bool:
        if self.lower_bound:
            return bool(self.residual >= self.threshold)
        return bool(self.residual < self.threshold)

    def as_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def random_metric_point(n, rng) -> alg.MetricPoint:
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return alg.MetricPoint(n, A @ A.conj().T / n + 0.5 * np.eye(n))


def random_real_form(n, p, rng) -> alg.PointForm:
    c = rng.normal(size=alg.dim(n, p, p)) + 1j * rng.normal(size=alg.dim(n, p, p))
    u = alg.PointForm(n, p, p, c)
    return (u + u.conj()) * 0.5


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def algebra_checks(seeds=range(20), dims=(2, 3, 4)):
    """Pointwise identities on random metrics and forms; residuals are relative."""
    worst = {}

    def put(name, r):
        worst[name] = max(worst.get(name, 0.0), float(r))

    for n in dims:
        fn1, fn2 = math.factorial(n - 1), math.factorial(n - 2)
        for s in seeds:
            rng = np.random.default_rng(1000 * n + s)
            w = random_metric_point(n, rng)
            wf = w.form
            # star involution on every bidegree
            for p in range(n + 1):
                for q in range(n + 1):
                    c = rng.normal(size=alg.dim(n, p, q)) + 1j * rng.normal(size=alg.dim(n, p, q))
                    u = alg.PointForm(n, p, q, c)
                    ss = alg.hodge_star(w, alg.hodge_star(w, u))
                    put("star_involution", (ss - u * (-1) ** (p + q)).norm_inf() / u.norm_inf())
            wn2 = alg.power(wf, n - 2) / fn2
            alpha = random_real_form(n, 1, rng)
            prim, _ = alg.lefschetz_decompose_11(w, alpha)
            scale = alpha.norm_inf()
            put("primitive_star", (alg.hodge_star(w, prim) + alg.wedge(prim, wn2)).norm_inf() / scale)
            put("lefschetz_primitive", abs(alg.lefschetz_contract(w, prim)) / scale)
            lhs = alg.hodge_star(w, alg.wedge(alpha, wn2))
            rhs = wf * alg.lefschetz_contract(w, alpha) - alpha
            put("star_alpha_wedge", (lhs - rhs).norm_inf() / scale)
            wn1 = alg.power(wf, n - 1) / fn1
            G = random_real_form(n, n - 1, rng)
            put("trace_star", _rel(alg.trace_relative(wn1, G).real,
                                   alg.lefschetz_contract(w, alg.hodge_star(w, G))))
            put("trace_ddbar", _rel(alg.trace_relative(wn1, alg.wedge(alpha, wn2)).real,
                                    (n - 1) * alg.lefschetz_contract(w, alpha)))
            put("star_omega_power", (alg.hodge_star(w, wn1) - wf).norm_inf() / wf.norm_inf())
            # two metrics
            gam = random_metric_point(n, rng)
            a, b = alg.trace_star_two_metrics(w, gam, G)
            put("trace_star_two_metrics", _rel(a, b))
            # roots: positive Gamma built as a power, recovered with two backgrounds
            Gp = alg.power(gam.form, n - 1)
            for bgd in (None, w):
                r = alg.root_n_minus_1(bgd if bgd is not None else alg.MetricPoint.identity(n), Gp)
                put("root_roundtrip", np.max(np.abs(r.H - gam.H)) / np.max(np.abs(gam.H)))
            lhs, rhs = alg.det_relation_check(Gp)
            put("det_relation", _rel(lhs, rhs))
    thresholds = {"star_involution": 1e-10, "primitive_star": 1e-10, "lefschetz_primitive": 1e-10,
                  "star_alpha_wedge": 1e-10, "trace_star": 1e-10, "trace_ddbar": 1e-10,
                  "star_omega_power": 1e-10, "trace_star_two_metrics": 1e-10,
                  "root_roundtrip": 1e-10, "det_relation": 1e-10}
    return [Check(k, worst[k], thresholds[k]) for k in thresholds]


def _bidegrees(n):
    return [(p, q) for p in range(n + 1) for q in range(n + 1)]


def fields_checks(cases=((2, 8), (3, 4)), seed=0):
    """Nilpotency, anticommutation and exact weighted adjointness."""
    worst = {}

    def put(name, r):
        worst[name] = max(worst.get(name, 0.0), float(r))

    for n, N in cases:
        g = TorusGrid(n, N)
        metrics = [MetricField.constant(g),
                   sample_metric(g, MetricSpec("perturbed", seed=seed, amplitude=0.3, bandlimit=1))]
        for p, q in _bidegrees(n):
            F = random_field(g, p, q, seed=seed + 7 * p + q, bandlimit=2)
            scale = max(F.norm_inf(), 1e-300) * N ** 2
            for a, b in (("d", "d"), ("db", "db")):
                x = apply_operator(a, F)
                y = None if x is None else apply_operator(b, x)
                if y is not None:
                    put("nilpotent", y.norm_inf() / scale)
            x = apply_operator("d", F)
            y = None if x is None else apply_operator("db", x)
            if y is not None:
                z = apply_operator("d", apply_operator("db", F))
                put("anticommute", (y + z).norm_inf() / scale)
            for m in metrics:
                for op, adj in (("d", "ds"), ("db", "dbs")):
                    dF = apply_operator(op, F)
                    if dF is None:
                        continue
                    G = random_field(g, dF.p, dF.q, seed=seed + 101, bandlimit=2)
                    lhs = l2_inner(m, dF, G)
                    rhs = l2_inner(m, F, adjoint(m, adj)(G))
                    put("weighted_adjoint", abs(lhs - rhs) / max(abs(lhs), 1.0))
    th = {"nilpotent": 1e-11, "anticommute": 1e-11, "weighted_adjoint": 1e-11}
    return [Check(k, worst.get(k, 0.0), th[k]) for k in th]


def hodge_checks(n=2, N=8, seed=0):
    """Green identity and three-space orthogonality for a constant metric."""
    g = TorusGrid(n, N)
    H = np.eye(n) + 0.2 * (np.eye(n, k=1) * 1j + np.eye(n, k=-1) * -1j)
    w = MetricField(g, H)
    worst = {}

    def put(name, r):
        worst[name] = max(worst.get(name, 0.0), float(r))

    for kind in ("BottChern", "Aeppli", "DdbarBar", "Dolbeault"):
        for p, q in _bidegrees(n):
            F = random_field(g, p, q, seed=seed + 3 * p + q, bandlimit=3)
            G = green_apply(kind, w, F)
            h = harmonic_project(kind, w, F)
            put("green_identity", (laplacian_apply(kind, w, G) + h - F).norm_inf() / F.norm_inf())
    for kind in ("BottChern", "Aeppli"):
        F = random_field(g, 1, 1, seed=seed + 11, bandlimit=3)
        h, e, c = three_space_decompose(kind, w, F)
        nF = l2_inner(w, F, F).real
        put("orthogonality", max(abs(l2_inner(w, x, y)) / nF for x, y in ((h, e), (h, c), (e, c))))
        put("reassembly", (h + e + c - F).norm_inf() / F.norm_inf())
    th = {"green_identity": 1e-9, "orthogonality": 1e-9, "reassembly": 1e-9}
    return [Check(k, worst[k], th[k]) for k in th]


def fd_order(state_fn, phi, h, eps=(1e-2, 1e-3, 1e-4)):
    """Observed order of ``|C(phi + t h) - C(phi) - t dC(h)|`` in ``t``."""
    st = state_fn(phi)
    lin = linearize_apply(st, h)
    errs = [np.max(np.abs(state_fn(phi + t * h).Cval - st.Cval - t * lin)) for t in eps]
    slope = np.polyfit(np.log(eps), np.log(errs), 1)[0]
    return float(slope), errs


def linearize_checks(cases=((2, 8), (3, 6)), seed=0):
    """Finite-difference order, two linearizations, two routes to lambda~."""
    from .cone import gauduchon_normalize
    out = {"fd_order": math.inf, "linearize_paths": 0.0, "lambda_tilde_paths": 0.0,
           "principal_forms": 0.0}
    for n, N in cases:
        g = TorusGrid(n, N)
        w0 = sample_metric(g, MetricSpec("perturbed", seed=seed, amplitude=0.1, bandlimit=1))
        w = gauduchon_normalize(w0).metric if n > 2 else w0
        phi = random_scalar(g, seed=seed + 1, bandlimit=2, amplitude=0.05)
        h = random_scalar(g, seed=seed + 2, bandlimit=2, amplitude=1.0)
        st = ma_state(w, phi)
        a, b = linearize_apply(st, h), linearize_apply_forms(st, h)
        out["linearize_paths"] = max(out["linearize_paths"], np.max(np.abs(a - b)) / np.max(np.abs(a)))
        slope, _ = fd_order(lambda x: ma_state(st.bg, x), phi, h)
        out["fd_order"] = min(out["fd_order"], slope)
        _, _, ltA, ltB = rho_lambda_tilde(st)
        out["lambda_tilde_paths"] = max(out["lambda_tilde_paths"],
                                        np.max(np.abs(ltA - ltB)) / np.max(np.abs(ltA)))
        p1, p2 = principal_part_apply(st, h, both=True)
        out["principal_forms"] = max(out["principal_forms"], np.max(np.abs(p1 - p2)) / np.max(np.abs(p1)))
    th = {"fd_order": 1.9, "linearize_paths": 1e-10, "lambda_tilde_paths": 1e-9,
          "principal_forms": 1e-10}
    return [Check(k, float(v), th[k], k == "fd_order") for k, v in out.items()]


SUITES = {
    "algebra": algebra_checks,
    "fields": fields_checks,
    "hodge": hodge_checks,
    "linearize": linearize_checks,
}
