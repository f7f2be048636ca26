"""Command line front end.

Usage::

    torus-ma selftest {algebra|fields|hodge|linearize}
    torus-ma {solve|mms|hodge-decompose|cone-check|gauduchon-normalize} --config run.json

Exit status: 0 on success, 2 when the solver does not converge, 1 on error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, complex_matrix, load_config, solver_config
from .fields import (FormField, MetricField, MetricSpec, TorusGrid, apply_operator, l2_inner,
                     random_field, random_scalar, read_dump, sample_metric, set_workers, write_dump)

log = logging.getLogger("torus_ma")

COMMANDS = ("selftest", "solve", "mms", "hodge-decompose", "cone-check", "gauduchon-normalize")
EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


class Run:
    """State shared by the command implementations."""

    def __init__(self, cfg: dict, dump_dir: str | None):
        self.cfg = cfg
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self.timings: dict = {}
        self.seeds: dict = {}
        self.fields: dict = {}  # name -> real scalar array, for dumps and slices

    def timed(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t
        return _T()

    # -- construction -------------------------------------------------------
    def grid(self) -> TorusGrid:
        return TorusGrid(self.cfg["n"], self.cfg["N"])

    def metric(self, grid) -> MetricField:
        m = dict(self.cfg["metric"])
        normalize = m.pop("gauduchon_normalize", False)
        if "H" in m:
            m["H"] = complex_matrix(m["H"])
        spec = MetricSpec(**m)
        self.seeds["metric"] = spec.seed
        with self.timed("metric"):
            w = sample_metric(grid, spec)
        if normalize:
            from .cone import gauduchon_normalize
            with self.timed("gauduchon_normalize"):
                res = gauduchon_normalize(w)
            self.fields["psi"] = res.psi
            w = res.metric
        return w

    # -- outputs --------------------------------------------------------------
    def write_dumps(self):
        if self.dump_dir is None:
            return []
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        out = []
        g = self.grid()
        for name, arr in self.fields.items():
            path = self.dump_dir / f"{name}.field"
            write_dump(path, FormField.scalar(g, arr))
            out.append(str(path))
        return out

    def write_slice(self, report_path):
        spec = self.cfg.get("outputs", {}).get("csv_slice")
        if spec is None or not self.fields:
            return None
        g = self.grid()
        fixed = spec["fixed"]
        if len(fixed) != 2 * g.n:
            raise ConfigError(f"csv_slice.fixed needs {2 * g.n} entries (one per axis)")
        free = [a for a, v in enumerate(fixed) if v is None]
        if len(free) > 2:
            raise ConfigError("csv_slice leaves more than two axes free")
        idx = tuple(slice(None) if v is None else int(v) % g.N for v in fixed)
        path = spec.get("path")
        if path is None:
            if report_path is None:
                raise ConfigError("csv_slice.path is required when no report path is given")
            path = str(Path(report_path).with_suffix("")) + "_slice.csv"
        names = list(self.fields)
        cols = [self.fields[k][idx] for k in names]
        coords = g.h * np.arange(g.N)
        axis_names = [f"{'xy'[a % 2]}{a // 2 + 1}" for a in range(2 * g.n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i_{axis_names[a]}" for a in free] + [axis_names[a] for a in free] + names)
            for pos in np.ndindex(*[g.N] * len(free)):
                w.writerow(list(pos) + [f"{coords[i]:.17g}" for i in pos]
                           + [f"{c[pos]:.17g}" for c in cols])
        return path


# ---------------------------------------------------------------------------
# commands

def cmd_selftest(run: Run | None, suite: str):
    from .selftest import SUITES
    if suite not in SUITES:
        raise ConfigError(f"unknown selftest suite {suite!r}; choose from {sorted(SUITES)}")
    t = time.perf_counter()
    checks = SUITES[suite]()
    results = {"suite": suite, "checks": [c.as_dict() for c in checks]}
    ok = all(c.passed for c in checks)
    return results, (EXIT_OK if ok else EXIT_ERROR), {"selftest": time.perf_counter() - t}


def _rhs(run: Run, grid, omega):
    from .solver import mms_generate
    rhs = run.cfg.get("rhs", {"kind": "zero"})
    kind = rhs["kind"]
    info = {"kind": kind}
    phi_star = None
    if kind == "zero":
        f = np.zeros(grid.shape)
    elif kind == "explicit":
        F = read_dump(rhs["path"])
        if F.grid != grid or F.bidegree != (0, 0):
            raise ConfigError(f"{rhs['path']}: expected a function on the configured grid")
        f = F.values
    else:
        seed = rhs.get("seed", 0)
        run.seeds["mms"] = seed
        phi_star = random_scalar(grid, seed=seed, bandlimit=rhs.get("bandlimit", 2),
                                 amplitude=rhs.get("amplitude", 0.05))
        with run.timed("mms_generate"):
            f = mms_generate(omega, phi_star)
    return f, phi_star, info


def cmd_solve(run: Run):
    from .solver import gauge, newton_solve
    grid = run.grid()
    omega = run.metric(grid)
    f, phi_star, info = _rhs(run, grid, omega)
    cfg = solver_config(run.cfg)
    with run.timed("solve"):
        rep = newton_solve(omega, f, cfg)
    results = {"rhs": info, "solver": rep.summary()}
    run.fields["phi"] = rep.phi.values
    run.fields["f"] = f
    if phi_star is not None:
        ref = gauge(phi_star, "sup-zero").values
        run.fields["phi_star"] = ref
        results["mms"] = {"recovery_error_inf": float(np.max(np.abs(rep.phi.values - ref))),
                          "c_error": abs(rep.c)}
    status = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    return results, status


def cmd_mms(run: Run):
    from .operator import classical_ma_ratio
    from .solver import mms_generate
    grid = run.grid()
    omega = run.metric(grid)
    rhs = run.cfg.get("rhs", {"kind": "mms"})
    if rhs["kind"] != "mms":
        raise ConfigError("the mms command needs rhs.kind = 'mms'")
    f, phi_star, info = _rhs(run, grid, omega)
    shifted = mms_generate(omega, phi_star + 1.0)
    results = {"rhs": info, "f_inf": float(np.max(np.abs(f))),
               "gauge_invariance": float(np.max(np.abs(shifted - f)))}
    if grid.n == 2:
        results["classical_operator_defect"] = float(
            np.max(np.abs(np.exp(f) - classical_ma_ratio(omega, phi_star))))
    run.fields["f"] = f
    run.fields["phi_star"] = phi_star
    return results, EXIT_OK


def cmd_hodge(run: Run):
    from .hodge import GreenSolve, three_space_decompose
    grid = run.grid()
    omega = run.metric(grid)
    h = {"kind": "BottChern", "p": 1, "q": 1, "seed": 0, "bandlimit": 2, "strategy": "auto"}
    h.update(run.cfg.get("hodge", {}))
    run.seeds["field"] = h["seed"]
    F = random_field(grid, h["p"], h["q"], seed=h["seed"], bandlimit=h["bandlimit"])
    gs = GreenSolve(h["kind"], strategy=h["strategy"])
    with run.timed("decompose"):
        parts = three_space_decompose(gs, omega, F)
    nF = l2_inner(omega, F, F).real
    names = ("harmonic", "exact", "coexact")
    results = {
        "field": h,
        "norms": {k: math.sqrt(max(l2_inner(omega, x, x).real, 0.0)) for k, x in zip(names, parts)},
        "orthogonality": max(abs(l2_inner(omega, parts[i], parts[j])) / nF
                             for i, j in ((0, 1), (0, 2), (1, 2))),
        "reassembly": (parts[0] + parts[1] + parts[2] - F).norm_inf() / F.norm_inf(),
    }
    if (h["p"], h["q"]) == (0, 0):
        for k, x in zip(names, parts):
            run.fields[k] = x.values
    return results, EXIT_OK


def cmd_cone(run: Run):
    from .cone import (gauduchon_reconstruct, gauduchon_residual, positivity_radius,
                       ReconstructionError, t_map_defect)
    from .hodge import harmonic_project
    grid = run.grid()
    omega = run.metric(grid)
    n = grid.n
    c = {"seed": 0, "bandlimit": 2, "radius_fractions": [0.5, 2.0]}
    c.update(run.cfg.get("cone", {}))
    run.seeds["cone"] = c["seed"]
    ref = MetricField.constant(grid)
    W = omega.power(n - 1)
    out = {"gauduchon_residual": gauduchon_residual(omega)}
    with run.timed("t_map"):
        d0 = t_map_defect(W, ref)
        u = random_field(grid, n - 2, n - 1, seed=c["seed"], bandlimit=c["bandlimit"])
        v = random_field(grid, n - 1, n - 2, seed=c["seed"] + 1, bandlimit=c["bandlimit"])
        shifted = W + apply_operator("d", u) + apply_operator("db", v)
        d1 = t_map_defect(shifted, ref)
    out["sg_defect"] = d0
    out["t_representative_change"] = abs(d1 - d0)
    # harmonic directions for the flat Aeppli Laplacian are constant forms
    rng = np.random.default_rng(c["seed"])
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    from .algebra import PointForm, nn_form
    D = FormField.constant(grid, PointForm(n, n - 1, n - 1, nn_form(B + B.conj().T)))
    D = harmonic_project("Aeppli", ref, D)
    with run.timed("positivity_radius"):
        radius = positivity_radius(omega, D)
    out["positivity_radius"] = radius
    Om = harmonic_project("Aeppli", ref, W)
    probes = []
    for frac in c["radius_fractions"]:
        eps = frac * radius
        try:
            gam = gauduchon_reconstruct(omega, Om + D * eps, ref)
            probes.append({"fraction": frac, "ok": True, "gauduchon_residual": gauduchon_residual(gam)})
        except ReconstructionError as e:
            probes.append({"fraction": frac, "ok": False, "min_eigenvalue": e.min_eigenvalue})
    out["reconstruction"] = probes
    expected = all(p["ok"] == (p["fraction"] < 1) for p in probes)
    good = out["sg_defect"] < 1e-8 and out["t_representative_change"] < 1e-9 and expected \
        and all(p.get("gauduchon_residual", 0.0) < 1e-8 for p in probes)
    out["checks_passed"] = bool(good)
    return out, EXIT_OK if good else EXIT_ERROR


def cmd_gauduchon(run: Run):
    from .cone import gauduchon_normalize
    grid = run.grid()
    cfg = dict(run.cfg)
    cfg["metric"] = {k: v for k, v in cfg["metric"].items() if k != "gauduchon_normalize"}
    run.cfg = cfg
    omega0 = run.metric(grid)
    with run.timed("gauduchon_normalize"):
        res = gauduchon_normalize(omega0)
    run.fields["psi"] = res.psi
    return {"residual": res.residual, "psi_min": float(res.psi.min()),
            "psi_max": float(res.psi.max()), "psi_mean": float(res.psi.mean()),
            "iterations": res.iterations}, EXIT_OK


_DISPATCH = {"solve": cmd_solve, "mms": cmd_mms, "hodge-decompose": cmd_hodge,
             "cone-check": cmd_cone, "gauduchon-normalize": cmd_gauduchon}


def build_parser():
    ap = argparse.ArgumentParser(prog="torus-ma", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("suite", nargs="?", help="selftest suite: algebra, fields, hodge or linearize")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="report path (overrides outputs.report)")
    ap.add_argument("--dump-fields", dest="dump_fields", help="directory for binary field dumps")
    ap.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    set_workers(args.threads)
    t0 = time.perf_counter()
    report = {"command": args.command, "version": __version__, "threads": args.threads,
              "python": platform.python_version(), "numpy": np.__version__}
    report_path = args.out
    try:
        if args.command == "selftest":
            if args.suite is None:
                raise ConfigError("selftest needs a suite: algebra, fields, hodge or linearize")
            results, status, timings = cmd_selftest(None, args.suite)
            report.update(config=None, seeds={}, timings=timings)
        else:
            if args.suite is not None:
                raise ConfigError(f"unexpected argument {args.suite!r}")
            if args.config is None:
                raise ConfigError(f"{args.command} needs --config")
            cfg = load_config(args.config)
            report_path = report_path or cfg.get("outputs", {}).get("report")
            dump_dir = args.dump_fields or cfg.get("outputs", {}).get("dump_dir")
            run = Run(cfg, dump_dir)
            results, status = _DISPATCH[args.command](run)
            report.update(config=load_config(args.config), seeds=run.seeds, timings=run.timings)
            report["dumps"] = run.write_dumps()
            report["csv_slice"] = run.write_slice(report_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # reported, never silent
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    report["timings"]["total"] = time.perf_counter() - t0
    report["results"] = results
    report["exit_status"] = status
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        with open(report_path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if status == EXIT_NONCONVERGED:
        print("solver did not converge; see report", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
