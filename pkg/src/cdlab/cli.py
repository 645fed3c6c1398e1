"""
``cdlab``: batch front-end for scenario files.

Subcommands
-----------
atom        kernel values, purity defect and pairing for the config's atoms
curvature   line-bundle curvature at ``--at RE IM`` (plus the quotient
            curvature and the additivity residual)
diagnose    identities sweep and similarity diagnostics; writes report.json,
            defect.csv, green_scan.csv, carleson.csv and identities.csv
modulemap   Theta sup-norm, right-invertibility margin, residual-vs-L table
corpus      list the built-in scenarios (``--out DIR`` writes their configs)

Exit codes: 0 Similar (or success), 1 NotSimilar, 2 Inconclusive,
64 malformed config, 70 evaluation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
import traceback
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .atoms import (AtomSpec, c_operator_pairing, kernel_eval, kernel_inner_products,
                    purity_defect)
from .bundles import (curvature_additivity_check, curvature_line, curvature_matrix_fd)
from .diagnostics import (INCONCLUSIVE, NOT_SIMILAR, SIMILAR, DiskGrid, Thresholds,
                          diagnose)
from .module_maps import (adjoint_on_kernels_check, intertwining_table,
                          right_invertibility_margin, theta_sup_norm)
from .projections import (corollary_c2_check, dbar_pi_hs_norm_line, identity_tolerance,
                          projection_identities_check)
from .scenarios import (ConfigError, Scenario, corpus_configs, format_config, load_config,
                        scenario_corpus, sweep_points)

EXIT_CODES = {SIMILAR: 0, NOT_SIMILAR: 1, INCONCLUSIVE: 2}
EXIT_CONFIG = 64
EXIT_FAILURE = 70


class EvaluationError(RuntimeError):
    pass


def _c(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _versions() -> dict:
    return {"cdlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# --------------------------------------------------------------------------
# analyses; each returns a JSON-ready dict (and optionally CSV rows)

def analysis_atom(atom: AtomSpec, w: complex = 0.5 + 0j) -> dict:
    norm2, pair, dnorm2 = kernel_inner_products(atom, w)
    ls = [1, 5, 10, 20, 40]
    return {
        "atom": atom.to_dict(),
        "w": _c(w),
        "kernel_diagonal": float(np.real(kernel_eval(atom, w, w))),
        "kernel_inner_products": {"norm2": float(np.real(norm2)), "pairing": _c(pair),
                                  "dnorm2": float(np.real(dnorm2))},
        "purity_defect": {str(l): float(np.real(purity_defect(atom, l, w, w))) for l in ls},
        "c_operator_pairing": float(np.real(c_operator_pairing(atom, w, w))),
        "inverse_kernel": float(np.real(1.0 / kernel_eval(atom, w, w))),
    }


def analysis_curvature(sc: Scenario, atom: AtomSpec, w: complex, h: float) -> dict:
    model = sc.model(atom)
    line = curvature_line(atom, w, h)
    out = {"w": _c(w), "h": h, "line_curvature": float(line),
           "dbar_pi_hs_norm_line": float(dbar_pi_hs_norm_line(atom, w))}
    if atom.family == "power":
        out["closed_form"] = float(-atom.alpha / (1 - abs(w) ** 2) ** 2)
    k = curvature_matrix_fd(model, w, h, r_max=atom.r_max)
    out["quotient_curvature"] = [[_c(z) for z in row] for row in np.atleast_2d(k)]
    out["additivity_residual"] = float(curvature_additivity_check(model, w, h))
    return out


def analysis_identities(sc: Scenario, atom: AtomSpec, h: float) -> tuple[dict, list]:
    model = sc.model(atom)
    frame = sc.frame
    pts = sweep_points(30)
    rows = []
    for w in pts:
        fd = float(curvature_line(atom, w, h, method="fd"))
        closed = float(-atom.alpha / (1 - abs(w) ** 2) ** 2) if atom.family == "power" else fd
        dcurv = float(dbar_pi_hs_norm_line(atom, w))
        rows.append({
            "w_re": w.real, "w_im": w.imag, "r": abs(w),
            "curvature_fd": fd, "curvature_closed": closed,
            "curvature_error": abs(fd - closed),
            "dcurv_residual": abs(dcurv - abs(closed)),
            "additivity_residual": float(curvature_additivity_check(model, w, h)),
            "c2_residual": corollary_c2_check(model, w, h),
            "pi1": np.nan, "pi2": np.nan, "pi3": np.nan,
        })
    for row, w in zip(rows, pts):
        row["pi1"], row["pi2"], row["pi3"] = projection_identities_check(frame, w, h)
    tol = identity_tolerance(frame, sc.tolerances["identity_tolerance"])
    summary = {
        "points": len(rows),
        "max_curvature_rel_error": max(r["curvature_error"] / max(1.0, abs(r["curvature_closed"]))
                                       for r in rows),
        "max_dcurv_residual": max(r["dcurv_residual"] for r in rows),
        "max_additivity_residual": max(r["additivity_residual"] for r in rows),
        "max_c2_residual": max(r["c2_residual"] for r in rows),
        "max_projection_residual": max(max(r["pi1"], r["pi2"], r["pi3"]) for r in rows),
        "identity_tolerance": tol,
    }
    return summary, rows


def analysis_diagnostics(sc: Scenario, atom: AtomSpec, h: float, r_max: float,
                         depth: int) -> tuple[dict, object]:
    grid = DiskGrid(sc.grid["J"], r_max)
    th = Thresholds(slope_threshold=sc.tolerances["slope_threshold"],
                    green_tolerance=sc.tolerances["green_tolerance"])
    depths = tuple(range(min(4, depth), depth + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = diagnose(sc.model(atom), grid, h, th, depths=depths)
    out = report.to_dict()
    out["grid"] = grid.to_dict()
    out["thresholds"] = th.to_dict()
    return out, report


def analysis_modulemap(sc: Scenario, atom: AtomSpec, r_max: float,
                       orders=(10, 20, 40, 60)) -> tuple[dict, list]:
    model = sc.model(atom)
    grid = DiskGrid(sc.grid["J"], r_max)
    table = intertwining_table(model, orders)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        adj = {str(L): adjoint_on_kernels_check(model, 0.5, 8, L) for L in (20, 40, 60)}
    out = {
        "theta_sup_norm": theta_sup_norm(model, grid),
        "right_invertibility_margin": right_invertibility_margin(model, grid),
        "adjoint_on_kernels": {"w": _c(0.5), "residual_by_L": adj},
        "intertwining": [{"L": L, "residual": r, "annihilation": a, "norm": nrm}
                         for L, r, a, nrm in table],
    }
    return out, table


# --------------------------------------------------------------------------
# output helpers

def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                             for x in row])


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _clean(obj):
    # NaN/inf are not JSON; report them as null
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_clean(json.loads(json.dumps(report, default=_json_default))),
                      sort_keys=True, indent=2) + "\n"


# --------------------------------------------------------------------------
# subcommands

def _point(args) -> complex:
    return complex(args.at[0], args.at[1]) if args.at else 0.5 + 0j


def cmd_atom(sc: Scenario, args) -> tuple[int, dict]:
    w = _point(args)
    res = {a.label: analysis_atom(a, w) for a in sc.atoms}
    if not args.json:
        for label, r in res.items():
            print(f"{label}: k(w,w) = {r['kernel_diagonal']:.12g} at w = {w}")
            print(f"  purity defect (l=40): {r['purity_defect']['40']:.3e}")
            print(f"  C pairing: {r['c_operator_pairing']:.12g} (1/k = {r['inverse_kernel']:.12g})")
    return 0, {"atom": res}


def cmd_curvature(sc: Scenario, args) -> tuple[int, dict]:
    w = _point(args)
    res = {a.label: analysis_curvature(sc, a, w, args.h or sc.tolerances["h"]) for a in sc.atoms}
    if not args.json:
        for label, r in res.items():
            print(f"{r['line_curvature']:.12f}")
            print(f"  {label}, w = {w}; additivity residual {r['additivity_residual']:.2e}",
                  file=sys.stderr)
    return 0, {"curvature": res}


def cmd_modulemap(sc: Scenario, args) -> tuple[int, dict]:
    r_max = args.rmax or sc.grid["r_max"]
    res = {}
    for a in sc.atoms:
        out, table = analysis_modulemap(sc, a, r_max)
        res[a.label] = out
        if not args.json:
            print(f"# {sc.name} {a.label}")
            print(f"# theta_sup_norm={out['theta_sup_norm']:.12g}")
            print(f"# right_invertibility_margin={out['right_invertibility_margin']:.12g}")
            print("L,residual,annihilation,norm")
            for L, r, ann, nrm in table:
                print(f"{L},{r:.6e},{ann:.6e},{nrm:.12g}")
    return 0, {"modulemap": res}


def cmd_diagnose(sc: Scenario, args) -> tuple[int, dict]:
    h = args.h or sc.tolerances["h"]
    r_max = args.rmax or sc.grid["r_max"]
    depth = args.depth or 8
    if not 0 < r_max < 1:
        raise ConfigError("--rmax must lie in (0, 1)")
    out_dir = Path(args.out or sc.output_dir or f"cdlab-out/{sc.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    analyses, timing, verdicts = {}, {}, {}
    id_rows, defect_rows, green_rows, carl_rows = [], [], [], []
    requested = [a for a in sc.analyses if a in ("atom", "identities", "diagnostics",
                                                   "modulemap")] or ["diagnostics"]
    failed = False
    for atom in sc.atoms:
        res = {}
        for name in requested:
            t0 = time.perf_counter()
            try:
                if name == "atom":
                    res[name] = analysis_atom(atom)
                elif name == "identities":
                    res[name], rows = analysis_identities(sc, atom, h)
                    id_rows += [(atom.label, *r.values()) for r in rows]
                elif name == "diagnostics":
                    res[name], rep = analysis_diagnostics(sc, atom, h, r_max, depth)
                    verdicts[atom.label] = rep.verdict
                    if rep.defect is not None:
                        defect_rows += [(atom.label, *row) for row in rep.defect.to_rows()]
                        green_rows += [(atom.label, *row) for row in rep.green_scan.to_rows()]
                        carl_rows += [(atom.label, *row) for row in rep.carleson.to_rows()]
                elif name == "modulemap":
                    res[name], _ = analysis_modulemap(sc, atom, r_max)
            except Exception as exc:  # recorded as a structured error
                failed = True
                res[name] = {"error": type(exc).__name__, "message": str(exc),
                             "traceback": traceback.format_exc(limit=3).splitlines()[-1]}
            timing[f"{atom.label}/{name}"] = time.perf_counter() - t0
        analyses[atom.label] = res

    verdict = None
    if verdicts:
        distinct = sorted(set(verdicts.values()))
        verdict = distinct[0] if len(distinct) == 1 else INCONCLUSIVE
    report = {
        "config": sc.to_config(),
        "versions": _versions(),
        "analyses": analyses,
        "verdicts": verdicts,
        "verdict": verdict,
        "transfer_consistent": (len(set(verdicts.values())) <= 1) if verdicts else None,
        "overrides": {"h": h, "r_max": r_max, "depth": depth},
        "timing": timing,
    }
    (out_dir / "report.json").write_text(dump_report(report))
    _write_csv(out_dir / "identities.csv",
               ["atom", "w_re", "w_im", "r", "curvature_fd", "curvature_closed",
                "curvature_error", "dcurv_residual", "additivity_residual", "c2_residual",
                "pi1", "pi2", "pi3"], id_rows)
    _write_csv(out_dir / "defect.csv", ["atom", "w_re", "w_im", "r", "value"], defect_rows)
    _write_csv(out_dir / "green_scan.csv",
               ["atom", "lam_re", "lam_im", "r", "r_outer", "value"], green_rows)
    _write_csv(out_dir / "carleson.csv",
               ["atom", "depth_limit", "r_cut", "depth", "box", "ratio", "empty"], carl_rows)
    if not args.json:
        for label, v in verdicts.items():
            print(f"{sc.name} [{label}]: {v}")
            for line in analyses[label]["diagnostics"]["evidence"]:
                print(f"  {line}")
        print(f"verdict: {verdict}; report written to {out_dir / 'report.json'}")
    if failed:
        raise EvaluationError(f"one or more analyses failed; see {out_dir / 'report.json'}")
    return EXIT_CODES.get(verdict, 0), report


def cmd_corpus(args) -> tuple[int, dict]:
    corpus = scenario_corpus()
    listing = [{"name": sc.name, "expected_verdict": sc.expected,
                "atoms": [a.label for a in sc.atoms], "description": sc.description}
               for sc in corpus]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for stem, cfg in corpus_configs().items():
            (out / f"{stem}.json").write_text(format_config(cfg))
    if not args.json:
        for row in listing:
            print(f"{row['name']:24s} {str(row['expected_verdict']):12s} "
                  f"{', '.join(row['atoms'])}: {row['description']}")
    return 0, {"corpus": listing}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"cdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("atom", "kernel and purity checks"),
                       ("curvature", "curvature at a point"),
                       ("diagnose", "identities sweep and similarity diagnostics"),
                       ("modulemap", "module map residuals"),
                       ("corpus", "built-in scenarios")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--at", nargs=2, type=float, metavar=("RE", "IM"),
                       help="evaluation point")
        p.add_argument("--depth", type=int, help="deepest Carleson level (default 8)")
        p.add_argument("--rmax", type=float, help="override grid r_max")
        p.add_argument("--h", type=float, help="finite-difference step")
        p.add_argument("--json", action="store_true", help="print JSON instead of text")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "corpus":
            code, payload = cmd_corpus(args)
        else:
            if not args.config:
                raise ConfigError(f"{args.command} needs --config")
            sc = load_config(args.config)
            handler = {"atom": cmd_atom, "curvature": cmd_curvature,
                       "diagnose": cmd_diagnose, "modulemap": cmd_modulemap}[args.command]
            code, payload = handler(sc, args)
    except ConfigError as exc:
        print(f"cdlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluationError as exc:
        print(f"cdlab: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        print(f"cdlab: evaluation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.json:
        sys.stdout.write(dump_report(payload))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
