"""Command-line front end: ``fracbasis oga`` and ``fracbasis solve <family>``.

Exit status: 0 on success, 1 for invalid configuration, 2 when a Krylov
iteration breaks down, 3 for file I/O failures.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy

from . import rational as ra
from .errors import FracbasisError, ParseError, SolverBreakdown
from .precond import KINDS, PreconditionerSpec
from .problems import build_problem, custom_problem, discretization_error
from .rcgbm import default_plan, default_spec, error_table, reference_solve, solve_fractional
from .sparse import norm, read_matrix_market, read_vector, write_vector

log = logging.getLogger("fracbasis")

EXIT_OK, EXIT_CONFIG, EXIT_BREAKDOWN, EXIT_IO = 0, 1, 2, 3
FAMILIES = ("cube", "sphere", "graph", "custom")
CSV_HEADER = ("i", "t", "c", "err_abs", "err_rel")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for solver breakdown here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def fmt(x):
    """Fixed 15-significant-digit decimal used in every CSV cell."""
    return f"{x:.14e}"


@dataclass
class RunConfig:
    command: str
    family: str | None = None
    level: int | None = None
    n: int | None = None
    seed: int = 0
    matrix: str | None = None
    mass: str | None = None
    rhs: str | None = None
    lam: float | None = None
    rational: str | None = None
    fit_terms: int | None = None
    exponent: float = 0.5
    epsilon: float = 1e-8
    hd: float = 5e-5
    t_cap: float = 5.0
    rule: str = "strided"
    terms: int = 20
    m: int | None = None
    d: float | None = None
    shift_s: float | None = None
    precond: str | None = None
    cycle: str | None = None
    inner_tol: float = 1e-12
    inner_method: str = "cg"
    two_preconds: bool = False
    split: int = 10
    reference: bool = False
    ref_tol: float = 1e-12
    out: str | None = None
    report: str | None = None
    summary: str | None = None
    save_solution: str | None = None
    save_reference: str | None = None

    def validate(self):
        if self.command == "oga":
            if not 0 < self.exponent < 1:
                raise ConfigError(f"--s must lie in (0, 1), got {self.exponent}")
            if self.terms < 1:
                raise ConfigError(f"--terms must be positive, got {self.terms}")
            if not 0 < self.epsilon < 1e-3:
                raise ConfigError(f"--epsilon must lie in (0, 1e-3), got {self.epsilon}")
            return self
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        custom_only = {"--matrix": self.matrix, "--mass": self.mass, "--rhs": self.rhs,
                       "--lambda": self.lam}
        if self.family == "custom":
            for flag in ("--matrix", "--rhs", "--lambda"):
                if custom_only[flag] is None:
                    raise ConfigError(f"custom problems need {flag}")
            if not self.lam > 0:
                raise ConfigError(f"--lambda must be positive, got {self.lam}")
            for path in (self.matrix, self.mass, self.rhs):
                if path is not None and not os.path.isfile(path):
                    raise ConfigError(f"no such file: {path}")
        else:
            given = [k for k, v in custom_only.items() if v is not None]
            if given:
                raise ConfigError(f"{', '.join(given)} only apply to the custom family")
        if self.level is not None and self.family not in ("cube", "sphere"):
            raise ConfigError("--level applies to cube and sphere only")
        if self.n is not None and self.family != "graph":
            raise ConfigError("--n applies to graph only")
        if self.rational is not None and self.fit_terms is not None:
            raise ConfigError("--rational and --fit are mutually exclusive")
        if self.rational is not None and not os.path.isfile(self.rational):
            raise ConfigError(f"no such file: {self.rational}")
        if self.m is not None and self.m < 1:
            raise ConfigError(f"--m must be positive, got {self.m}")
        if self.d is not None and self.d < 0:
            raise ConfigError(f"--d must be >= 0, got {self.d}")
        if self.precond is not None and self.precond not in KINDS:
            raise ConfigError(f"--precond must be one of {KINDS}")
        if self.precond == "mg" and self.family != "cube":
            raise ConfigError("geometric multigrid needs the structured cube grid")
        spec_sigma = self.shift_s if self.shift_s is not None else (1.0 if self.family == "sphere" else 0.0)
        d = self.d if self.d is not None else (2.0 if self.family == "sphere" else 1.0)
        if spec_sigma == d:
            raise ConfigError(f"preconditioner shift {spec_sigma} must differ from d")
        if self.save_reference and not self.reference:
            raise ConfigError("--save-reference needs --reference")
        return self


def build_parser():
    parser = _Parser(prog="fracbasis", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    oga = sub.add_parser("oga", help="fit a sum-of-poles approximant of z**-s")
    oga.add_argument("--s", type=float, default=0.5, dest="exponent")
    oga.add_argument("--terms", type=int, default=20)
    oga.add_argument("--epsilon", type=float, default=1e-8)
    oga.add_argument("--hd", type=float, default=5e-5, help="dictionary grid step; shifts are (j*hd)**2")
    oga.add_argument("--t-cap", type=float, default=5.0, help="largest j*hd in the dictionary")
    oga.add_argument("--rule", choices=("strided", "gauss"), default="strided",
                     help="quadrature weighting (strided reproduces the published table)")
    oga.add_argument("--out", help="write the approximant document here")

    solve = sub.add_parser("solve", help="apply A**-s to a load vector")
    solve.add_argument("family", choices=FAMILIES)
    solve.add_argument("--level", type=int)
    solve.add_argument("--n", type=int)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--matrix")
    solve.add_argument("--mass")
    solve.add_argument("--rhs")
    solve.add_argument("--lambda", type=float, dest="lam")
    solve.add_argument("--rational", help="approximant document (default: shipped 20-term table)")
    solve.add_argument("--fit", type=int, dest="fit_terms", metavar="TERMS",
                       help="fit an approximant inline instead of loading one")
    solve.add_argument("--exponent", type=float, default=0.5, help="s for --fit")
    solve.add_argument("--m", type=int)
    solve.add_argument("--d", type=float)
    solve.add_argument("--shift-s", type=float, dest="shift_s", help="preconditioner shift")
    solve.add_argument("--precond-shift", type=float, dest="precond_shift", help="same as --shift-s")
    solve.add_argument("--precond", choices=KINDS)
    solve.add_argument("--cycle", choices=("V", "W"))
    solve.add_argument("--inner-tol", type=float, default=1e-12)
    solve.add_argument("--inner-method", choices=("cg", "direct"), default="cg")
    solve.add_argument("--two-preconds", action="store_true")
    solve.add_argument("--split", type=int, default=10, help="shifts kept on the first basis with --two-preconds")
    solve.add_argument("--reference", action="store_true", help="also solve every shift to 1e-12")
    solve.add_argument("--tol", "--ref-tol", type=float, default=1e-12, dest="ref_tol",
                       help="relative residual target of the reference solves")
    solve.add_argument("--report", help="per-shift CSV")
    solve.add_argument("--summary", help="summary JSON")
    solve.add_argument("--save-solution")
    solve.add_argument("--save-reference")
    return parser


def config_from_args(args):
    values = vars(args).copy()
    values.pop("verbose", None)
    alias = values.pop("precond_shift", None)
    if alias is not None:
        if values.get("shift_s") is not None and values["shift_s"] != alias:
            raise ConfigError("--shift-s and --precond-shift disagree")
        values["shift_s"] = alias
    known = set(RunConfig.__dataclass_fields__)
    return RunConfig(**{k: v for k, v in values.items() if k in known})


# -- runners -------------------------------------------------------------------

def run_oga(cfg, out=None):
    out = out or sys.stdout
    grid = ra.build_grid(cfg.epsilon, cfg.rule)
    dictionary = ra.build_dictionary(cfg.epsilon, cfg.hd, cfg.t_cap)
    clock = time.perf_counter()
    r = ra.oga_fit(cfg.exponent, cfg.terms, grid, dictionary)
    elapsed = time.perf_counter() - clock
    out.write(f"{'i':>3} {'c_i':>24} {'t_i':>24}\n")
    for i, (c, t) in enumerate(r.terms, 1):
        out.write(f"{i:>3} {c:>24.15e} {t:>24.15e}\n")
    out.write(f"max error on [1e-6, 1]: {r.achieved_max_error:.15e}\n")
    out.write(f"fit time: {elapsed:.1f} s\n")
    if cfg.out:
        ra.save(r, cfg.out)
    return r


def load_rational(cfg):
    if cfg.fit_terms is not None:
        grid = ra.build_grid(cfg.epsilon, cfg.rule)
        return ra.oga_fit(cfg.exponent, cfg.fit_terms, grid, ra.build_dictionary(cfg.epsilon, cfg.hd, cfg.t_cap))
    if cfg.rational is not None:
        return ra.load(cfg.rational)
    return ra.load_fixture()


def load_problem(cfg):
    if cfg.family == "custom":
        A = read_matrix_market(cfg.matrix)
        M = read_matrix_market(cfg.mass) if cfg.mass else None
        try:
            f = read_vector(cfg.rhs)
        except ValueError as exc:
            raise ParseError(str(exc), cfg.rhs) from exc
        return custom_problem(A, f, cfg.lam, M)
    return build_problem(cfg.family, level=cfg.level, n=cfg.n, seed=cfg.seed)


def make_plan(cfg, problem, r):
    base = default_spec(problem.family)
    kind = cfg.precond or base.kind
    spec = PreconditionerSpec(kind=kind, sigma=base.sigma if cfg.shift_s is None else cfg.shift_s,
                              cycle=cfg.cycle or base.cycle, inner_tol=cfg.inner_tol,
                              inner_method=cfg.inner_method)
    return default_plan(problem, r, m=cfg.m, d=cfg.d, spec=spec, two_preconds=cfg.two_preconds,
                        split=cfg.split)


@dataclass
class ReportBundle:
    rows: list
    summary: dict
    solution: np.ndarray
    reference: np.ndarray | None = None


def run_solve(cfg):
    r = load_rational(cfg)
    problem = load_problem(cfg)
    plan = make_plan(cfg, problem, r)
    report = solve_fractional(problem, r, plan)
    summary = {
        "family": problem.family,
        "params": problem.params,
        "size": problem.size,
        "lambda": problem.lam,
        "s": r.s,
        "terms": len(r),
        "rational_max_error": r.achieved_max_error,
        "norm": problem.norm.kind,
        "seed": cfg.seed if problem.family == "graph" else None,
        "plan": [{"shifts": [i + 1 for i in entry.indices], "preconditioner": entry.spec.label(),
                  "d": entry.d, "m_requested": entry.m, "m": basis.m, "truncated": basis.truncated,
                  "orthonormality_defect": basis.orthonormality_defect()}
                 for entry, basis in zip(plan.entries, report.bases)],
        "fallback_shifts": [i + 1 for i, flag in enumerate(report.fallbacks) if flag],
        "errors": {},
        "timings": dict(report.timings),
        "versions": {"fracbasis": _version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    rows = []
    ref_solution = None
    if cfg.reference:
        clock = time.perf_counter()
        ref = reference_solve(problem, r, tol=cfg.ref_tol)
        summary["timings"]["reference"] = time.perf_counter() - clock
        table = error_table(ref, report, r, problem.norm)
        rows = table.rows
        ref_solution = ref.solution
        summary["errors"]["rbm_vs_reference"] = {"abs": table.total_abs, "rel": table.total_rel}
        summary["reference_unconverged_shifts"] = [i + 1 for i, ok in enumerate(ref.converged) if not ok]
    if problem.exact is not None:
        to_exact, to_discrete = discretization_error(problem, report.solution)
        summary["errors"]["rbm_vs_exact"] = to_exact
        if to_discrete is not None:
            summary["errors"]["rbm_vs_discrete_exact"] = to_discrete
        if ref_solution is not None:
            summary["errors"]["reference_vs_exact"] = discretization_error(problem, ref_solution)[0]
    summary["solution_norm"] = norm(report.solution, problem.norm)
    return ReportBundle(rows, summary, report.solution, ref_solution)


def _version():
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed as a distribution
        return "unknown"


def csv_text(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row["i"], fmt(row["t"]), fmt(row["c"]), fmt(row["err_abs"]), fmt(row["err_rel"])])
    return buf.getvalue()


def read_csv_report(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{"i": int(row["i"]), **{k: float(row[k]) for k in CSV_HEADER[1:]}} for row in reader]


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_reports(bundle, cfg, out=None):
    out = out or sys.stdout
    if cfg.report:
        _write(cfg.report, csv_text(bundle.rows))
    if cfg.summary:
        _write(cfg.summary, json.dumps(_jsonable(bundle.summary), indent=2) + "\n")
    for path, vec in ((cfg.save_solution, bundle.solution), (cfg.save_reference, bundle.reference)):
        if path:
            try:
                write_vector(path, vec)
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    s = bundle.summary
    out.write(f"{s['family']} N={s['size']} lambda={s['lambda']:.6g} s={s['s']:g}\n")
    for entry in s["plan"]:
        note = " (truncated)" if entry["truncated"] else ""
        out.write(f"  basis {entry['preconditioner']} d={entry['d']:g} m={entry['m']}{note} "
                  f"for {len(entry['shifts'])} shifts\n")
    for key, value in s["errors"].items():
        if isinstance(value, dict):
            out.write(f"  {key}: abs {value['abs']:.6e} rel {value['rel']:.6e}\n")
        else:
            out.write(f"  {key}: {value:.6e}\n")
    out.write("  time: " + ", ".join(f"{k} {v:.3f}s" for k, v in s["timings"].items()) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run(cfg, out=None):
    """Execute a validated configuration; returns ``(exit_code, bundle_or_None)``."""
    try:
        cfg.validate()
        if cfg.command == "oga":
            run_oga(cfg, out)
            return EXIT_OK, None
        bundle = run_solve(cfg)
        emit_reports(bundle, cfg, out)
        return EXIT_OK, bundle
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, None
    except SolverBreakdown as exc:
        log.error("solver breakdown: %s", exc)
        return EXIT_BREAKDOWN, None
    except ParseError as exc:
        log.error("cannot parse approximant: %s", exc)
        return EXIT_IO, None
    except FracbasisError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, None
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO, None


def _apply_thread_cap():
    raw = os.environ.get("FRACBASIS_THREADS", "0")
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"FRACBASIS_THREADS must be an integer, got {raw!r}") from None
    if count < 0:
        raise ConfigError(f"FRACBASIS_THREADS must be >= 0, got {count}")
    if count:
        import numba
        numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_cap()
        cfg = config_from_args(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    code, _ = run(cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
