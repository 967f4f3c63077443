"""Command line driver: ``istab {converge,verify,solve} --config PATH --out DIR``.

The configuration is a YAML mapping::

    preset: advdiff_exp          # hyperbolic_bey | elliptic_sine | advdiff_exp | custom
    kappa: 1.0e-3                # required for advdiff_exp and custom
    mu: 0.0                      # custom only
    alpha_rule: four_k_squared   # or {const: 5.0}
    k_list: [1, 2, 3]
    n_list: [4, 8, 16, 32]
    l: 1
    diagonal: right
    custom:                      # custom only
      u: "x*y"
      advection: ["1", "0"]
      boundary: dirichlet        # dirichlet | neumann
    solve: {k: 2, n: 8}
    verify: {dg_l: 0, alphas: [2, 5, 10, 50], infsup_n: [2, 4, 8], max_n: 8}
    outputs:
      csv: convergence.csv
      slopes: slopes.csv
      field_dump: null
      mesh_dump: null

Exit codes: 0 success, 1 configuration error, 2 solve failure,
3 verification failure. ``ISTAB_THREADS`` overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from .errors import ConfigError, InvalidArgumentError, IstabError
from .mesh import DIRICHLET, LEFT, NEUMANN, RIGHT, build_uniform_square_mesh, write_mesh_text
from .problems import (
    FOUR_K_SQUARED,
    ProblemSpec,
    advdiff_exp,
    elliptic_sine,
    exp_field,
    hyperbolic_bey,
    manufactured,
)
from .solver import solve_full
from .study import solve_case

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_VERIFY = 0, 1, 2, 3

CSV_COLUMNS = (
    "preset", "k", "l", "alpha", "n", "h_max", "dofs_facet_global",
    "err_L2", "err_A", "err_D", "err_combined",
    "rate_L2", "rate_A", "rate_combined", "conservation_defect",
)

PRESETS = ("hyperbolic_bey", "elliptic_sine", "advdiff_exp", "custom")
# values fixed by each preset; a config may restate but not change them
_FIXED = {
    "hyperbolic_bey": {"mu": 1.0, "kappa": 0.0},
    "elliptic_sine": {"mu": 0.0, "kappa": 1.0},
    "advdiff_exp": {"mu": 0.0},
    "custom": {},
}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class Outputs:
    csv: str = "convergence.csv"
    slopes: str = "slopes.csv"
    field_dump: str | None = None
    mesh_dump: str | None = None


@dataclass
class VerifyOptions:
    dg_l: int = 0
    alphas: list = field(default_factory=lambda: [2.0, 5.0, 10.0, 50.0])
    infsup_n: list = field(default_factory=lambda: [2, 4, 8])
    max_n: int = 8


@dataclass
class RunConfig:
    preset: str
    mu: float | None = None
    kappa: float | None = None
    alpha_rule: object = None  # FOUR_K_SQUARED or a float
    k_list: list = field(default_factory=lambda: [1, 2, 3])
    n_list: list = field(default_factory=lambda: [4, 8, 16, 32])
    l: int = 1
    diagonal: str = RIGHT
    custom: dict | None = None
    solve: dict = field(default_factory=dict)
    verify: VerifyOptions = field(default_factory=VerifyOptions)
    outputs: Outputs = field(default_factory=Outputs)

    def problem(self) -> ProblemSpec:
        alpha = self.alpha_rule
        if self.preset == "hyperbolic_bey":
            return hyperbolic_bey()
        if self.preset == "elliptic_sine":
            return elliptic_sine(alpha)
        if self.preset == "advdiff_exp":
            return advdiff_exp(self.kappa, alpha)
        c = self.custom
        boundary = {"dirichlet": DIRICHLET, "neumann": NEUMANN}[c["boundary"]]
        return manufactured(
            c["u"], tuple(c["advection"]), mu=self.mu, kappa=self.kappa,
            alpha=alpha, boundary=boundary, name="custom",
        )


_TOP_KEYS = {"preset", "mu", "kappa", "alpha_rule", "k_list", "n_list", "l", "diagonal",
             "custom", "solve", "verify", "outputs"}


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(section).__name__}")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")


def _number(value, where, allow_zero=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (not allow_zero and value == 0):
        raise ConfigError(f"{where}: must be {'positive' if not allow_zero else 'non-negative'}, got {value!r}")
    return value


def _int_list(value, where, lo):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of integers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise ConfigError(f"{where}: entries must be integers >= {lo}, got {v!r}")
    if len(set(value)) != len(value):
        raise ConfigError(f"{where}: duplicate entries")
    return list(value)


def parse_config(doc) -> RunConfig:
    """Validate a decoded YAML document; every problem is reported by field name."""
    _check_keys(doc, _TOP_KEYS, "config")
    preset = doc.get("preset")
    if preset not in PRESETS:
        raise ConfigError(f"preset: expected one of {', '.join(PRESETS)}, got {preset!r}")
    cfg = RunConfig(preset=preset)

    for name in ("mu", "kappa"):
        if name in doc:
            setattr(cfg, name, _number(doc[name], name))
        fixed = _FIXED[preset].get(name)
        if fixed is not None:
            if getattr(cfg, name) not in (None, fixed):
                raise ConfigError(f"{name}: preset {preset} fixes {name} = {fixed:g}")
            setattr(cfg, name, fixed)
        elif getattr(cfg, name) is None:
            raise ConfigError(f"{name}: required for preset {preset}")

    rule = doc.get("alpha_rule", None)
    if rule is None:
        if preset != "hyperbolic_bey" and cfg.kappa > 0:
            raise ConfigError("alpha_rule: required when kappa > 0")
        cfg.alpha_rule = 0.0
    elif rule == FOUR_K_SQUARED:
        cfg.alpha_rule = FOUR_K_SQUARED
    elif isinstance(rule, dict):
        _check_keys(rule, {"const"}, "alpha_rule")
        if "const" not in rule:
            raise ConfigError("alpha_rule: expected four_k_squared or {const: value}")
        cfg.alpha_rule = _number(rule["const"], "alpha_rule.const")
    else:
        raise ConfigError(f"alpha_rule: expected four_k_squared or {{const: value}}, got {rule!r}")

    if "k_list" in doc:
        cfg.k_list = _int_list(doc["k_list"], "k_list", 1)
    if "n_list" in doc:
        cfg.n_list = _int_list(doc["n_list"], "n_list", 1)
    if "l" in doc:
        if doc["l"] not in (0, 1) or isinstance(doc["l"], bool):
            raise ConfigError(f"l: expected 0 or 1, got {doc['l']!r}")
        cfg.l = int(doc["l"])
    if "diagonal" in doc:
        if doc["diagonal"] not in (RIGHT, LEFT):
            raise ConfigError(f"diagonal: expected {RIGHT} or {LEFT}, got {doc['diagonal']!r}")
        cfg.diagonal = doc["diagonal"]

    custom = doc.get("custom")
    if preset == "custom":
        if custom is None:
            raise ConfigError("custom: required for preset custom")
        _check_keys(custom, {"u", "advection", "boundary"}, "custom")
        for key in ("u", "advection", "boundary"):
            if key not in custom:
                raise ConfigError(f"custom.{key}: required")
        if not isinstance(custom["advection"], list) or len(custom["advection"]) != 2:
            raise ConfigError("custom.advection: expected two expressions")
        if custom["boundary"] not in ("dirichlet", "neumann"):
            raise ConfigError(f"custom.boundary: expected dirichlet or neumann, got {custom['boundary']!r}")
        cfg.custom = dict(custom)
    elif custom is not None:
        raise ConfigError(f"custom: only valid with preset custom, not {preset}")

    if "solve" in doc:
        s = doc["solve"]
        _check_keys(s, {"k", "n"}, "solve")
        for key, lo in (("k", 1), ("n", 1)):
            if key in s:
                _int_list([s[key]], f"solve.{key}", lo)
        cfg.solve = dict(s)

    if "verify" in doc:
        v = doc["verify"]
        _check_keys(v, {"dg_l", "alphas", "infsup_n", "max_n"}, "verify")
        opts = VerifyOptions()
        if "dg_l" in v:
            if v["dg_l"] not in (0, 1) or isinstance(v["dg_l"], bool):
                raise ConfigError(f"verify.dg_l: expected 0 or 1, got {v['dg_l']!r}")
            opts.dg_l = int(v["dg_l"])
        if "alphas" in v:
            if not isinstance(v["alphas"], list) or not v["alphas"]:
                raise ConfigError("verify.alphas: expected a non-empty list")
            opts.alphas = [_number(a, "verify.alphas") for a in v["alphas"]]
        if "infsup_n" in v:
            opts.infsup_n = _int_list(v["infsup_n"], "verify.infsup_n", 1)
        if "max_n" in v:
            opts.max_n = _int_list([v["max_n"]], "verify.max_n", 1)[0]
        cfg.verify = opts

    if "outputs" in doc:
        o = doc["outputs"]
        _check_keys(o, {"csv", "slopes", "field_dump", "mesh_dump"}, "outputs")
        for key, value in o.items():
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"outputs.{key}: expected a path string")
        cfg.outputs = replace(Outputs(), **o)

    try:
        cfg.problem()
    except InvalidArgumentError as exc:
        raise ConfigError(f"problem definition: {exc}") from exc
    except Exception as exc:  # sympy parse errors in custom expressions
        raise ConfigError(f"custom: cannot build problem: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(doc if doc is not None else {})


# ---------------------------------------------------------------------------
# converge


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.15e}"


@dataclass
class SweepResult:
    rows: list  # dicts keyed by CSV_COLUMNS
    table: analysis.ConvergenceTable
    failures: list  # (k, n, message)


def run_preset(cfg: RunConfig, threads=1) -> SweepResult:
    """Run the (k, n) sweep; rows come back in canonical (k, n) order.

    A failed solve records a row without error values and drops the finer
    meshes of that order.
    """
    problem = cfg.problem()
    items = [(k, n) for k in cfg.k_list for n in sorted(cfg.n_list)]

    def run(item):
        k, n = item
        try:
            return solve_case(problem, n, k, cfg.l, cfg.diagonal)
        except IstabError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    rows, table_rows, failures = [], [], []
    failed_k = set()
    for (k, n), res in zip(items, results):
        if k in failed_k:
            continue
        alpha = problem.penalty(k)
        base = {"preset": cfg.preset, "k": k, "l": cfg.l, "alpha": alpha, "n": n}
        if isinstance(res, Exception):
            failed_k.add(k)
            failures.append((k, n, str(res)))
            logger.error("k=%d n=%d failed: %s", k, n, res)
            rows.append(base)
            continue
        r = res.report
        table_rows.append((k, n, r))
        rows.append({
            **base,
            "h_max": r.h_max,
            "dofs_facet_global": res.solution.u_bar.space.total_dofs,
            "err_L2": r.err_L2, "err_A": r.err_A, "err_D": r.err_D,
            "err_combined": r.err_combined,
            "conservation_defect": res.conservation_defect,
        })
    table = analysis.ConvergenceTable(table_rows)
    # pairwise rates against the next coarser successful row of the same k
    for k in cfg.k_list:
        ok = [row for row in rows if row["k"] == k and row.get("err_L2") is not None]
        for prev, row in zip(ok, ok[1:]):
            for col, err in (("rate_L2", "err_L2"), ("rate_A", "err_A"), ("rate_combined", "err_combined")):
                row[col] = analysis.pairwise_rates([prev["h_max"], row["h_max"]], [prev[err], row[err]])[0]
    return SweepResult(rows, table, failures)


def write_csv(rows, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in CSV_COLUMNS) + "\n")


def write_slopes(cfg, table, path):
    """Least-squares slope over the three finest meshes for each order and norm."""
    with open(path, "w", newline="\n") as fh:
        fh.write("preset,k,norm,slope\n")
        for k in cfg.k_list:
            h, _ = table.series(k, "err_L2")
            for name in ("err_L2", "err_A", "err_D", "err_combined"):
                value = None
                if len(h) >= 2:
                    value = table.slope(k, name)
                fh.write(f"{cfg.preset},{k},{name},{_fmt(value)}\n")


def cmd_converge(cfg, out, threads):
    result = run_preset(cfg, threads)
    write_csv(result.rows, out / cfg.outputs.csv)
    write_slopes(cfg, result.table, out / cfg.outputs.slopes)
    for k in cfg.k_list:
        h, _ = result.table.series(k, "err_L2")
        if len(h) >= 2:
            print(f"k={k}: slope L2 {_fmt(result.table.slope(k, 'err_L2'))} "
                  f"A {_fmt(result.table.slope(k, 'err_A'))} "
                  f"combined {_fmt(result.table.slope(k, 'err_combined'))}")
    for k, n, msg in result.failures:
        print(f"solve failed for k={k} n={n}: {msg}", file=sys.stderr)
    return EXIT_SOLVE if result.failures else EXIT_OK


# ---------------------------------------------------------------------------
# verify

PASS, FAIL, INFO_FAIL = "PASS", "FAIL", "INFO-FAIL"


def run_verify(cfg: RunConfig):
    """Run the verification probes; returns a list of (probe, status, detail).

    A probe whose assertion fails is FAIL. A configured penalty below the
    coercivity threshold is INFO-FAIL: it describes the configuration, not a
    defect of the implementation.
    """
    opts = cfg.verify
    if opts.dg_l != 0:
        raise ConfigError("verify.dg_l: the classical DG reductions hold for l = 0 only")
    problem = cfg.problem()
    ks = [k for k in cfg.k_list if k <= 3] or [1]
    ns = [n for n in sorted(cfg.n_list) if n <= opts.max_n] or [min(cfg.n_list)]
    out = []
    rng = np.random.default_rng(0)

    # coercivity identity for B_A
    from .assembly import CellData
    from .space import build_cell_space, build_facet_space

    for label, field_, tol in (("constant", lambda x, y: (0.8 + 0 * x, 0.6 + 0 * y), 1e-12),
                               ("curved", exp_field, 1e-8)):
        mesh = build_uniform_square_mesh(2, diagonal=cfg.diagonal).with_boundary_tags(NEUMANN)
        p = ProblemSpec(mu=1.0, kappa=0.0, advection=field_, source=lambda x, y: 0 * x, boundary=NEUMANN)
        worst = 0.0
        for k in ks:
            cd = CellData(mesh, k, p)
            fs = build_facet_space(mesh, k, 1)
            size = build_cell_space(mesh, k).total_dofs + fs.free_dofs
            for _ in range(10):
                vec = analysis.random_coefficients(rng, size)
                worst = max(worst, analysis.coercivity_identity_A(cd, fs, vec))
        out.append((f"coercivity_identity_A[{label}]", PASS if worst <= tol else FAIL, f"max defect {worst:.3e} (tol {tol:g})"))

    # penalty threshold
    mesh = build_uniform_square_mesh(4, diagonal=cfg.diagonal)
    for k in ks:
        rep = analysis.coercivity_threshold_D(mesh, k, list(opts.alphas) + [4.0 * k * k])
        betas = rep.beta[:-1]
        mono = all(b is not None for b in betas) and all(b2 >= b1 - 1e-12 for b1, b2 in zip(betas, betas[1:]))
        good = rep.beta[-1] is not None and rep.beta[-1] > 0
        detail = ", ".join(f"{a:g}:{'-' if b is None else f'{b:.4f}'}" for a, b in zip(rep.alphas, rep.beta))
        out.append((f"coercivity_threshold_D[k={k}]", PASS if mono and good else FAIL, detail))
        if problem.kappa > 0:
            alpha = problem.penalty(k)
            r = analysis.coercivity_threshold_D(mesh, k, [alpha])
            ok = r.beta[0] is not None and r.beta[0] > 0
            out.append((f"configured_penalty[k={k}, alpha={alpha:g}]", PASS if ok else INFO_FAIL,
                        f"beta_D = {r.beta[0]} ({r.flags[0]})"))

    # l = 0 reductions
    for regime in (analysis.HYPERBOLIC, analysis.ELLIPTIC):
        worst = max(analysis.dg_equivalence_l0(build_uniform_square_mesh(2, diagonal=cfg.diagonal), k, regime,
                                               l=opts.dg_l) for k in ks)
        out.append((f"dg_equivalence_l0[{regime}]", PASS if worst <= 1e-11 else FAIL, f"max defect {worst:.3e}"))

    # conservation and condensation on the configured problem
    for k in ks:
        for n in ns:
            try:
                case = solve_case(problem, n, k, cfg.l, cfg.diagonal)
            except IstabError as exc:
                out.append((f"solve[k={k}, n={n}]", INFO_FAIL if _below_threshold(problem, k) else FAIL, str(exc)))
                continue
            tol = 1e-10 * max(1.0, analysis.source_l2(case.data))
            d = case.conservation_defect
            out.append((f"local_conservation[k={k}, n={n}]", PASS if d <= tol else FAIL, f"defect {d:.3e} (tol {tol:.3e})"))
            if case.system.num_cell_dofs + case.system.num_facet_dofs <= 5000:
                full = solve_full(case.system)
                a, b = case.solution.u_bar.coefficients, full.u_bar.coefficients
                rel = np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
                out.append((f"condensation[k={k}, n={n}]", PASS if rel <= 1e-10 else FAIL, f"rel diff {rel:.3e}"))

    # inf-sup non-collapse
    adv = ProblemSpec(mu=1.0, kappa=0.0, advection=lambda x, y: (0.8 + 0 * x, 0.6 + 0 * y),
                      source=lambda x, y: 0 * x, boundary=NEUMANN)
    betas = [analysis.infsup_estimate(build_uniform_square_mesh(n, diagonal=cfg.diagonal), 1, adv).beta
             for n in opts.infsup_n]
    ratio = min(betas) / max(betas)
    out.append(("infsup_estimate", PASS if ratio >= 0.5 else FAIL,
                ", ".join(f"n={n}:{b:.4f}" for n, b in zip(opts.infsup_n, betas)) + f"; min/max {ratio:.3f}"))
    return out


def _below_threshold(problem, k):
    return problem.kappa > 0 and problem.penalty(k) < 4.0 * k * k


def cmd_verify(cfg, out, threads):
    results = run_verify(cfg)
    lines = [f"{status:9s} {name}: {detail}" for name, status, detail in results]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    with open(out / "verify.txt", "w", newline="\n") as fh:
        fh.write(text)
    return EXIT_VERIFY if any(status == FAIL for _, status, _ in results) else EXIT_OK


# ---------------------------------------------------------------------------
# solve


def write_field_dump(solution, path):
    """Plain text: cell coefficients, then facet coefficients, one per line."""
    u, ub = solution.u.coefficients, solution.u_bar.coefficients
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# cell_dofs {u.size}\n")
        fh.writelines(f"{v:.17g}\n" for v in u)
        fh.write(f"# facet_dofs {ub.size}\n")
        fh.writelines(f"{v:.17g}\n" for v in ub)


def run_solve(cfg: RunConfig, n=None, k=None):
    n = n if n is not None else cfg.solve.get("n", cfg.n_list[0])
    k = k if k is not None else cfg.solve.get("k", cfg.k_list[0])
    return solve_case(cfg.problem(), n, k, cfg.l, cfg.diagonal)


def cmd_solve(cfg, out, threads, n=None, k=None):
    case = run_solve(cfg, n, k)
    st = case.solution.stats
    print(f"preset {cfg.preset} k={case.k} n={case.n} l={case.l}")
    print(f"dofs: cell {st['cell_dofs']} facet {st['facet_dofs']} (global facet {case.solution.u_bar.space.total_dofs})")
    print(f"residual: condensed {st['residual']:.3e} full {st['full_residual']:.3e}")
    if case.report is not None:
        r = case.report
        print(f"err_L2 {r.err_L2:.6e} err_A {r.err_A:.6e} err_D {r.err_D:.6e}")
    print(f"conservation_defect {case.conservation_defect:.3e}")
    if cfg.outputs.field_dump:
        write_field_dump(case.solution, out / cfg.outputs.field_dump)
    if cfg.outputs.mesh_dump:
        write_mesh_text(case.mesh, out / cfg.outputs.mesh_dump)
    return EXIT_OK


# ---------------------------------------------------------------------------


def resolve_threads(flag):
    env = os.environ.get("ISTAB_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"ISTAB_THREADS: expected an integer, got {env!r}") from None
    else:
        value = flag
    if value < 1:
        raise ConfigError(f"threads must be >= 1, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="istab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("converge", "verify", "solve"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--threads", type=int, default=1)
        if name == "solve":
            p.add_argument("--n", type=int, default=None)
            p.add_argument("--k", type=int, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        threads = resolve_threads(args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "converge":
            return cmd_converge(cfg, args.out, threads)
        if args.command == "verify":
            return cmd_verify(cfg, args.out, threads)
        return cmd_solve(cfg, args.out, threads, args.n, args.k)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IstabError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
