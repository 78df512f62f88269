"""Command-line entry point (``fvmc``).

Every subcommand prints a JSON document (or CSV with ``--format csv``) on
stdout and writes its artifacts under ``--out-dir`` when given. Failures exit
with status 2 and a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .control import (
    FORMAT_VERSION,
    RunConfig,
    couple_alg2_alg3,
    reference,
    run,
)
from .counterexample import CxParams, ZoneError, run_counterexample
from .episodes import AbsorbingSpec, ContractError, Start, check_absorbing
from .extrational import ExtendedRational
from .mdp import Mdp, MdpError, format_number
from .randmdp import RandomMdpSpec, random_mdp
from .rng import SeedSpec
from .solvers import policy_iteration, value_iteration
from .stochapprox import (
    FiniteNoise,
    RmConfig,
    Schedule,
    abstract_sa,
    check_robbins_monro,
    contraction_sweep,
    shipped_maps,
)

EXIT_OK = 0
EXIT_FAIL = 2
ALGORITHMS = ("fva", "fva_finite", "general")


class CliError(Exception):
    def __init__(self, kind, message, details=None):
        super().__init__(message)
        self.kind = kind
        self.details = details


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ------------------------------------------------------------------ helpers


def _emit(doc, fmt="json", rows=None):
    """Print ``doc`` as JSON, or ``rows`` (header first) as CSV."""
    if fmt == "csv" and rows is not None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args):
    if args.out_dir is None:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("io_error", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError("parse_error", f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def load_mdp(path, exact=None, gamma=None, validate=True) -> Mdp:
    doc = _read_json(path)
    try:
        m = Mdp.from_json(doc, exact=exact)
        if gamma is not None:
            m = m.with_gamma(Fraction(str(gamma)) if m.exact else float(Fraction(str(gamma))))
    except (MdpError, ValueError, TypeError, KeyError) as exc:
        raise CliError("invalid_mdp", f"{path}: {exc}") from exc
    if validate:
        found = m.violations()
        if found:
            raise CliError("invalid_mdp", f"{path}: semantic violations", found)
    return m


def _number(value):
    """JSON value for a table entry: exact string when rational."""
    if isinstance(value, Fraction):
        return str(value)
    return float(value)


def _quantiles(values):
    if not values:
        return {}
    arr = np.asarray(values, dtype=float)
    qs = np.quantile(arr, [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0])
    names = ["min", "q10", "q25", "median", "q75", "q90", "max"]
    return {n: float(v) for n, v in zip(names, qs)}


# --------------------------------------------------------------- commands


def cmd_solve(args):
    m = load_mdp(args.mdp, exact=False if args.float else None, gamma=args.gamma)
    if m.exact:
        v, q, pi = policy_iteration(m)
        method = "policy_iteration"
    else:
        v, q = value_iteration(m, tol=args.tol)
        method = "value_iteration"
    doc = {
        "format_version": FORMAT_VERSION,
        "gamma": format_number(m.gamma),
        "method": method,
        "exact": m.exact,
        "v_star": {str(x): _number(v[i]) for i, x in enumerate(m.states)},
        "q_star": {f"{x}|{a}": _number(q[i]) for i, (x, a) in enumerate(m.pairs)},
    }
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "solve.json", doc)
    rows = [["x", "a", "q_star"]] + [[x, a, str(doc["q_star"][f"{x}|{a}"])] for x, a in m.pairs]
    _emit(doc, args.format, rows)
    return EXIT_OK


def load_experiment(path):
    """Parse and check an experiment config; relative MDP paths resolve
    against the config's directory."""
    cfg = _read_json(path)
    if not isinstance(cfg, dict):
        raise CliError("invalid_config", "experiment config must be a JSON object")
    missing = [k for k in ("mdp", "episodes") if k not in cfg]
    if missing:
        raise CliError("invalid_config", f"config lacks {', '.join(missing)}")
    out = {
        "mdp": cfg["mdp"],
        "algorithm": cfg.get("algorithm", "fva"),
        "gamma_override": cfg.get("gamma_override"),
        "theta": float(cfg.get("theta", 1.0)),
        "episodes": int(cfg["episodes"]),
        "replicates": int(cfg.get("replicates", 1)),
        "master_seed": int(cfg.get("master_seed", 0)),
        "stride": int(cfg.get("stride", 100)),
        "tolerance": float(cfg.get("tolerance", 1e-9)),
    }
    unknown = set(cfg) - set(out)
    if unknown:
        raise CliError("invalid_config", f"unknown config keys: {sorted(unknown)}")
    if out["algorithm"] not in ALGORITHMS:
        raise CliError("invalid_config", f"algorithm must be one of {ALGORITHMS}")
    if out["replicates"] < 1 or out["episodes"] < 0 or out["stride"] < 1:
        raise CliError("invalid_config", "need replicates >= 1, episodes >= 0, stride >= 1")
    mdp_path = Path(out["mdp"])
    if not mdp_path.is_absolute():
        mdp_path = Path(path).parent / mdp_path
    if not mdp_path.exists():
        raise CliError("invalid_config", f"MDP file {mdp_path} does not exist")
    out["mdp_path"] = str(mdp_path)
    return out


def _replicate(job):
    cfg, replicate, exact = job
    m = load_mdp(cfg["mdp_path"], exact=exact, gamma=cfg["gamma_override"])
    if cfg["algorithm"] == "fva_finite" and m.triangle is None:
        raise CliError("invalid_config", "fva_finite needs a 'triangle' in the MDP file")
    ref = reference(m)
    rc = RunConfig(cfg["episodes"], theta=cfg["theta"], stride=cfg["stride"], tolerance=cfg["tolerance"])
    state, trace = run(cfg["algorithm"], m, rc, SeedSpec(cfg["master_seed"], replicate), ref)
    q = [float(v) for v in state.q]
    return replicate, trace, q, [float(v) for v in ref.q_star], list(m.pairs)


def _run_experiment(args, algorithm=None):
    if args.config is None:
        raise CliError("usage", "--config is required")
    cfg = load_experiment(args.config)
    if algorithm is not None:
        cfg["algorithm"] = algorithm
    elif cfg["algorithm"] == "general":
        raise CliError("invalid_config", "use run-general for the general scheme")
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    # float arithmetic for the sampling loop; the kernel needs it
    load_mdp(cfg["mdp_path"], gamma=cfg["gamma_override"])
    jobs = [(cfg, r, False) for r in range(cfg["replicates"])]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    out = _out_dir(args)
    finals = []
    for replicate, trace, q, q_star, pairs in results:
        last = trace.final
        finals.append(
            {
                "replicate": replicate,
                "q_error": last.q_error if last else None,
                "v_error": last.v_error if last else None,
            }
        )
        if out is not None:
            trace.write_csv(out / f"trace_r{replicate:03d}.csv")
            _write_json(
                out / f"q_r{replicate:03d}.json",
                {
                    "format_version": FORMAT_VERSION,
                    "replicate": replicate,
                    "q": {f"{x}|{a}": v for (x, a), v in zip(pairs, q)},
                    "q_star": {f"{x}|{a}": v for (x, a), v in zip(pairs, q_star)},
                },
            )
    public = {k: v for k, v in cfg.items() if k != "mdp_path"}
    summary = {
        "format_version": FORMAT_VERSION,
        "config": public,
        "replicates": finals,
        "q_error_quantiles": _quantiles([f["q_error"] for f in finals if f["q_error"] is not None]),
        "v_error_quantiles": _quantiles([f["v_error"] for f in finals if f["v_error"] is not None]),
    }
    if out is not None:
        _write_json(out / "summary.json", summary)
    rows = [["replicate", "q_error", "v_error"]] + [
        [f["replicate"], repr(f["q_error"]), repr(f["v_error"])] for f in finals
    ]
    _emit(summary, args.format, rows)
    return EXIT_OK


def cmd_run_fva(args):
    return _run_experiment(args)


def cmd_run_general(args):
    return _run_experiment(args, algorithm="general")


def _parse_ext(text, what):
    try:
        return ExtendedRational.parse(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError("invalid_argument", f"cannot parse {what} {text!r}") from exc


def cmd_counterexample(args):
    gamma = args.gamma
    if args.mdp is not None:
        doc = _read_json(args.mdp)
        if not isinstance(doc, dict) or not isinstance(doc.get("gamma"), str):
            raise CliError("invalid_mdp", "the counterexample needs gamma as a rational string")
        gamma = doc["gamma"]
    try:
        params = CxParams(
            Fraction(gamma),
            Fraction(args.q),
            _parse_ext(args.u0, "u0"),
            _parse_ext(args.v0, "v0"),
        )
    except ValueError as exc:
        raise CliError("invalid_argument", str(exc)) from exc
    try:
        trace = run_counterexample(params, args.steps)
    except ZoneError as exc:
        raise CliError("zone_error", str(exc)) from exc
    summary = trace.summary()
    out = _out_dir(args)
    if out is not None:
        trace.write_csv(out / "counterexample.csv")
        trace.write_json(out / "counterexample.json")
    if args.format == "csv":
        _emit(summary, "csv", list(trace.csv_rows()))
    else:
        _emit(summary)
    return EXIT_OK


def cmd_check_contraction(args):
    gammas = [Fraction(g) for g in args.gammas.split(",")] if args.gammas else None
    kwargs = {"gammas": gammas} if gammas else {}
    seed = 0 if args.seed is None else args.seed
    report = contraction_sweep(seed, args.count, **kwargs)
    doc = report.to_dict(args.tol)
    out = _out_dir(args)
    rows = [["index", "gamma", "n_states", "n_pairs", "lhs", "rhs", "norm_excess", "dominance_gap"]]
    for r in report.records:
        d = r.to_dict()
        rows.append([d[k] for k in rows[0]])
    if out is not None:
        _write_json(out / "contraction.json", report.to_dict(args.tol, include_records=True))
        with open(out / "contraction.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    _emit(doc, args.format, rows)
    return EXIT_OK if not report.violations(args.tol) else EXIT_FAIL


def _rm_config_from_args(args):
    if args.config:
        d = _read_json(args.config)
        try:
            theta = Schedule.from_dict(d.get("theta", {}))
            noise = FiniteNoise.from_dict(d["noise"]) if "noise" in d else FiniteNoise.symmetric(1)
            return RmConfig(theta, noise, float(d.get("z0", 5.0)), int(d.get("steps", 10**5))), d.get(
                "seeds", 10
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError("invalid_config", str(exc)) from exc
    if args.theta == "harmonic":
        theta = Schedule.harmonic(args.offset)
    elif args.theta == "geometric":
        theta = Schedule.geometric()
    else:
        theta = Schedule.constant(args.value)
    noise = FiniteNoise.zero() if args.noise == 0 else FiniteNoise.symmetric(Fraction(str(args.noise)))
    return RmConfig(theta, noise, args.z0, args.steps), args.seeds


def cmd_check_robbins_monro(args):
    config, n_seeds = _rm_config_from_args(args)
    base = 0 if args.seed is None else args.seed
    seeds = list(range(base, base + int(n_seeds)))
    report, paths = check_robbins_monro(config, seeds, keep_paths=args.out_dir is not None)
    doc = report.to_dict(args.threshold)
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "robbins_monro.json", doc)
        for s, path in zip(seeds, paths):
            with open(out / f"rm_seed{s}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["k", "z"])
                stride = max(1, len(path) // 1000)
                for k in range(0, len(path), stride):
                    w.writerow([k, repr(float(path[k]))])
                if (len(path) - 1) % stride:
                    w.writerow([len(path) - 1, repr(float(path[-1]))])
    rows = [["seed", "final"]] + [[s["seed"], repr(s["final"])] for s in doc["seeds"]]
    _emit(doc, args.format, rows)
    return EXIT_OK


def cmd_check_abstract_sa(args):
    base = 0 if args.seed is None else args.seed
    maps = shipped_maps(base)
    if args.map != "all":
        maps = [m for m in maps if m.name == args.map]
    lam = Schedule.harmonic(1)
    eta = Schedule.harmonic(1, block=100)
    noise = FiniteNoise.symmetric(Fraction(str(args.noise)))
    results = []
    for synth in maps:
        for s in range(base, base + args.seeds):
            trace = abstract_sa(synth, lam, eta, noise, synth.f_star + args.offset, args.steps, s)
            d = trace.to_dict()
            d["seed"] = s
            results.append(d)
    doc = {
        "format_version": FORMAT_VERSION,
        "lambda": lam.to_dict(),
        "eta": eta.to_dict(),
        "noise": noise.to_dict(),
        "steps": args.steps,
        "runs": results,
        "max_excess": max((r["max_excess"] for r in results), default=0.0),
        "all_dominated": all(r["dominated"] for r in results),
    }
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "abstract_sa.json", doc)
    cols = ["map", "seed", "final_error", "max_excess", "violations"]
    rows = [cols] + [[r[c] for c in cols] for r in results]
    _emit(doc, args.format, rows)
    return EXIT_OK if doc["all_dominated"] else EXIT_FAIL


def cmd_gen_mdp(args):
    try:
        spec = RandomMdpSpec(
            n_states=args.n_states,
            max_actions=args.max_actions,
            gamma=Fraction(args.gamma),
            branching=args.branching,
            reward_low=args.reward_low,
            reward_high=args.reward_high,
            absorbing_fraction=args.absorbing_fraction,
            seed=0 if args.seed is None else args.seed,
        )
    except ValueError as exc:
        raise CliError("invalid_argument", str(exc)) from exc
    m = random_mdp(spec)
    text = json.dumps(m.to_json(), indent=2, sort_keys=True) + "\n"
    out = _out_dir(args)
    if args.output is not None:
        Path(args.output).write_text(text)
    elif out is not None:
        (out / f"mdp_seed{spec.seed}.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_couple_check(args):
    m = load_mdp(args.mdp, exact=False)
    if m.triangle is None:
        raise CliError("invalid_mdp", "couple-check needs a 'triangle' in the MDP file")
    spec = AbsorbingSpec(m.triangle)
    base = 0 if args.seed is None else args.seed
    results = []
    for s in range(base, base + args.seeds):
        try:
            rep = couple_alg2_alg3(m, spec, Start.uniform_states(m), SeedSpec(s), args.episodes, args.theta)
        except ContractError as exc:
            raise CliError("contract_error", str(exc)) from exc
        results.append(
            {
                "seed": s,
                "ok": rep.ok,
                "episodes": rep.episodes,
                "mismatch": None if rep.mismatch is None else [str(v) for v in rep.mismatch],
                "detail": rep.detail,
            }
        )
    doc = {"format_version": FORMAT_VERSION, "runs": results, "all_ok": all(r["ok"] for r in results)}
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "coupling.json", doc)
    rows = [["seed", "ok", "episodes"]] + [[r["seed"], r["ok"], r["episodes"]] for r in results]
    _emit(doc, args.format, rows)
    return EXIT_OK if doc["all_ok"] else EXIT_FAIL


def cmd_validate(args):
    doc_in = _read_json(args.mdp)
    try:
        m = Mdp.from_json(doc_in)
    except (MdpError, ValueError, TypeError, KeyError) as exc:
        raise CliError("invalid_mdp", f"{args.mdp}: {exc}") from exc
    findings = m.violations()
    absorbing = None
    if m.triangle is not None:
        rep = check_absorbing(m, AbsorbingSpec(m.triangle))
        absorbing = rep.to_dict()
        if not rep.ok:
            findings.append(f"absorbing set assumption fails: {rep.summary()}")
    doc = {"format_version": FORMAT_VERSION, "path": str(args.mdp), "violations": findings, "absorbing": absorbing}
    _emit(doc)
    return EXIT_OK if not findings else EXIT_FAIL


# ------------------------------------------------------------------ parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment or rig config JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel replicates")
    common.add_argument("--out-dir", help="directory for artifacts")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = _Parser(prog="fvmc", description="First-visit Monte-Carlo control laboratory.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="exact V* and Q*")
    s.add_argument("mdp")
    s.add_argument("--gamma", help="override gamma")
    s.add_argument("--float", action="store_true", help="value iteration in floats")
    s.add_argument("--tol", type=float, default=1e-12)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("run-fva", parents=[common], help="first-visit control experiment")
    s.set_defaults(func=cmd_run_fva)
    s = sub.add_parser("run-general", parents=[common], help="general scheme experiment")
    s.set_defaults(func=cmd_run_general)

    s = sub.add_parser("counterexample", parents=[common], help="exact divergence run")
    s.add_argument("--mdp", help="MDP file supplying gamma as p/q")
    s.add_argument("--gamma", default="3/4")
    s.add_argument("--q", default="1/10")
    s.add_argument("--u0", default="9/4")
    s.add_argument("--v0", default="9/4+1/100*sqrt2")
    s.add_argument("--steps", type=int, default=5000)
    s.set_defaults(func=cmd_counterexample)

    s = sub.add_parser("check-contraction", parents=[common], help="H contraction sweep")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--gammas", help="comma-separated gammas, e.g. 1/10,2/5")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_check_contraction)

    s = sub.add_parser("check-robbins-monro", parents=[common], help="Robbins-Monro runs")
    s.add_argument("--theta", choices=("harmonic", "geometric", "constant"), default="harmonic")
    s.add_argument("--offset", type=float, default=2.0)
    s.add_argument("--value", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=1.0, help="amplitude of +-noise (0: none)")
    s.add_argument("--z0", type=float, default=5.0)
    s.add_argument("--steps", type=int, default=10**5)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--threshold", type=float, default=0.05)
    s.set_defaults(func=cmd_check_robbins_monro)

    s = sub.add_parser("check-abstract-sa", parents=[common], help="domination check")
    s.add_argument("--map", choices=("all", "constant", "sup_norm_pull", "h_operator"), default="all")
    s.add_argument("--steps", type=int, default=10**4)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--offset", type=float, default=1.0, help="f0 = f_star + offset")
    s.set_defaults(func=cmd_check_abstract_sa)

    s = sub.add_parser("gen-mdp", parents=[common], help="random MDP JSON")
    s.add_argument("--n-states", type=int, default=3)
    s.add_argument("--max-actions", type=int, default=3)
    s.add_argument("--gamma", default="1/2")
    s.add_argument("--branching", type=int, default=2)
    s.add_argument("--reward-low", type=int, default=0)
    s.add_argument("--reward-high", type=int, default=1)
    s.add_argument("--absorbing-fraction", type=float, default=0.0)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_gen_mdp)

    s = sub.add_parser("couple-check", parents=[common], help="infinite vs finite episodes")
    s.add_argument("mdp")
    s.add_argument("--episodes", type=int, default=200)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--theta", type=float, default=1.0)
    s.set_defaults(func=cmd_couple_check)

    s = sub.add_parser("validate", parents=[common], help="check an MDP file")
    s.add_argument("mdp")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "func", None) is None:
            raise CliError("usage", "a subcommand is required")
        if args.jobs < 1:
            raise CliError("usage", "--jobs must be >= 1")
        return args.func(args)
    except CliError as exc:
        err = {"format_version": FORMAT_VERSION, "error": exc.kind, "message": str(exc)}
        if exc.details is not None:
            err["details"] = exc.details
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_FAIL
    except (MdpError, ContractError, ValueError) as exc:
        err = {"format_version": FORMAT_VERSION, "error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
