"""Command-line entry point: ``biplan <subcommand> ...``.

Exit codes: 0 success, 1 planning failure in single-problem modes, 2 usage
or input error, 3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from biplan import __version__
from biplan._accel import backend_name
from biplan.config import METHODS, ConfigError, RunConfig, load_config
from biplan.seeding import derive_seed

logger = logging.getLogger("biplan")

EXIT_OK, EXIT_PLAN_FAILED, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _offsets(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise UsageError(f"action must be 'pick,pick_offset,place,place_offset', got {text!r}")
    from biplan.world import ActionSpec

    return ActionSpec(*map(int, parts))


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _load(cfg_path, overrides: dict) -> RunConfig:
    config = load_config(cfg_path) if cfg_path else RunConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    return config.replace(**clean) if clean else config


def _versions() -> dict:
    out = {"biplan": __version__, "python": platform.python_version(), "numpy": np.__version__, "backend": backend_name()}
    try:
        out["numba"] = metadata.version("numba")
    except metadata.PackageNotFoundError:
        out["numba"] = None
    return out


def _manifest(out_dir: Path, config: RunConfig, command: str, files: dict) -> None:
    """Merge this command's artifacts into ``out_dir/manifest.json`` (no timestamps, so reruns are identical)."""
    path = out_dir / "manifest.json"
    data = json.loads(path.read_text()) if path.exists() else {"artifacts": {}}
    data["versions"] = _versions()
    for name in files:
        data["artifacts"][name] = {"command": command, "config_sha256": config.digest()}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    (out_dir / f"{command}.config.ini").write_text(config.to_ini())


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _target(args, default_name: str) -> tuple[Path, str]:
    """Artifact directory and file name; ``--out FILE`` overrides ``--out-dir/default_name``."""
    if getattr(args, "out", None):
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.parent, path.name
    return _out_dir(args), default_name


def _problem(args):
    from biplan.world import read_problems

    problems = read_problems(args.problem)
    if not 0 <= args.index < len(problems):
        raise UsageError(f"--index {args.index} out of range for {len(problems)} problems")
    return problems[args.index]


def _predictor(path, config: RunConfig):
    from biplan.dynamics import load_predictor

    return load_predictor(path, config.physics_config())


def _operators(path):
    from biplan.operators import parse_operators

    return parse_operators(Path(path).read_text())


def _plan_json(plan) -> list | None:
    return None if plan is None else [list(map(int, a)) for a in plan]


# ---------------------------------------------------------------- subcommands

def cmd_collect(args, config):
    from biplan.world import collect_dataset, physics_record, write_dataset

    physics = config.physics_config()
    n_range = args.n_range or config.dynamics.train_n
    size = args.samples or config.dynamics.train_size
    seed = derive_seed(config.run.seed, "collect")
    data = collect_dataset(size, n_range, seed, physics, config.dynamics.episode_length, config.run.jobs)
    out, name = _target(args, "dataset.jsonl")
    header = {"physics": physics_record(physics), "seed": config.run.seed, "n_range": list(n_range)}
    write_dataset(out / name, data, header, config.encoder() if args.with_symbols else None)
    _manifest(out, config, "collect", {name: None})
    print(f"wrote {len(data)} transitions to {out / name}")
    return EXIT_OK


def cmd_generate(args, config):
    from biplan.world import generate_suite, write_problems

    ns = args.n or config.bench.n
    ks = args.k or config.bench.k
    suite = generate_suite(ns, ks, args.count, config.run.seed, config.physics_config(), config.planning.epsilon)
    problems = [p for key in sorted(suite) for p in suite[key]]
    out, name = _target(args, "problems.jsonl")
    write_problems(out / name, problems)
    _manifest(out, config, "generate", {name: None})
    print(f"wrote {len(problems)} problems to {out / name}")
    return EXIT_OK


def cmd_fit(args, config):
    from biplan.dynamics import fit_knn
    from biplan.world import read_dataset

    _, data = read_dataset(args.dataset)
    model = fit_knn(data, args.k or config.dynamics.k)
    out, name = _target(args, "model.npz")
    if not name.endswith(".npz"):
        raise UsageError("model file name must end in .npz")
    model.save(out / name)
    _manifest(out, config, "fit", {name: None})
    print(f"fitted knn on {len(data)} transitions ({model.size} rows) -> {out / name}")
    return EXIT_OK


def cmd_predict(args, config):
    from biplan.world import ContinuousState

    state = ContinuousState.from_flat(json.loads(Path(args.state).read_text()))
    action = _offsets(args.action)
    effect = _predictor(args.model, config).predict(state, action)
    print(json.dumps({"action": list(map(int, action)), "effect": np.round(effect, 9).tolist()}))
    return EXIT_OK


def cmd_mine(args, config):
    from biplan.operators import format_operators, mine, symbolize
    from biplan.world import read_dataset

    _, data = read_dataset(args.dataset)
    encoder = config.encoder()
    ops = mine(symbolize(data, encoder), encoder, config.operators.min_support, config.operators.min_fraction)
    out, name = _target(args, "operators.txt")
    (out / name).write_text(format_operators(ops))
    _manifest(out, config, "mine", {name: None})
    n_prob = sum(not op.deterministic for op in ops)
    print(f"mined {len(ops)} operators ({n_prob} probabilistic) -> {out / name}")
    return EXIT_OK


def cmd_export_pddl(args, config):
    from biplan.operators import deterministic_projection, sample_domains
    from biplan.pddl import emit_pddl, emit_problem, predicates_of

    ops = _operators(args.operators)
    encoder = config.encoder()
    if args.sample is None:
        domain = deterministic_projection(ops)
    else:
        domain = sample_domains(ops, args.sample + 1, derive_seed(config.run.seed, "export"))[args.sample].operators
    text = emit_pddl(domain, predicates_of(encoder))
    sys.stdout.write(text)
    if args.problem:
        prob = _problem(args)
        init, goal = encoder.encode(prob.init), encoder.encode(prob.goal)
        ptext = emit_problem(prob.init.n, init, goal, encoder.unary_names, encoder.relation_names)
        if args.out_dir:
            out = _out_dir(args)
            (out / "problem.pddl").write_text(ptext)
        else:
            sys.stdout.write(ptext)
    if args.out_dir:
        out = _out_dir(args)
        (out / "domain.pddl").write_text(text)
        _manifest(out, config, "export-pddl", {"domain.pddl": None})
    return EXIT_OK


def cmd_export_ppddl(args, config):
    from biplan.pddl import emit_ppddl, predicates_of

    text = emit_ppddl(_operators(args.operators), predicates_of(config.encoder()))
    sys.stdout.write(text)
    if args.out_dir:
        out = _out_dir(args)
        (out / "domain.ppddl").write_text(text)
        _manifest(out, config, "export-ppddl", {"domain.ppddl": None})
    return EXIT_OK


def cmd_plan(args, config):
    import time

    from biplan.planning import Level, bilevel_plan, continuous_search, deterministic_candidates, symbolic_candidates

    problem = _problem(args)
    encoder = config.encoder()
    bcfg = config.bilevel_config()
    seed = derive_seed(config.run.seed, "plan", args.index)
    t0 = time.perf_counter()
    record = {"mode": args.mode, "index": args.index}
    if args.mode in ("deterministic", "probabilistic"):
        ops = _operators(args.operators)
        stats: dict = {}
        if args.mode == "deterministic":
            cands = deterministic_candidates(problem, ops, encoder, bcfg, stats)
        else:
            cands = symbolic_candidates(problem, ops, encoder, bcfg, seed, stats)
        plan = cands[0].actions if cands else None
        record.update(level=Level.SYMBOLIC.value if cands else Level.FAILED.value, expansions=stats["expansions"],
                      candidates=[{"plan": _plan_json(c.actions), "probability": round(c.probability, 12)} for c in cands])
    elif args.mode == "continuous":
        res = continuous_search(problem.init, problem.goal, _predictor(args.model, config), bcfg.search)
        plan = res.plan
        record.update(level=(Level.CONTINUOUS if res.solved else Level.FAILED).value, expansions=res.expansions)
    else:
        out = bilevel_plan(problem, _operators(args.operators), _predictor(args.model, config), encoder, bcfg, seed)
        plan = out.plan
        record.update(level=out.level.value, expansions=out.expansions, verifier_calls=out.verifier_calls,
                      candidates_considered=out.candidates_considered)
    record["plan"] = _plan_json(plan)
    timing = {"seconds": round(time.perf_counter() - t0, 6)}
    print(json.dumps(record, sort_keys=True))
    if args.out_dir:
        out_dir = _out_dir(args)
        (out_dir / "outcome.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        (out_dir / "timing.json").write_text(json.dumps(timing) + "\n")
        _manifest(out_dir, config, "plan", {"outcome.json": None})
    return EXIT_OK if plan is not None else EXIT_PLAN_FAILED


def cmd_verify(args, config):
    from biplan.pddl import parse_plan
    from biplan.planning import verify

    problem = _problem(args)
    plan = parse_plan(Path(args.plan).read_text(), problem.init.n)
    verdict = verify(plan, problem.init, problem.goal, _predictor(args.model, config), config.planning.tau)
    print(json.dumps({
        "status": verdict.status.value,
        "max_object_distance": round(verdict.max_object_distance, 9),
        "tau": config.planning.tau,
        "predicted_final": np.round(verdict.predicted_final.positions, 9).tolist(),
    }, sort_keys=True))
    return EXIT_OK


def cmd_search(args, config):
    from biplan.pddl import format_plan
    from biplan.planning import continuous_search

    problem = _problem(args)
    res = continuous_search(problem.init, problem.goal, _predictor(args.model, config), config.search_params())
    if res.plan is None:
        print(f"no plan within {res.expansions} expansions", file=sys.stderr)
        return EXIT_PLAN_FAILED
    sys.stdout.write(f"; {len(res.plan)} actions, {res.expansions} expansions\n" + format_plan(res.plan))
    return EXIT_OK


def cmd_bench(args, config):
    from biplan.bench import build_models, run_suite, write_outputs

    models = build_models(config, args.model_seed)
    result = run_suite(config, models, full=args.full)
    out = _out_dir(args)
    files = write_outputs(out, config, result, timings=args.timings)
    _manifest(out, config, "bench", files)
    print((out / "summary.md").read_text(), end="")
    return EXIT_OK


def cmd_dump_config(args, config):
    sys.stdout.write(config.to_ini())
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biplan", description="Bilevel symbolic/continuous pick-place planning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--jobs", type=int, help="worker processes (overrides [run] jobs)")

    def add(name, func, help_text, out_required=False):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        if out_required:
            p.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
            if name != "bench":
                p.add_argument("--out", help="artifact file path (overrides --out-dir)")
        return p

    def problem_args(p, required=True):
        p.add_argument("--problem", required=required, help="problems file (JSON lines)")
        p.add_argument("--index", type=int, default=0, help="problem index in the file")

    p = add("collect", cmd_collect, "collect random-interaction transitions", True)
    p.add_argument("--samples", type=int, help="number of transitions")
    p.add_argument("--n-range", "--objects", dest="n_range", type=_int_list, help="object counts, e.g. 2,3,4")
    p.add_argument("--noise", "--noise-sigma", dest="noise", type=float, help="release noise sigma in meters")
    p.add_argument("--with-symbols", action="store_true", help="store symbolic bit strings")

    p = add("generate", cmd_generate, "generate seeded planning problems", True)
    p.add_argument("--n", type=_int_list, help="object counts")
    p.add_argument("--k", type=_int_list, help="generating action counts")
    p.add_argument("--count", type=int, default=10, help="problems per (n, k)")
    p.add_argument("--noise", "--noise-sigma", dest="noise", type=float, help="release noise sigma in meters")

    p = add("fit", cmd_fit, "fit the knn effect predictor", True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, help="neighbors")

    p = add("predict", cmd_predict, "predict one action's per-object effect")
    p.add_argument("--model", required=True, help="model.npz or 'oracle'")
    p.add_argument("--state", required=True, help="JSON file with the flat state (x, y, z, is_large, is_small per block)")
    p.add_argument("--action", required=True, help="pick,pick_offset,place,place_offset")

    p = add("mine", cmd_mine, "mine probabilistic operators from a dataset", True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--min-support", type=int)
    p.add_argument("--min-fraction", type=float)

    p = add("export-pddl", cmd_export_pddl, "write a deterministic PDDL domain to standard output")
    p.add_argument("--operators", required=True)
    p.add_argument("--sample", type=int, help="emit sampled domain #SAMPLE instead of the projection")
    problem_args(p, required=False)
    p.add_argument("--out-dir", help="also write domain.pddl (and problem.pddl) here")

    p = add("export-ppddl", cmd_export_ppddl, "write the PPDDL domain to standard output")
    p.add_argument("--operators", required=True)
    p.add_argument("--out-dir", help="also write domain.ppddl here")

    p = add("plan", cmd_plan, "plan for one problem")
    problem_args(p)
    p.add_argument("--operators", help="operators file (symbolic and bilevel modes)")
    p.add_argument("--model", default="oracle", help="model.npz or 'oracle'")
    p.add_argument("--mode", choices=("deterministic", "probabilistic", "continuous", "bilevel"), default="bilevel")
    p.add_argument("--n-domains", type=int)
    p.add_argument("--tau", type=float, help="verification threshold in meters")
    p.add_argument("--w", type=float, help="heuristic weight")
    p.add_argument("--cap", type=int, help="continuous expansion cap")
    p.add_argument("--out-dir", help="write outcome.json here")

    p = add("verify", cmd_verify, "verify a plan file against a problem")
    problem_args(p)
    p.add_argument("--plan", required=True, help="plan file, one (pick-place_d.._d.. oA oB) per line")
    p.add_argument("--model", default="oracle")
    p.add_argument("--tau", type=float)

    p = add("search", cmd_search, "continuous weighted A* for one problem")
    problem_args(p)
    p.add_argument("--model", default="oracle")
    p.add_argument("--w", type=float)
    p.add_argument("--cap", type=int)

    p = add("bench", cmd_bench, "run the paired method comparison", True)
    p.add_argument("--full", action="store_true", help="full 3 x 5 grid with 100 problems per cell instead of the desk grid")
    p.add_argument("--model-seed", type=int, help="seed for the training corpus (defaults to the master seed)")
    p.add_argument("--timings", action="store_true", help="also write per-problem wall times")

    add("dump-config", cmd_dump_config, "print the effective configuration")
    return parser


_OVERRIDES = {
    "seed": "run__seed", "jobs": "run__jobs", "noise": "physics__noise_sigma", "k": None,
    "n_domains": "planning__n_domains", "tau": "planning__tau", "w": "planning__w", "cap": "planning__expansion_cap",
    "min_support": "operators__min_support", "min_fraction": "operators__min_fraction",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {dest: getattr(args, flag) for flag, dest in _OVERRIDES.items() if dest and hasattr(args, flag)}
    if args.command in ("plan",) and args.mode in ("probabilistic", "bilevel", "deterministic") and not args.operators:
        parser.error(f"--operators is required for --mode {args.mode}")
    try:
        config = _load(args.config, overrides)
    except ConfigError as exc:
        print(f"biplan: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, config)
    except (UsageError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"biplan {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
