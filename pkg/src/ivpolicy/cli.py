"""Batch command-line interface: simulate, fit, evaluate, bounds, bench.

Flags may also be supplied through a flat ``key = value`` config file
('#' starts a comment); explicit flags override the config, which overrides
defaults, and unknown config keys are errors.  All outputs are written
atomically.  Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bench as bench_mod
from .data import (
    Dataset,
    ParseError,
    atomic_write_text,
    load_csv,
    load_latent_csv,
    load_rule,
    parse_kv_block,
    save_rule,
    write_csv,
    write_latent_csv,
)
from .evaluation import (
    bp_bounds,
    build_prob_table,
    complier_value,
    fit_mr_components,
    value_mr,
    value_plugin,
)
from .learn import LearnConfig, learn_policy
from .nuisance import NuisanceSet
from .seeding import rng_from
from .synth import ScenarioSpec, generate_scenario
from .weights import SCHEMES

__all__ = ["Command", "parse_args", "run", "main"]

_USAGE_EXIT = 2


@dataclass
class Command:
    """A validated verb plus its effective flag values."""

    verb: str
    flags: dict = field(default_factory=dict)
    config_path: str | None = None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None


def _name_list(text: str) -> tuple:
    return tuple(v for v in text.replace(",", " ").split())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivpolicy",
        description="Instrumental-variable policy learning toolkit",
    )
    sub = parser.add_subparsers(dest="verb", metavar="verb")

    sim = sub.add_parser("simulate", help="draw a synthetic scenario dataset")
    sim.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--iv-coef", type=float, default=2.5)
    sim.add_argument("--bridge-phi", type=float, default=0.5)
    sim.add_argument("--observable", action="store_true",
                     help="write only the observable columns (drop u,y1,ym1)")
    sim.add_argument("--out", required=True)

    fit = sub.add_parser("fit", help="learn a treatment rule from a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--scheme", required=True, choices=SCHEMES)
    fit.add_argument("--kernel", choices=("linear", "gaussian"), default="linear")
    fit.add_argument("--lambda-grid", type=_float_list, default=None)
    fit.add_argument("--bandwidth-grid", type=_float_list, default=None)
    fit.add_argument("--folds", type=int, default=5)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--delta-floor", type=float, default=0.01)
    fit.add_argument("--standardize", action="store_true")
    fit.add_argument("--recode01", action="store_true",
                     help="accept a,z coded {0,1} and recode 0 to -1")
    fit.add_argument("--model-out", required=True)

    ev = sub.add_parser("evaluate", help="estimate the value of a fitted rule on data")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--scheme", choices=SCHEMES, default="IV_IW_A")
    ev.add_argument("--train-data", default=None,
                    help="fit nuisances on this CSV instead of the evaluation data")
    ev.add_argument("--bounds", action="store_true")
    ev.add_argument("--bins", type=int, default=5)
    ev.add_argument("--omega", type=float, default=0.5)
    ev.add_argument("--delta-floor", type=float, default=0.01)
    ev.add_argument("--recode01", action="store_true")
    ev.add_argument("--out", default=None, help="write the TSV here instead of stdout")

    bd = sub.add_parser("bounds", help="partial-identification bounds for a rule (binary outcome)")
    bd.add_argument("--model", required=True)
    bd.add_argument("--data", required=True)
    bd.add_argument("--bins", type=int, default=5)
    bd.add_argument("--omega", type=float, default=0.5)
    bd.add_argument("--recode01", action="store_true")
    bd.add_argument("--out", default=None)

    bn = sub.add_parser("bench", help="replication benchmark over synthetic scenarios")
    bn.add_argument("--scenarios", type=_int_list, default=(1, 2, 3, 4))
    bn.add_argument("--reps", type=int, default=100)
    bn.add_argument("--schemes", type=_name_list, default=("OWL", "IV_IW_A", "IV_MR_A"))
    bn.add_argument("--kernels", type=_name_list, default=("linear",))
    bn.add_argument("--iv-coef", type=float, default=2.5)
    bn.add_argument("--n-train", type=int, default=500)
    bn.add_argument("--n-test", type=int, default=10_000)
    bn.add_argument("--folds", type=int, default=5)
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--threads", type=int, default=1)
    bn.add_argument("--out", required=True)

    for p in (sim, fit, ev, bd, bn):
        p.add_argument("--config", default=None, help="flat key = value config file")
    return parser


def _parser_defaults(parser: argparse.ArgumentParser, verb: str) -> dict:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    verb_parser = sub.choices[verb]
    defaults, types, required = {}, {}, set()
    for action in verb_parser._actions:
        if action.dest in ("help", "config"):
            continue
        defaults[action.dest] = action.default
        types[action.dest] = action
        if action.required:
            required.add(action.dest)
    return defaults, types, required


def parse_args(argv) -> Command:
    """Parse argv into a validated Command, merging any config file.

    Precedence: explicit flags > config file entries > built-in defaults.
    Unknown verbs or flags exit with the usage code; '--help' exits 0.
    """
    parser = _build_parser()
    if not argv:
        parser.error("missing verb (one of simulate, fit, evaluate, bounds, bench)")
    ns = parser.parse_args(argv)
    if ns.verb is None:
        parser.error("missing verb")
    defaults, actions, required = _parser_defaults(parser, ns.verb)

    flags = dict(defaults)
    explicit = _explicit_dests(argv, actions)
    if ns.config:
        flags.update(_load_config(ns.config, ns.verb, actions))
    for dest in explicit:
        flags[dest] = getattr(ns, dest)
    missing = [d for d in required if flags.get(d) is None]
    if missing:
        parser.error(f"{ns.verb}: missing required flag(s): "
                     + ", ".join("--" + m.replace("_", "-") for m in sorted(missing)))
    return Command(verb=ns.verb, flags=flags, config_path=ns.config)


def _explicit_dests(argv, actions) -> set:
    """Dests of flags literally present on the command line."""
    given = set()
    seen = {opt: action.dest for action in actions.values() for opt in action.option_strings}
    for token in argv:
        name = token.split("=", 1)[0]
        if name in seen:
            given.add(seen[name])
    return given


def _load_config(path: str, verb: str, actions) -> dict:
    with open(path, "r") as fh:
        kv = parse_kv_block(fh.read())
    out = {}
    by_name = {}
    for action in actions.values():
        for opt in action.option_strings:
            by_name[opt.lstrip("-")] = action
    for key, raw in kv.items():
        action = by_name.get(key)
        if action is None:
            raise ParseError(f"{path}: unknown config key {key!r} for verb {verb!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false"):
                raise ParseError(f"{path}: key {key!r} expects true/false, got {raw!r}")
            out[action.dest] = raw.lower() == "true"
        elif action.type is not None:
            out[action.dest] = action.type(raw)
        else:
            out[action.dest] = raw
    return out


# ---------------------------------------------------------------------------
# Verb implementations
# ---------------------------------------------------------------------------

def _run_simulate(f: dict) -> int:
    spec = ScenarioSpec(f["scenario"], f["n"], seed=f["seed"],
                        iv_coef=f["iv_coef"], bridge_phi=f["bridge_phi"])
    ds = generate_scenario(spec, rng_from(f["seed"], label="scenario"))
    if f["observable"]:
        write_csv(ds.observable(), f["out"])
    else:
        write_latent_csv(ds, f["out"])
    return 0


def _run_fit(f: dict) -> int:
    ds = load_csv(f["data"], recode01=f["recode01"])
    ns = NuisanceSet.fit(ds, delta_floor=f["delta_floor"])
    kwargs = dict(kernel=f["kernel"], folds=f["folds"], seed=f["seed"],
                  standardize=f["standardize"])
    if f["lambda_grid"] is not None:
        kwargs["lambda_grid"] = f["lambda_grid"]
    if f["bandwidth_grid"] is not None:
        kwargs["bandwidth_grid"] = f["bandwidth_grid"]
    config = LearnConfig(**kwargs)
    rule = learn_policy(ds, ns, f["scheme"], config)
    save_rule(rule, f["model_out"])
    return 0


def _check_dims(rule, ds: Dataset) -> None:
    if rule.p != ds.p:
        raise ValueError(
            f"model expects {rule.p} covariates but the data has {ds.p}"
        )


def _run_evaluate(f: dict) -> int:
    rule = load_rule(f["model"])
    ds = load_csv(f["data"], recode01=f["recode01"])
    _check_dims(rule, ds)
    ns_data = load_csv(f["train_data"], recode01=f["recode01"]) if f["train_data"] else ds
    ns = NuisanceSet.fit(ns_data, delta_floor=f["delta_floor"])
    scheme = f["scheme"]
    if scheme.startswith("IV_MR"):
        report = value_mr(rule, ds, fit_mr_components(ds, rule, ns))
    elif scheme.startswith("COMPLIER"):
        report = complier_value(rule, ds, ns)
    else:
        report = value_plugin(rule, ds, ns)
    lower = upper = ""
    if f["bounds"]:
        table = build_prob_table(ds, bins=f["bins"])
        br = bp_bounds(table, rule=rule, omega=(f["omega"], 1.0 - f["omega"]))
        lower, upper = "%.17g" % br.lower, "%.17g" % br.upper
    text = "estimate\tstd_error\tlower\tupper\n"
    se = "" if report.std_error is None else "%.17g" % report.std_error
    text += f"{report.estimate:.17g}\t{se}\t{lower}\t{upper}\n"
    _emit(text, f["out"])
    return 0


def _run_bounds(f: dict) -> int:
    rule = load_rule(f["model"])
    ds = load_csv(f["data"], recode01=f["recode01"])
    _check_dims(rule, ds)
    table = build_prob_table(ds, bins=f["bins"])
    br = bp_bounds(table, rule=rule, omega=(f["omega"], 1.0 - f["omega"]))
    lines = ["stratum\tweight\taction\tlower_effect\tupper_effect\tlower_neg\tupper_neg\tlower_pos\tupper_pos"]
    for s in range(len(br.stratum_weights)):
        lines.append("\t".join([
            str(s), "%.17g" % br.stratum_weights[s], "%+d" % int(br.actions[s]),
            "%.17g" % br.lower_effect[s], "%.17g" % br.upper_effect[s],
            "%.17g" % br.lower_neg[s], "%.17g" % br.upper_neg[s],
            "%.17g" % br.lower_pos[s], "%.17g" % br.upper_pos[s],
        ]))
    lines.append(f"aggregate\tlower\t{br.lower:.17g}\tupper\t{br.upper:.17g}"
                 f"\tlower_mixed\t{br.lower_mixed:.17g}\tupper_mixed\t{br.upper_mixed:.17g}")
    _emit("\n".join(lines) + "\n", f["out"])
    return 0


def _run_bench(f: dict) -> int:
    cfg = bench_mod.BenchConfig(
        scenarios=tuple(f["scenarios"]), replications=f["reps"],
        n_train=f["n_train"], n_test=f["n_test"],
        schemes=tuple(f["schemes"]), kernels=tuple(f["kernels"]),
        iv_coef=f["iv_coef"], seed=f["seed"], folds=f["folds"],
        n_jobs=f["threads"],
    )
    result = bench_mod.run_bench(cfg)
    text = "# value\n" + bench_mod.render_table(result, "value")
    text += "# agreement\n" + bench_mod.render_table(result, "agreement")
    atomic_write_text(f["out"], text)
    return 0


_VERBS = {
    "simulate": _run_simulate,
    "fit": _run_fit,
    "evaluate": _run_evaluate,
    "bounds": _run_bounds,
    "bench": _run_bench,
}


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        atomic_write_text(out_path, text)
    else:
        sys.stdout.write(text)


def run(cmd: Command) -> int:
    """Dispatch a validated command; returns the process exit status."""
    try:
        return _VERBS[cmd.verb](cmd.flags)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"ivpolicy {cmd.verb}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        cmd = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(cmd)


if __name__ == "__main__":
    sys.exit(main())
