"""Command-line front end.

Exit codes: 0 success or verified, 1 usage error, 2 invalid model,
3 infeasible or unverified.  Diagnostics go to stderr as ``error[<code>]: ...``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .dot import export_dot
from .gp import SolverOptions
from .model import ModelError, read_model, validate_assumptions
from .observer import SecretRevealedAtStart, build_observer, build_safe_observer, check_cso
from .opacity import StochasticityError, quantify_opacity
from .pmdp import GpIncompatibleModel, build_pmdp
from .posy import AssumptionViolation, PosySyntaxError, UnboundParameterError
from .sim import SimConfig, simulate
from .synthesis import (
    SynthesisResult,
    SynthesisSpec,
    attach_verification,
    determinize_scheduler,
    synthesize,
)

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_UNVERIFIED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, message)


# --------------------------------------------------------------------------
# helpers


def _load_model(path: str):
    try:
        return read_model(path)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read model: {exc}") from None


def _require_valid(m, samples: int = 10, seed: int = 0):
    rep = validate_assumptions(m, samples, seed)
    if not rep.passed:
        raise CliError(EXIT_MODEL, "model violates the modelling assumptions\n" + rep.to_text())
    return rep


def _game(m):
    obs = build_observer(m)
    safe = build_safe_observer(obs)
    return obs, safe, build_pmdp(m, obs, safe)


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read {what}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"{what} is not valid JSON: {exc}") from None


def _load_solution(path: str, m, pmdp) -> SynthesisResult:
    try:
        res = SynthesisResult.from_dict(_read_json(path, "solution"))
    except (KeyError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"malformed solution document: missing {exc}") from None
    if res.model_digest != m.digest():
        raise CliError(EXIT_USAGE, "solution was produced for a different model")
    for i, lab in res.state_labels.items():
        if i >= len(pmdp.states) or pmdp.label(i) != lab:
            raise CliError(EXIT_USAGE, f"solution refers to unknown game state {i} {lab}")
    return res


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write {path}: {exc}") from None


def _finish_result(res: SynthesisResult, out: str | None) -> int:
    if out:
        _write(out, res.to_json())
    print(f"status: {res.status}")
    if res.valuation:
        print("valuation: " + ", ".join(f"{k}={v:.6g}" for k, v in res.valuation.items()))
    if res.verification is not None:
        print(res.verification.to_text())
    if res.status != "verified":
        raise CliError(EXIT_UNVERIFIED, res.message or res.status)
    return EXIT_OK


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    m = _load_model(args.model)
    rep = validate_assumptions(m, args.samples, args.seed)
    print(rep.to_text())
    if not rep.passed:
        raise CliError(EXIT_MODEL, "model violates the modelling assumptions")
    return EXIT_OK


def cmd_observer(args) -> int:
    m = _load_model(args.model)
    obs = build_observer(m)
    if args.dot:
        _write(args.dot, export_dot(obs))
    print(check_cso(obs))
    return EXIT_OK


def cmd_quantify(args) -> int:
    m = _load_model(args.model)
    valuation = _read_json(args.valuation, "valuation") if args.valuation else {}
    rep = quantify_opacity(m, valuation)
    print(f"revelation probability: {rep.p_reveal:.12g}")
    print(f"opacity probability:    {rep.p_cso:.12g}")
    if rep.revealing_strings:
        words = ", ".join("".join(w) or "ε" for w in rep.revealing_strings)
        print(f"first-revealing strings: {words}")
    return EXIT_OK


def cmd_build_pmdp(args) -> int:
    m = _load_model(args.model)
    _require_valid(m, args.samples, args.seed)
    _, _, pmdp = _game(m)
    if args.dot:
        _write(args.dot, export_dot(pmdp))
    for k, v in pmdp.stats().items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    m = _load_model(args.model)
    _require_valid(m, args.samples, args.seed)
    _, _, pmdp = _game(m)
    opts = SolverOptions()
    if args.max_iter:
        opts = dataclasses.replace(opts, max_iter=args.max_iter)
    res = synthesize(m, SynthesisSpec(args.gamma, args.lam), opts, pmdp=pmdp)
    return _finish_result(res, args.out)


def cmd_verify(args) -> int:
    m = _load_model(args.model)
    _, _, pmdp = _game(m)
    res = _load_solution(args.solution, m, pmdp)
    if not res.scheduler and pmdp.insertion_states:
        raise CliError(EXIT_UNVERIFIED, f"solution has no scheduler (status {res.status})")
    return _finish_result(attach_verification(res, m, pmdp), None)


def cmd_determinize(args) -> int:
    m = _load_model(args.model)
    _, _, pmdp = _game(m)
    res = _load_solution(args.solution, m, pmdp)
    if not res.scheduler and pmdp.insertion_states:
        raise CliError(EXIT_UNVERIFIED, f"solution has no scheduler (status {res.status})")
    res.scheduler = determinize_scheduler(res.scheduler, pmdp)
    res.p_o = {}  # the bounds belonged to the randomised scheduler
    return _finish_result(attach_verification(res, m, pmdp), args.out or args.solution)


def cmd_simulate(args) -> int:
    m = _load_model(args.model)
    _, _, pmdp = _game(m)
    res = _load_solution(args.solution, m, pmdp)
    cfg = SimConfig(args.runs, args.seed, args.max_steps)
    rep = simulate(m, pmdp, res.valuation, res.scheduler, cfg)
    print(rep.to_text())
    if args.out:
        _write(args.out, json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    m = _load_model(args.model)
    obs = build_observer(m)
    if args.what == "observer":
        artifact, sched = obs, None
    elif args.what == "safe-observer":
        artifact, sched = build_safe_observer(obs), None
    else:
        artifact = build_pmdp(m, obs, build_safe_observer(obs))
        sched = _load_solution(args.solution, m, artifact).scheduler if args.solution else None
    _write(args.dot, export_dot(artifact, scheduler=sched))
    return EXIT_OK


# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return k


def _unit(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cosynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model", help="model file (.psdes)")
        sp.set_defaults(func=func)
        return sp

    def sampling(sp):
        sp.add_argument("--samples", type=_positive_int, default=10,
                        help="valuations sampled by the assumption checks")
        sp.add_argument("--seed", type=int, default=0)

    sampling(add("validate", cmd_validate, "check the modelling assumptions"))

    sp = add("observer", cmd_observer, "build the observer and decide opacity")
    sp.add_argument("--dot", help="write the observer as DOT")

    sp = add("quantify", cmd_quantify, "probability that the secret is revealed")
    sp.add_argument("--valuation", help="JSON object mapping parameters to values")

    sp = add("build-pmdp", cmd_build_pmdp, "build the all-insertion game")
    sp.add_argument("--dot", help="write the game as DOT")
    sampling(sp)

    sp = add("synthesize", cmd_synthesize, "co-synthesise parameters and insertion strategy")
    sp.add_argument("--gamma", type=_unit, required=True, help="minimum opacity probability")
    sp.add_argument("--lambda", dest="lam", type=_unit, required=True,
                    help="maximum probability of reaching the avoid set")
    sp.add_argument("--out", help="write the result document (JSON)")
    sp.add_argument("--max-iter", type=_positive_int, default=None)
    sampling(sp)

    sp = add("verify", cmd_verify, "re-verify a result document")
    sp.add_argument("--solution", required=True)

    sp = add("determinize", cmd_determinize, "make the strategy deterministic and re-verify")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--out", help="output path (default: overwrite the solution)")

    sp = add("simulate", cmd_simulate, "Monte Carlo estimate under a result document")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--runs", type=_positive_int, default=100000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=_positive_int, default=None)
    sp.add_argument("--out", help="write the report as JSON")

    sp = add("export-dot", cmd_export_dot, "render an artifact as DOT")
    sp.add_argument("--what", choices=("observer", "safe-observer", "pmdp"), default="pmdp")
    sp.add_argument("--dot", required=True)
    sp.add_argument("--solution", help="annotate game edges with this strategy")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.code
    except (ModelError, PosySyntaxError, UnboundParameterError, AssumptionViolation,
            GpIncompatibleModel, SecretRevealedAtStart, StochasticityError) as exc:
        print(f"error[{EXIT_MODEL}]: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
