"""Command-line entry point.

Exit codes: 0 success, 1 domain error (the error class name is printed),
2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import sys

from . import __version__
from .engine import PrecisionSet
from .errors import ActSimError
from .fixtures import load_fixture
from .lab import SweepSpec, _atomic_write, render, run_sweep
from .scenarios import TrialConfig, TrialRecord, run_trial
from .services import run_course
from .validation import run_validation

STOCHASTIC = {"simulate-duet", "sweep", "course"}
TRIAL_HEADER = "t,world_state,observation,percept,confidence,action,argmax_policy,hallucination,miss"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actsim", description="Active-inference hallucination simulations.")
    parser.add_argument("--version", action="version", version=f"actsim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, formats, default_format):
        p.add_argument("--fixture", help="fixture JSON document (default: the packaged fixture)")
        p.add_argument("--seed", type=int, help="integer seed (required for stochastic commands)")
        p.add_argument("--out", help="output path; written atomically. Default: standard output")
        p.add_argument("--format", choices=formats, default=default_format, help="output format")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a fixture value by dotted key, e.g. duet.strong_prior=0.8 (repeatable)",
        )
        p.add_argument("--variant", help="policy variant: full, matched_only, listening_biased, lesioned")
        p.add_argument("--zeta", type=float, help="sensory precision")
        p.add_argument("--gamma", type=float, help="policy-prior precision")

    common(sub.add_parser("simulate-duet", help="run one duet trial"), ["csv", "json"], "csv")
    common(sub.add_parser("simulate-song", help="run one song trial"), ["csv", "json"], "csv")
    p = sub.add_parser("sweep", help="zeta x gamma x policy-variant sweep")
    common(p, ["csv", "json", "svg_heatmap"], "csv")
    p.add_argument("--workers", type=int, default=1, help="concurrent cells (output does not depend on it)")
    p = sub.add_parser("course", help="longitudinal treatment course")
    common(p, ["csv", "json"], "csv")
    p.add_argument("--patient", help="patient profile name (default: courses.default.patient)")
    p.add_argument("--program", help="program name (default: courses.default.program)")
    common(sub.add_parser("validate", help="oracle and regime self-checks"), ["text"], "text")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    section = "song" if args.command == "simulate-song" else "duet"
    if args.command == "sweep":
        if args.variant is not None:
            out["sweep.policy_variants"] = [args.variant]
        if args.zeta is not None:
            out["sweep.zeta_grid"] = [args.zeta]
        if args.gamma is not None:
            out["sweep.gamma_grid"] = [args.gamma]
    else:
        if args.variant is not None:
            out["duet.variant"] = args.variant
        if args.zeta is not None:
            out[f"{section}.zeta"] = args.zeta
        if args.gamma is not None:
            out[f"{section}.gamma"] = args.gamma
    return out


def trial_csv(record: TrialRecord) -> str:
    buf = io.StringIO()
    buf.write(TRIAL_HEADER + "\n")
    for s in record.steps:
        buf.write(
            f"{s.t},{s.world_state},{s.observation},{s.percept},{s.confidence:.6f},{s.action},"
            f"{s.argmax_policy},{int(s.hallucination)},{int(s.miss)}\n"
        )
    return buf.getvalue()


def trial_json(record: TrialRecord) -> str:
    doc = {
        "summary": record.summary(),
        "steps": [
            {
                "t": s.t,
                "world_state": s.world_state,
                "observation": s.observation,
                "q_state": s.q_state.to_dict(),
                "percept": s.percept,
                "confidence": s.confidence,
                "action": s.action,
                "argmax_policy": s.argmax_policy,
                "hallucination": s.hallucination,
                "miss": s.miss,
            }
            for s in record.steps
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out) -> None:
    if out:
        _atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _simulate_duet(fx, args) -> int:
    cfg = fx["duet"]
    model = fx.duet_model()
    world = fx.duet_world(seed=args.seed)
    record = run_trial(TrialConfig(model, world, PrecisionSet(cfg["zeta"], cfg["gamma"]), seed=args.seed))
    _emit(trial_csv(record) if args.format == "csv" else trial_json(record), args.out)
    return 0


def _simulate_song(fx, args) -> int:
    cfg = fx["song"]
    record = run_trial(TrialConfig(fx.song_model(), fx.song_world(), PrecisionSet(cfg["zeta"], cfg["gamma"]), seed=args.seed or 0))
    _emit(trial_csv(record) if args.format == "csv" else trial_json(record), args.out)
    return 0


def _sweep(fx, args) -> int:
    spec = SweepSpec.from_fixture(fx, base_seed=args.seed)
    result = run_sweep(spec, workers=args.workers)
    _emit(render(result, args.format), args.out)
    return 0


def _course(fx, args) -> int:
    cfg = fx["courses"]["default"]
    patient = fx.patient(args.patient or cfg["patient"])
    program = fx.program(args.program or cfg["program"])
    schedule = [None] * int(cfg["untreated"]) + [program] * int(cfg["enrolled"]) + [None] * int(cfg["after"])
    seeds = [args.seed + e for e in range(len(schedule))]
    world = fx.duet_world()
    course = run_course(patient, schedule, len(schedule), seeds, world, fx.threshold("relapse"), fx.threshold("remission"))
    _emit(render(course, args.format), args.out)
    return 0


def _validate(fx, args) -> int:
    checks = run_validation(fx)
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in checks]
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {
    "simulate-duet": _simulate_duet,
    "simulate-song": _simulate_song,
    "sweep": _sweep,
    "course": _course,
    "validate": _validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command} requires --seed")
        overrides = _overrides(args)
    except UsageError as exc:
        print(f"actsim: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        fixture = load_fixture(args.fixture).with_overrides(overrides)
        return COMMANDS[args.command](fixture, args)
    except ActSimError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
