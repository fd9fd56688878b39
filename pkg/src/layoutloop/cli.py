"""Command-line entry point wiring config, backends, and the workflows.

Four subcommands: generate (closed-loop generation), edit (instruction-driven
editing), eval (suite accuracy), simulate (Monte Carlo closed-loop trials).
The mock backend is the default so everything runs with zero external
services; real endpoints are opt-in via --backend and --llm-endpoint.

Exit codes: 0 converged/complete, 2 budget exhausted, 1 aborted or usage
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .backends import HttpBackend
from .chat import ChatClient, ChatConfig, HttpChatTransport
from .errors import LayoutLoopError
from .evaluation import aggregate_suite, evaluate_case, load_suite
from .loop import (
    OUTCOME_BUDGET_EXHAUSTED,
    OUTCOME_CONVERGED,
    SessionBackends,
    SessionConfig,
    run_edit,
    run_session,
    write_session_record,
)
from .mock_backend import MockBackend, SceneObject
from .geometry import BoundingBox, ImageRef
from .seeds import rng_for
from .simulated_llm import (
    MockSceneGenerator,
    SimulatedControllerTransport,
    layout_from_scene,
)
from .simulation import ErrorProfile, run_experiment

LLM_KEY_ENV = "LAYOUTLOOP_LLM_KEY"

DEFAULTS = {
    "backend": "mock",
    "seed": 0,
    "out": "runs",
    "rounds": 2,
    "eps": 0.02,
    "threshold": 0.15,
    "predicate_mode": "extent",
    "grid": 64,
    "steps": 10,
    "llm_endpoint": None,
    "llm_model": "controller-default",
    "profile": {"p_missing": 0.5, "p_wrong_attr": 0.3, "p_misplaced": 0.5, "p_extra": 0.2},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being clobbered
    # by the subparser's defaults.
    shared = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    shared.add_argument("--backend", help="generation backend: 'mock' or a base URL")
    shared.add_argument("--seed", type=int, help="root random seed")
    shared.add_argument("--out", help="output directory for records and images")
    shared.add_argument("--eps", type=float, help="box alignment tolerance")
    shared.add_argument("--threshold", type=float, help="detector confidence threshold")
    shared.add_argument("--predicate-mode", choices=("extent", "center"), dest="predicate_mode")
    shared.add_argument("--grid", type=int, help="mock latent grid size")
    shared.add_argument("--steps", type=int, help="mock diffusion step count")
    shared.add_argument("--llm-endpoint", dest="llm_endpoint", help="chat completion URL")
    shared.add_argument("--llm-model", dest="llm_model", help="chat model id")
    return shared


def _build_parser() -> _Parser:
    shared = _global_flags()
    parser = _Parser(prog="layoutloop", description=__doc__, parents=[shared])
    parser.add_argument("--config", help="JSON config file; flags override it")

    sub = parser.add_subparsers(dest="command")

    generate = sub.add_parser(
        "generate", help="closed-loop text-to-image session", parents=[shared]
    )
    generate.add_argument("--prompt", required=True)
    generate.add_argument("--image", help="scene JSON for the initial image (skip generation)")
    generate.add_argument("--rounds", type=int, help="maximum correction rounds")

    edit = sub.add_parser("edit", help="instruction-driven editing session", parents=[shared])
    edit.add_argument("--image", required=True, help="scene JSON of the image to edit")
    edit.add_argument("--instruction", required=True)
    edit.add_argument("--rounds", type=int)

    evaluate = sub.add_parser(
        "eval", help="run a benchmark suite and report accuracy", parents=[shared]
    )
    evaluate.add_argument("--suite", required=True)
    evaluate.add_argument("--results", help="directory for the table and verdicts")

    simulate = sub.add_parser(
        "simulate", help="Monte Carlo closed-loop experiment", parents=[shared]
    )
    simulate.add_argument("--config", dest="sim_config", required=True, help="experiment JSON")
    simulate.add_argument("--jobs", type=int, default=1)

    return parser


def _settings(args) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            settings.update(json.load(f))
    for key in (
        "backend", "seed", "out", "eps", "threshold", "predicate_mode",
        "grid", "steps", "llm_endpoint", "llm_model",
    ):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _make_backend(settings):
    if settings["backend"] == "mock":
        return MockBackend(grid=settings["grid"], total_steps=settings["steps"])
    return HttpBackend(settings["backend"])


def _make_chat(settings) -> ChatClient:
    config = ChatConfig(model_id=settings["llm_model"])
    if settings["backend"] == "mock" and not settings["llm_endpoint"]:
        return ChatClient(SimulatedControllerTransport(mode=settings["predicate_mode"]), config)
    if not settings["llm_endpoint"]:
        raise LayoutLoopError("a non-mock run needs --llm-endpoint")
    transport = HttpChatTransport(settings["llm_endpoint"], api_key=os.environ.get(LLM_KEY_ENV))
    return ChatClient(transport, config)


def _session_config(settings, rounds=None) -> SessionConfig:
    return SessionConfig(
        max_rounds=rounds or settings["rounds"],
        seed=settings["seed"],
        eps=settings["eps"],
        detector_threshold=settings["threshold"],
        predicate_mode=settings["predicate_mode"],
    )


def _load_scene_image(backend, path: str) -> ImageRef:
    if not isinstance(backend, MockBackend):
        # Real backends own their images; the argument is a known handle.
        _, height, width = backend.latent_shape
        return ImageRef(handle=path, width=width, height=height)
    with open(path, encoding="utf-8") as f:
        entry = json.load(f)
    objects = [
        SceneObject(
            name=o["name"], attribute=o.get("attribute"), box=BoundingBox(*o["box"]),
            score=o.get("score"),
        )
        for o in entry["objects"]
    ]
    return backend.register_scene(objects)


def _finish_session(record, backend, out_dir: str) -> int:
    path = write_session_record(record, out_dir)
    if isinstance(backend, MockBackend):
        for r in record.rounds:
            array = backend.export_image(r.image_after)
            np.save(path.parent / f"round-{r.round_index:02d}.npy", array)
    print(f"outcome: {record.outcome}")
    print(f"record: {path}")
    if record.error:
        print(f"error: {record.error}", file=sys.stderr)
    if record.outcome == OUTCOME_CONVERGED:
        return 0
    if record.outcome == OUTCOME_BUDGET_EXHAUSTED:
        return 2
    return 1


def _cmd_generate(args, settings) -> int:
    backend = _make_backend(settings)
    chat = _make_chat(settings)
    generator = None
    if isinstance(backend, MockBackend):
        generator = MockSceneGenerator(backend, ErrorProfile(**settings["profile"]))
    initial = _load_scene_image(backend, args.image) if args.image else None
    backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
    record = run_session(args.prompt, initial, _session_config(settings, args.rounds), backends)
    return _finish_session(record, backend, settings["out"])


def _cmd_edit(args, settings) -> int:
    backend = _make_backend(settings)
    chat = _make_chat(settings)
    image = _load_scene_image(backend, args.image)
    backends = SessionBackends(chat=chat, image=backend, generate_initial=None)
    record = run_edit(args.instruction, image, _session_config(settings, args.rounds), backends)
    return _finish_session(record, backend, settings["out"])


def _cmd_eval(args, settings) -> int:
    cases = load_suite(args.suite)
    backend_name = settings["backend"]
    results = []
    verdicts = []
    for index, case in enumerate(cases):
        backend = _make_backend(settings)
        chat = ChatClient(
            SimulatedControllerTransport(case=case, mode=settings["predicate_mode"])
        ) if backend_name == "mock" else _make_chat(settings)
        generator = None
        if isinstance(backend, MockBackend):
            generator = MockSceneGenerator(backend, ErrorProfile(**settings["profile"]))
        config = SessionConfig(
            max_rounds=settings["rounds"],
            seed=int(rng_for(settings["seed"], index).integers(2**63)),
            eps=settings["eps"],
            detector_threshold=settings["threshold"],
            predicate_mode=settings["predicate_mode"],
        )
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(case.prompt, None, config, backends)
        if isinstance(backend, MockBackend):
            layout = layout_from_scene(backend.scene_of(record.final_image))
        else:
            layout = record.rounds[-1].b_next if record.rounds else None
        ok = layout is not None and evaluate_case(case, layout, mode=settings["predicate_mode"])
        results.append((case, ok))
        verdicts.append(
            {"id": case.id, "task_type": case.task_type, "passed": ok, "outcome": record.outcome}
        )
    table = aggregate_suite(results)
    print(table.format())
    results_dir = Path(args.results or Path(settings["out"]) / "eval")
    results_dir.mkdir(parents=True, exist_ok=True)
    (results_dir / "accuracy.tsv").write_text(table.format() + "\n", encoding="utf-8")
    with open(results_dir / "verdicts.jsonl", "w", encoding="utf-8") as f:
        for verdict in verdicts:
            f.write(json.dumps(verdict) + "\n")
    return 0


def _cmd_simulate(args, settings) -> int:
    with open(args.sim_config, encoding="utf-8") as f:
        experiment = json.load(f)
    cases = load_suite(experiment["cases_path"])
    profile = ErrorProfile(**experiment.get("profile", {}))
    result = run_experiment(
        cases=cases,
        profile=profile,
        q=experiment.get("q", 0.7),
        rounds=experiment.get("K", 2),
        trials=experiment.get("trials", 1000),
        seed=experiment.get("seed", settings["seed"]),
        mode=settings["predicate_mode"],
        eps=settings["eps"],
        jobs=max(1, args.jobs),
    )
    print(result.format())
    out_dir = Path(settings["out"]) / "simulate"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "accuracy.tsv").write_text(result.format() + "\n", encoding="utf-8")
    with open(out_dir / "trials.jsonl", "w", encoding="utf-8") as f:
        for trial in result.trials:
            f.write(json.dumps({"case_id": trial.case_id, "passes": list(trial.passes)}) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.error("a subcommand is required (generate, edit, eval, simulate)")
    settings = _settings(args)
    Path(settings["out"]).mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "generate":
            return _cmd_generate(args, settings)
        if args.command == "edit":
            return _cmd_edit(args, settings)
        if args.command == "eval":
            return _cmd_eval(args, settings)
        return _cmd_simulate(args, settings)
    except LayoutLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
