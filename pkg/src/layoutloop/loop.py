"""The closed-loop session: parse, detect, analyze, diff, correct, repeat.

Each round detects the current image, asks the controller for a corrected
layout, diffs the two, and either executes the plan or stops: an empty diff
means the proposal matches what is already there. Sessions record every
round verbatim so a run can be replayed bit-for-bit against the mock
backend.
"""

from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .chat import ChatClient
from .detection import DetectionContext, detect_objects
from .errors import (
    BackendUnavailable,
    GrammarError,
    LayoutLoopError,
    RangeViolation,
    TransportError,
)
from .geometry import DEFAULT_EPS, ImageRef, Layout, format_label
from .latent import DEFAULT_FREEZE_FRACTION, execute_plan
from .planner import EditPlan, diff_layouts, is_terminal
from .prompts import (
    MODE_EDITING,
    MODE_SELF_CORRECTION,
    ChatExchange,
    ParsedPrompt,
    build_controller_prompt,
    build_parser_prompt,
    parse_controller_response,
    parse_parser_response,
)
from .seeds import rng_for

if typing.TYPE_CHECKING:
    from .backends import GenerationBackend

OUTCOME_CONVERGED = "converged"
OUTCOME_BUDGET_EXHAUSTED = "budget_exhausted"
OUTCOME_ABORTED = "aborted"

_RETRY_NOTE = (
    "\n\nYour previous reply could not be parsed ({error}). "
    "Answer again and end with a single valid 'Updated Objects:' line."
)
_PARSER_RETRY_NOTE = (
    "\n\nYour previous reply could not be parsed ({error}). "
    "Answer again with valid 'Objects:' and 'Negation:' lines."
)


@dataclass(frozen=True)
class SessionConfig:
    """Knobs of one session; defaults follow the package-wide choices."""

    max_rounds: int = 2
    mode: str = MODE_SELF_CORRECTION
    seed: int = 0
    eps: float = DEFAULT_EPS
    detector_threshold: float = 0.15
    predicate_mode: str = "extent"
    freeze_fraction: float = DEFAULT_FREEZE_FRACTION
    reparse_each_round: bool = False

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass(frozen=True)
class RoundRecord:
    """Everything one round saw and decided."""

    round_index: int
    parsed: ParsedPrompt
    b_curr: Layout
    supplementary_counts: tuple[tuple[str, int], ...]
    controller_exchange: ChatExchange
    b_next: Layout
    plan: EditPlan
    image_before: ImageRef
    image_after: ImageRef
    terminal: bool
    dropped_ops: tuple = ()

    def __post_init__(self):
        if self.terminal != is_terminal(self.plan):
            raise ValueError("terminal flag must equal is_terminal(plan)")


@dataclass(frozen=True)
class SessionRecord:
    """Full trace of one session."""

    prompt: str
    config: SessionConfig
    rounds: tuple[RoundRecord, ...]
    final_image: ImageRef
    outcome: str
    parser_exchange: ChatExchange | None = None
    error: str | None = None

    def __post_init__(self):
        converged = bool(self.rounds) and self.rounds[-1].terminal
        if self.outcome == OUTCOME_CONVERGED and not converged:
            raise ValueError("outcome 'converged' requires a terminal last round")
        if self.outcome == OUTCOME_BUDGET_EXHAUSTED and converged:
            raise ValueError("outcome 'budget_exhausted' contradicts a terminal last round")

    @property
    def session_id(self) -> str:
        key = f"{self.prompt}|{self.config.seed}|{self.config.mode}|{self.config.max_rounds}"
        return "session-" + hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]


@dataclass
class SessionBackends:
    """Everything a session talks to."""

    chat: ChatClient
    image: "GenerationBackend"
    generate_initial: typing.Callable[[str, int], ImageRef] | None = None


class _Abort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _complete_and_parse(chat: ChatClient, prompt_text: str, parser, retry_note: str):
    """One completion with a single re-ask on grammar trouble."""
    exchange = chat.complete(prompt_text)
    try:
        return exchange, parser(exchange.reply_text)
    except (GrammarError, RangeViolation) as first_error:
        retry_prompt = prompt_text + retry_note.format(error=first_error)
        exchange = chat.complete(retry_prompt)
        try:
            return exchange, parser(exchange.reply_text)
        except (GrammarError, RangeViolation) as second_error:
            raise _Abort(f"controller reply unparseable after retry: {second_error}") from None


def run_session(
    prompt: str,
    initial: ImageRef | None,
    config: SessionConfig,
    backends: SessionBackends,
) -> SessionRecord:
    """Iterate detect-analyze-correct for up to max_rounds rounds.

    Converges when a round's plan is empty; exhausts its budget when every
    round produced corrections; aborts on unrecoverable chat or backend
    failures, keeping the rounds recorded so far.
    """
    if initial is None:
        if backends.generate_initial is None:
            raise ValueError("no initial image and no generator backend configured")
        image = backends.generate_initial(prompt, config.seed)
    else:
        image = initial

    rounds: list[RoundRecord] = []
    parsed: ParsedPrompt | None = None
    parser_exchange: ChatExchange | None = None
    error: str | None = None

    try:
        for round_index in range(1, config.max_rounds + 1):
            if parsed is None or config.reparse_each_round:
                parser_exchange, parsed = _complete_and_parse(
                    backends.chat,
                    build_parser_prompt(prompt),
                    parse_parser_response,
                    _PARSER_RETRY_NOTE,
                )
            context = detect_objects(
                image, parsed, config.detector_threshold, backends.image
            )
            vocabulary = parsed.base_names()
            controller_prompt = build_controller_prompt(prompt, context.layout, config.mode)
            exchange, b_next = _complete_and_parse(
                backends.chat,
                controller_prompt,
                lambda reply: parse_controller_response(reply, vocabulary),
                _RETRY_NOTE,
            )
            plan = diff_layouts(context.layout, b_next, eps=config.eps)
            terminal = is_terminal(plan)
            image_after = image
            dropped = ()
            if not terminal:
                round_seed = int(rng_for(config.seed, round_index).integers(2**63))
                outcome = execute_plan(
                    image, plan, round_seed, backends.image, freeze_fraction=config.freeze_fraction
                )
                image_after = outcome.image
                dropped = tuple(op.canonical for op in outcome.dropped)
            rounds.append(
                RoundRecord(
                    round_index=round_index,
                    parsed=parsed,
                    b_curr=context.layout,
                    supplementary_counts=context.supplementary_counts,
                    controller_exchange=exchange,
                    b_next=b_next,
                    plan=plan,
                    image_before=image,
                    image_after=image_after,
                    terminal=terminal,
                    dropped_ops=dropped,
                )
            )
            image = image_after
            if terminal:
                break
    except _Abort as abort:
        error = abort.reason
    except (TransportError, BackendUnavailable, LayoutLoopError) as exc:
        error = f"{type(exc).__name__}: {exc}"

    if error is not None:
        outcome_name = OUTCOME_ABORTED
    elif rounds and rounds[-1].terminal:
        outcome_name = OUTCOME_CONVERGED
    else:
        outcome_name = OUTCOME_BUDGET_EXHAUSTED
    return SessionRecord(
        prompt=prompt,
        config=config,
        rounds=tuple(rounds),
        final_image=image,
        outcome=outcome_name,
        parser_exchange=parser_exchange,
        error=error,
    )


def run_edit(
    instruction: str,
    image: ImageRef,
    config: SessionConfig,
    backends: SessionBackends,
) -> SessionRecord:
    """The same loop driven by editing instructions on an existing image."""
    if image is None:
        raise ValueError("editing requires an existing image")
    edit_config = SessionConfig(
        max_rounds=config.max_rounds,
        mode=MODE_EDITING,
        seed=config.seed,
        eps=config.eps,
        detector_threshold=config.detector_threshold,
        predicate_mode=config.predicate_mode,
        freeze_fraction=config.freeze_fraction,
        reparse_each_round=config.reparse_each_round,
    )
    return run_session(instruction, image, edit_config, backends)


# -- record serialization -----------------------------------------------------


def _layout_jsonable(layout: Layout) -> list[dict]:
    return [
        {"label": format_label(label), "box": [round(v, 6) for v in box.as_list()]}
        for label, box in layout
    ]


def _exchange_jsonable(exchange: ChatExchange | None) -> dict | None:
    if exchange is None:
        return None
    return {
        "prompt_text": exchange.prompt_text,
        "reply_text": exchange.reply_text,
        "model_id": exchange.model_id,
        "latency_ms": exchange.latency_ms,
        "retries": exchange.retries,
    }


def record_to_jsonable(record: SessionRecord) -> dict:
    return {
        "prompt": record.prompt,
        "session_id": record.session_id,
        "outcome": record.outcome,
        "error": record.error,
        "config": {
            "max_rounds": record.config.max_rounds,
            "mode": record.config.mode,
            "seed": record.config.seed,
            "eps": record.config.eps,
            "detector_threshold": record.config.detector_threshold,
            "predicate_mode": record.config.predicate_mode,
            "freeze_fraction": record.config.freeze_fraction,
            "reparse_each_round": record.config.reparse_each_round,
        },
        "parser_exchange": _exchange_jsonable(record.parser_exchange),
        "final_image": record.final_image.handle,
        "rounds": [
            {
                "round_index": r.round_index,
                "objects": [
                    {"name": name, "slots": list(slots)} for name, slots in r.parsed.objects
                ],
                "negations": list(r.parsed.negations),
                "b_curr": _layout_jsonable(r.b_curr),
                "supplementary_counts": [list(pair) for pair in r.supplementary_counts],
                "controller_exchange": _exchange_jsonable(r.controller_exchange),
                "b_next": _layout_jsonable(r.b_next),
                "plan": [
                    {
                        "kind": op.kind,
                        "label": op.canonical,
                        "from_box": None if op.from_box is None else [round(v, 6) for v in op.from_box.as_list()],
                        "to_box": None if op.to_box is None else [round(v, 6) for v in op.to_box.as_list()],
                        "prior_attribute": op.prior_attribute,
                    }
                    for op in r.plan
                ],
                "image_before": r.image_before.handle,
                "image_after": r.image_after.handle,
                "terminal": r.terminal,
                "dropped_ops": list(r.dropped_ops),
            }
            for r in record.rounds
        ],
    }


def write_session_record(record: SessionRecord, out_dir: str | Path) -> Path:
    """Serialize the session under <out>/<session-id>/record."""
    session_dir = Path(out_dir) / record.session_id
    session_dir.mkdir(parents=True, exist_ok=True)
    path = session_dir / "record"
    payload = json.dumps(record_to_jsonable(record), indent=2, sort_keys=True)
    path.write_text(payload + "\n", encoding="utf-8")
    return path
