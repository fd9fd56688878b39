"""Session loop: convergence, budgets, aborts, records, replayability."""

import numpy as np
import pytest

from layoutloop.chat import ChatClient, ChatConfig
from layoutloop.errors import TransportError
from layoutloop.geometry import BoundingBox
from layoutloop.loop import (
    OUTCOME_ABORTED,
    OUTCOME_BUDGET_EXHAUSTED,
    OUTCOME_CONVERGED,
    SessionBackends,
    SessionConfig,
    record_to_jsonable,
    run_edit,
    run_session,
    write_session_record,
)
from layoutloop.mock_backend import MockBackend, SceneObject
from layoutloop.simulated_llm import MockSceneGenerator, SimulatedControllerTransport
from layoutloop.simulation import ErrorProfile
from layoutloop.benchmark import random_case

PARSER_REPLY_CAR_TRUCK = (
    "Reasoning: two attributed objects.\n"
    "Objects: [('car', ['green']), ('truck', ['blue'])]\n"
    "Negation: "
)

TABLE6_EX1_UPDATED = (
    "Reasoning: To move the green car rightward, its x-coordinate needs to be increased.\n"
    "Updated Objects: [('green car #1', [0.327, 0.365, 0.275, 0.207]),"
    " ('blue truck #1', [0.350, 0.369, 0.472, 0.408])]"
)


class ScriptedChat:
    """Returns canned replies; a callable item may compute from the prompt."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def __call__(self, payload):
        self.prompts.append(payload["messages"][-1]["content"])
        item = self.replies.pop(0)
        if callable(item):
            return item(payload["messages"][-1]["content"]), 0
        if isinstance(item, Exception):
            raise item
        return item, 0


def echo_current_objects(prompt_text: str) -> str:
    current = None
    for line in prompt_text.split("\n"):
        stripped = line.strip()
        if stripped.startswith("Current Objects:"):
            current = stripped[len("Current Objects:"):].strip()
    return f"Reasoning: already aligned.\nUpdated Objects: {current}"


def chat_client(transport):
    return ChatClient(transport, ChatConfig(max_retries=1, backoff_base_s=0.0))


def simulated_backends(seed_profile=None, grid=64):
    backend = MockBackend(grid=grid)
    generator = MockSceneGenerator(backend, seed_profile or ErrorProfile())
    chat = ChatClient(SimulatedControllerTransport(), ChatConfig(backoff_base_s=0.0))
    return backend, SessionBackends(chat=chat, image=backend, generate_initial=generator)


class TestRunSession:
    def test_already_correct_converges_round_one(self):
        _, backends = simulated_backends()
        record = run_session(
            "a realistic photo of a scene with two cats",
            None,
            SessionConfig(max_rounds=2, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        assert len(record.rounds) == 1
        assert record.rounds[0].terminal
        assert record.final_image == record.rounds[0].image_before

    def test_missing_object_fixed_in_two_rounds(self):
        backend, backends = simulated_backends(ErrorProfile(p_missing=1.0))
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=3, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        assert [r.terminal for r in record.rounds] == [False, True]
        assert [op.kind for op in record.rounds[0].plan] == ["add"]
        scene = backend.scene_of(record.final_image)
        assert [o.name for o in scene] == ["cat"]

    def test_budget_exhausted_when_never_terminal(self):
        backend = MockBackend(grid=64)
        generator = MockSceneGenerator(backend, ErrorProfile(p_missing=1.0))
        # A controller that proposes a fresh position every round never terminates.
        positions = iter([0.05, 0.55, 0.15, 0.65])

        def restless(prompt_text):
            x = next(positions)
            return f"Reasoning: elsewhere.\nUpdated Objects: [('cat #1', [{x}, {x}, 0.2, 0.2])]"

        chat = chat_client(
            ScriptedChat([PARSER_REPLY_CAT, restless, restless, restless])
        )
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=3, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_BUDGET_EXHAUSTED
        assert len(record.rounds) == 3
        assert not record.rounds[-1].terminal

    def test_k1_budget_boundary(self):
        _, backends = simulated_backends(ErrorProfile(p_missing=1.0))
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=1, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_BUDGET_EXHAUSTED
        assert len(record.rounds) == 1

    def test_requires_generator_or_image(self):
        backend = MockBackend(grid=16)
        chat = chat_client(ScriptedChat([]))
        backends = SessionBackends(chat=chat, image=backend, generate_initial=None)
        with pytest.raises(ValueError):
            run_session("prompt", None, SessionConfig(), backends)

    def test_transport_failure_aborts(self):
        backend = MockBackend(grid=16)
        generator = MockSceneGenerator(backend, ErrorProfile())
        chat = ChatClient(
            ScriptedChat([TransportError("down"), TransportError("down")]),
            ChatConfig(max_retries=1, backoff_base_s=0.0),
        )
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=2, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_ABORTED
        assert "TransportError" in record.error

    def test_grammar_failure_retries_once_then_aborts(self):
        backend = MockBackend(grid=64)
        generator = MockSceneGenerator(backend, ErrorProfile())
        chat = chat_client(
            ScriptedChat([PARSER_REPLY_CAT, "no layout here", "still no layout"])
        )
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=2, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_ABORTED
        assert "unparseable" in record.error

    def test_grammar_retry_recovers(self):
        backend = MockBackend(grid=64)
        generator = MockSceneGenerator(backend, ErrorProfile())
        chat = chat_client(
            ScriptedChat([PARSER_REPLY_CAT, "garbled", echo_current_objects])
        )
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=2, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        # the retry prompt carries the error note
        assert "could not be parsed" in chat.transport.prompts[2]

    def test_parse_cached_after_round_one(self):
        backend = MockBackend(grid=64)
        generator = MockSceneGenerator(backend, ErrorProfile(p_missing=1.0))
        transport = ScriptedChat(
            [PARSER_REPLY_CAT, SimulatedControllerTransport(), SimulatedControllerTransport()]
        )

        class CountingTransport:
            def __init__(self):
                self.parser_calls = 0
                self.inner = SimulatedControllerTransport()

            def __call__(self, payload):
                if "Excellent Parser" in payload["messages"][-1]["content"]:
                    self.parser_calls += 1
                return self.inner(payload)

        counting = CountingTransport()
        chat = ChatClient(counting, ChatConfig(backoff_base_s=0.0))
        backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=3, seed=5),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        assert counting.parser_calls == 1

    def test_round_indices_strictly_increase_and_stop_at_terminal(self):
        rng = np.random.default_rng(43)
        for i in range(10):
            case = random_case(f"c{i}", rng, max_objects=4)
            backend = MockBackend(grid=64)
            generator = MockSceneGenerator(
                backend, ErrorProfile(p_missing=0.6, p_wrong_attr=0.4, p_extra=0.3)
            )
            chat = ChatClient(SimulatedControllerTransport(case=case), ChatConfig())
            backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
            record = run_session(
                case.prompt, None, SessionConfig(max_rounds=3, seed=i), backends
            )
            indices = [r.round_index for r in record.rounds]
            assert indices == list(range(1, len(indices) + 1))
            for r in record.rounds[:-1]:
                assert not r.terminal

    def test_oracle_converges_within_two_rounds_full_engine(self):
        rng = np.random.default_rng(47)
        for i in range(12):
            case = random_case(f"c{i}", rng, max_objects=4)
            backend = MockBackend(grid=64)
            generator = MockSceneGenerator(
                backend, ErrorProfile(p_missing=0.7, p_wrong_attr=0.5, p_extra=0.4)
            )
            chat = ChatClient(SimulatedControllerTransport(case=case), ChatConfig())
            backends = SessionBackends(chat=chat, image=backend, generate_initial=generator)
            record = run_session(
                case.prompt, None, SessionConfig(max_rounds=3, seed=100 + i), backends
            )
            assert record.outcome == OUTCOME_CONVERGED, case.prompt
            assert len(record.rounds) <= 2


PARSER_REPLY_CAT = (
    "Reasoning: one object.\nObjects: [('cat', [None])]\nNegation: "
)


class TestRunEdit:
    def make_edit_scene(self):
        backend = MockBackend(grid=64)
        image = backend.register_scene(
            [
                SceneObject("car", "green", BoundingBox(0.027, 0.365, 0.275, 0.207)),
                SceneObject("truck", "blue", BoundingBox(0.350, 0.368, 0.272, 0.208)),
            ]
        )
        return backend, image

    def test_move_and_enlarge_two_repositions(self):
        backend, image = self.make_edit_scene()
        chat = chat_client(
            ScriptedChat([PARSER_REPLY_CAR_TRUCK, TABLE6_EX1_UPDATED, echo_current_objects])
        )
        backends = SessionBackends(chat=chat, image=backend)
        record = run_edit(
            "Move the green car to the right and make the blue truck larger in the image.",
            image,
            SessionConfig(max_rounds=2, seed=3),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        plan = record.rounds[0].plan
        assert sorted(plan.kinds()) == ["reposition", "reposition"]
        car = next(op for op in plan if op.canonical == "green car #1")
        assert car.to_box.x == pytest.approx(0.327)
        # editing prompts carry the editing in-context examples
        assert "Move the green car to the right" in record.rounds[0].controller_exchange.prompt_text

    def test_remove_leftmost_bowl(self):
        backend = MockBackend(grid=64)
        image = backend.register_scene(
            [
                SceneObject("dog", None, BoundingBox(0.186, 0.592, 0.449, 0.408)),
                SceneObject("bowl", None, BoundingBox(0.376, 0.194, 0.324, 0.324)),
                SceneObject("bowl", None, BoundingBox(0.676, 0.494, 0.324, 0.324)),
            ]
        )
        parser_reply = (
            "Reasoning: bowls and a dog.\nObjects: [('bowl', [None, None]), ('dog', [None])]\nNegation: "
        )
        controller_reply = (
            "Reasoning: bowl #1 is the leftmost.\n"
            "Updated Objects: [('dog #1', [0.186, 0.592, 0.449, 0.408]),"
            " ('bowl #2', [0.676, 0.494, 0.324, 0.324])]"
        )
        chat = chat_client(ScriptedChat([parser_reply, controller_reply, echo_current_objects]))
        backends = SessionBackends(chat=chat, image=backend)
        record = run_edit(
            "Remove the leftmost bowl in this photo with two bowls and a dog.",
            image,
            SessionConfig(max_rounds=2, seed=3),
            backends,
        )
        assert record.outcome == OUTCOME_CONVERGED
        assert [op.kind for op in record.rounds[0].plan] == ["delete"]
        assert record.rounds[0].plan.ops[0].canonical == "bowl #1"
        scene = backend.scene_of(record.final_image)
        assert len([o for o in scene if o.name == "bowl"]) == 1

    def test_instruction_matching_current_scene_terminal(self):
        backend, image = self.make_edit_scene()
        chat = chat_client(ScriptedChat([PARSER_REPLY_CAR_TRUCK, echo_current_objects]))
        backends = SessionBackends(chat=chat, image=backend)
        record = run_edit(
            "Keep everything as it is.", image, SessionConfig(max_rounds=2, seed=3), backends
        )
        assert record.outcome == OUTCOME_CONVERGED
        assert len(record.rounds) == 1


class TestRecords:
    def test_record_write_and_shape(self, tmp_path):
        _, backends = simulated_backends(ErrorProfile(p_missing=1.0))
        record = run_session(
            "a realistic photo of a scene with one cat",
            None,
            SessionConfig(max_rounds=2, seed=5),
            backends,
        )
        path = write_session_record(record, tmp_path)
        assert path.name == "record"
        assert path.parent.name == record.session_id
        payload = record_to_jsonable(record)
        assert payload["outcome"] == OUTCOME_CONVERGED
        assert payload["rounds"][0]["controller_exchange"]["reply_text"].startswith("Reasoning")

    def test_replayability_bit_identical(self, tmp_path):
        def run_once(out):
            _, backends = simulated_backends(ErrorProfile(p_missing=1.0))
            record = run_session(
                "a realistic photo of a scene with one cat and two dogs",
                None,
                SessionConfig(max_rounds=3, seed=99),
                backends,
            )
            return write_session_record(record, out)

        a = run_once(tmp_path / "a").read_bytes()
        b = run_once(tmp_path / "b").read_bytes()
        assert a == b
