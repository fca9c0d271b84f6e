"""Decomposition prompt and parser tests."""

import json

import pytest

from tandem.backend import ChatRequest
from tandem.core import Checker, ModelTier, Task
from tandem.decompose import (
    DecomposeExemplar,
    MAX_SUBTASKS,
    build_decompose_prompt,
    decompose,
    exemplars_for,
    load_exemplars,
    parse_subtasks,
)
from tandem.errors import ConfigError, DecompositionParseError

from fixtures import make_pool

MATH_TASK = Task(id="m1", query="What is the square of the root of 16?", category="math")

EXEMPLAR = DecomposeExemplar(
    question="What is 3 plus 4 times 2?",
    steps=("compute 4 times 2", "add 3 to the product", "state the result"),
)


class TestBuildPrompt:
    def test_contains_command_anchor(self):
        prompt = build_decompose_prompt(MATH_TASK, [EXEMPLAR])
        assert "please decompose it into easy-to-solve steps" in prompt

    def test_lists_exemplar_steps_in_order(self):
        prompt = build_decompose_prompt(MATH_TASK, [EXEMPLAR])
        first = prompt.index("compute 4 times 2")
        second = prompt.index("add 3 to the product")
        third = prompt.index("state the result")
        assert first < second < third

    def test_all_exemplars_appear_before_target_question(self):
        exemplars = [
            DecomposeExemplar(question=f"warm-up {i}", steps=(f"step {i}a", f"step {i}b"))
            for i in range(8)
        ]
        prompt = build_decompose_prompt(MATH_TASK, exemplars)
        target = prompt.index(f"Now the command is {MATH_TASK.query}")
        for ex in exemplars:
            assert prompt.index(ex.question) < target

    def test_problem_type_line_uses_category(self):
        prompt = build_decompose_prompt(MATH_TASK, [EXEMPLAR])
        assert "The type of problem is math." in prompt

    def test_empty_exemplars_rejected(self):
        with pytest.raises(ConfigError):
            build_decompose_prompt(MATH_TASK, [])

    def test_prompt_is_stable_across_calls(self):
        assert build_decompose_prompt(MATH_TASK, [EXEMPLAR]) == build_decompose_prompt(
            MATH_TASK, [EXEMPLAR]
        )


class TestParseSubtasks:
    def test_canonical_numbered_list(self):
        subtasks = parse_subtasks("1. find x\n2. square x")
        assert [(st.index, st.description) for st in subtasks] == [(1, "find x"), (2, "square x")]

    def test_noncontiguous_numbering_renumbered(self):
        subtasks = parse_subtasks("1. first\n3. second\n4. third")
        assert [st.index for st in subtasks] == [1, 2, 3]
        assert [st.description for st in subtasks] == ["first", "second", "third"]

    def test_quoted_answer_format_lines(self):
        response = 'To solve it we need:\n"1. question one",\n"2. question two".'
        subtasks = parse_subtasks(response)
        assert [st.description for st in subtasks] == ["question one", "question two"]

    def test_prose_without_numbers_raises(self):
        with pytest.raises(DecompositionParseError) as info:
            parse_subtasks("I cannot break this down, sorry.")
        assert "cannot break this down" in info.value.raw_response

    def test_truncates_beyond_cap(self):
        response = "\n".join(f"{i}. step number {i}" for i in range(1, 30))
        subtasks = parse_subtasks(response)
        assert len(subtasks) == MAX_SUBTASKS

    def test_idempotent_on_reserialized_output(self):
        subtasks = parse_subtasks('"1. find x",\n"3. then square it".')
        rendered = "\n".join(f"{st.index}. {st.description}" for st in subtasks)
        again = parse_subtasks(rendered)
        assert again == subtasks


class TestDecomposePipeline:
    def pool(self, text):
        script = {
            "default": {"text": text, "token_probs": [0.9]},
            "rules": [],
        }
        return make_pool(script, script)

    def test_four_line_listing_gives_four_subtasks(self):
        pool = self.pool("1. a one\n2. b two\n3. c three\n4. d four")
        subtasks, ledger = decompose(MATH_TASK, [EXEMPLAR], ModelTier.DEVICE, pool)
        assert len(subtasks) == 4
        assert ledger.device_calls == 1
        assert ledger.api_cents == 0.0

    def test_prose_response_surfaces_task_id(self):
        pool = self.pool("no numbered anything")
        with pytest.raises(DecompositionParseError) as info:
            decompose(MATH_TASK, [EXEMPLAR], ModelTier.DEVICE, pool)
        assert info.value.task_id == "m1"

    def test_single_step_decomposition_allowed(self):
        pool = self.pool("1. just answer it")
        subtasks, _ = decompose(MATH_TASK, [EXEMPLAR], ModelTier.DEVICE, pool)
        assert len(subtasks) == 1


class TestExemplarFiles:
    def test_bare_list_applies_to_all_categories(self, tmp_path):
        path = tmp_path / "ex.json"
        path.write_text(json.dumps([{"question": "q", "steps": ["s1"]}]))
        loaded = load_exemplars(path)
        assert exemplars_for(loaded, "math")[0].question == "q"

    def test_category_keyed_object(self, tmp_path):
        path = tmp_path / "ex.json"
        path.write_text(
            json.dumps(
                {
                    "math": [{"question": "mq", "steps": ["m1"]}],
                    "": [{"question": "gq", "steps": ["g1"]}],
                }
            )
        )
        loaded = load_exemplars(path)
        assert exemplars_for(loaded, "math")[0].question == "mq"
        assert exemplars_for(loaded, "logic")[0].question == "gq"

    def test_exemplar_requires_steps(self):
        with pytest.raises(ConfigError):
            DecomposeExemplar(question="q", steps=())
