"""Label parsing, chain-plan validation, and the run-state machine."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dloop.canon import canonical_dumps
from dloop.errors import InvalidChain, InvalidState, SchemaError, UnparseableLabel
from dloop.reasoning import (
    ChainNode,
    ChainPlan,
    ChainStep,
    DesignStage,
    ModeAssignment,
    Rationale,
    ReasoningMode,
    RunState,
    apply_transition,
    can_transition,
    parse_chain_plan,
    parse_mode_labels,
    parse_rationale_json,
    parse_stage_label,
    rationale_word_count_notes,
    strip_fences,
    validate_chain_plan,
)

MODES_1 = ModeAssignment(primary=ReasoningMode.INDUCTIVE)


# --- mode labels ------------------------------------------------------------

def test_single_mode_label():
    got = parse_mode_labels("Inductive")
    assert got.primary is ReasoningMode.INDUCTIVE
    assert got.secondary is None


def test_mode_pair_first_listed_is_primary():
    got = parse_mode_labels("Abductive, Analogical")
    assert got.primary is ReasoningMode.ABDUCTIVE
    assert got.secondary is ReasoningMode.ANALOGICAL


def test_mode_json_envelope():
    got = parse_mode_labels('{"modes": ["Deductive"]}')
    assert got.primary is ReasoningMode.DEDUCTIVE


def test_mode_fenced_envelope():
    got = parse_mode_labels('```json\n{"modes": ["Analogical", "Inductive"]}\n```')
    assert got.primary is ReasoningMode.ANALOGICAL
    assert got.secondary is ReasoningMode.INDUCTIVE


def test_duplicate_mode_rejected():
    with pytest.raises(UnparseableLabel):
        parse_mode_labels("Inductive, Inductive")


def test_unknown_mode_rejected():
    with pytest.raises(UnparseableLabel):
        parse_mode_labels("Quantum")


def test_empty_mode_output_rejected():
    with pytest.raises(UnparseableLabel):
        parse_mode_labels("   ")


def test_three_modes_rejected():
    with pytest.raises(UnparseableLabel):
        parse_mode_labels("Inductive, Deductive, Abductive")


def test_mode_assignment_guards_duplicate():
    with pytest.raises(UnparseableLabel):
        ModeAssignment(primary=ReasoningMode.INDUCTIVE, secondary=ReasoningMode.INDUCTIVE)


# --- stage labels -----------------------------------------------------------

def test_stage_underscore_spelling():
    assert parse_stage_label("Develop_Convergent") is DesignStage.DEVELOP_CONVERGENT


def test_stage_space_and_case_spelling():
    assert parse_stage_label("discover divergent") is DesignStage.DISCOVER_DIVERGENT
    assert parse_stage_label("DELIVER") is DesignStage.DELIVER


def test_stage_envelope():
    assert parse_stage_label('{"stage": "Define"}') is DesignStage.DEFINE


def test_stage_unknown_label():
    with pytest.raises(UnparseableLabel):
        parse_stage_label("Ideate")
    with pytest.raises(UnparseableLabel):
        parse_stage_label("Define_Convergent")


_SIX = [s.value for s in DesignStage]


@st.composite
def mutated_stage_labels(draw):
    """Labels that are either a legal spelling variant or a corrupted token."""
    base = draw(st.sampled_from(_SIX))
    kind = draw(st.integers(min_value=0, max_value=4))
    # split CamelCase into words
    words = []
    cur = ""
    for ch in base:
        if ch.isupper() and cur:
            words.append(cur)
            cur = ch
        else:
            cur += ch
    words.append(cur)
    if kind == 0:
        return "_".join(words), True
    if kind == 1:
        return " ".join(w.lower() for w in words), True
    if kind == 2:
        return base.upper(), True
    if kind == 3:
        return draw(st.sampled_from(["Ideate", "Diverge", "Research", "", "Double Diamond"])), False
    return base + draw(st.sampled_from(["X", "_Extra", "2"])), False


@given(mutated_stage_labels())
@settings(max_examples=100, deadline=None)
def test_stage_parser_accepts_exactly_the_six_labels(case):
    label, should_parse = case
    if should_parse:
        assert parse_stage_label(label) in DesignStage
    else:
        with pytest.raises(UnparseableLabel):
            parse_stage_label(label)


# --- rationale parsing -------------------------------------------------------

VALID = {"title": "T", "rationale1": "a", "rationale2": "b", "rationale3": "c", "rationale4": "d"}


def test_parse_rationale_direct():
    got = parse_rationale_json(json.dumps(VALID))
    assert got == Rationale("T", "a", "b", "c", "d")


def test_parse_rationale_rejects_array():
    with pytest.raises(SchemaError):
        parse_rationale_json("[]")


def test_parse_rationale_flags_empty_field():
    payload = dict(VALID, rationale1="")
    with pytest.raises(SchemaError, match="rationale1"):
        parse_rationale_json(json.dumps(payload))


def test_parse_rationale_flags_missing_field():
    payload = {k: v for k, v in VALID.items() if k != "rationale4"}
    with pytest.raises(SchemaError, match="rationale4"):
        parse_rationale_json(json.dumps(payload))


def test_parse_rationale_ignores_extra_keys():
    payload = dict(VALID, confidence=0.9)
    assert parse_rationale_json(json.dumps(payload)).title == "T"


def test_parse_rationale_rejects_non_string():
    payload = dict(VALID, rationale2=17)
    with pytest.raises(SchemaError, match="rationale2"):
        parse_rationale_json(json.dumps(payload))


def test_parse_roundtrip_is_identity():
    r = Rationale("Title", "one two", "three", "four", "five")
    assert parse_rationale_json(canonical_dumps(r.to_dict())) == r


def _oracle_parse(raw: str) -> Rationale:
    """Independent parser: slice the outermost braces, load, map the five keys."""
    sliced = raw[raw.index("{"): raw.rindex("}") + 1]
    payload = json.loads(sliced)
    return Rationale(payload["title"], payload["rationale1"], payload["rationale2"],
                     payload["rationale3"], payload["rationale4"])


def fence_variants(body: str) -> list[str]:
    nl_body = body.replace(", ", ",\n ")
    return [
        body,
        f"```\n{body}\n```",
        f"```json\n{body}\n```",
        f"```JSON\n{body}\n```",
        f"```javascript\n{body}\n```",
        f"```json\n{body}\n```\n",
        f"  ```json\n{body}\n```  ",
        f"```json  \n{body}\n```",
        f"```json\r\n{body}\r\n```",
        f"```json\n{nl_body}\n```",
        f"```\n\n{body}\n\n```",
        f"Here is the result:\n```json\n{body}\n```",
        f"```json\n{body}\n```\nHope this helps!",
        f"The JSON you asked for: {body}",
        f"{body}\nDone.",
        f"```json\n{body}",
        f"``` {body} ```",
        f"```json-doc\n{body}\n```",
        f"\n\n{body}\n\n",
        f"Result -> ```json\n{body}\n``` <- end",
    ]


def test_fence_stripping_matches_oracle_on_twenty_variants():
    body = json.dumps(VALID)
    variants = fence_variants(body)
    assert len(variants) == 20
    for raw in variants:
        assert parse_rationale_json(raw) == _oracle_parse(raw), raw


def test_strip_fences_leaves_clean_text_alone():
    assert strip_fences('{"a": 1}') == '{"a": 1}'
    assert strip_fences(strip_fences("```\nx\n```")) == "x"


# --- chain plans -------------------------------------------------------------

def plan_json(steps: list[dict]) -> str:
    return json.dumps({"steps": steps})


def step(title: str, group: str | None = None) -> dict:
    return {"title": title, "brief": f"brief for {title}", "parallel_group": group}


def test_chain_plan_three_linear_steps():
    plan = parse_chain_plan(plan_json([step("a"), step("b"), step("c")]), MODES_1)
    assert [s.title for s in plan.steps] == ["a", "b", "c"]
    assert all(s.parallel_group is None for s in plan.steps)


def test_chain_plan_four_steps_with_parallel_pair():
    raw = plan_json([step("a"), step("b", "g1"), step("c", "g1"), step("d")])
    plan = parse_chain_plan(raw, MODES_1)
    assert [s.parallel_group for s in plan.steps] == [None, "g1", "g1", None]


def test_chain_plan_rejects_two_steps():
    with pytest.raises(InvalidChain):
        parse_chain_plan(plan_json([step("a"), step("b")]), MODES_1)


def test_chain_plan_rejects_five_steps():
    with pytest.raises(InvalidChain):
        parse_chain_plan(plan_json([step(t) for t in "abcde"]), MODES_1)


def test_chain_plan_rejects_duplicate_titles():
    with pytest.raises(InvalidChain):
        parse_chain_plan(plan_json([step("a"), step("a"), step("c")]), MODES_1)


def test_chain_plan_rejects_group_on_last_step():
    raw = plan_json([step("a"), step("b", "g1"), step("c", "g1"), step("d", "g1")])
    with pytest.raises(InvalidChain):
        parse_chain_plan(raw, MODES_1)


def test_chain_plan_rejects_group_on_first_step():
    raw = plan_json([step("a", "g1"), step("b", "g1"), step("c"), step("d")])
    with pytest.raises(InvalidChain):
        parse_chain_plan(raw, MODES_1)


def test_chain_plan_rejects_dangling_group():
    raw = plan_json([step("a"), step("b", "g1"), step("c"), step("d")])
    with pytest.raises(InvalidChain):
        parse_chain_plan(raw, MODES_1)


def test_chain_plan_rejects_split_group():
    plan = ChainPlan(
        steps=[ChainStep("a", "x"), ChainStep("b", "x", "g1"), ChainStep("c", "x"),
               ChainStep("b2", "x", "g1")],
        modes=MODES_1,
    )
    with pytest.raises(InvalidChain):
        validate_chain_plan(plan)


def test_chain_plan_rejects_garbage():
    with pytest.raises(InvalidChain):
        parse_chain_plan("no json here", MODES_1)
    with pytest.raises(InvalidChain):
        parse_chain_plan('{"steps": "nope"}', MODES_1)


def test_chain_plan_requires_briefs():
    raw = json.dumps({"steps": [{"title": "a", "brief": ""},
                                {"title": "b", "brief": "x"},
                                {"title": "c", "brief": "y"}]})
    with pytest.raises(InvalidChain):
        parse_chain_plan(raw, MODES_1)


# --- run-state machine --------------------------------------------------------

def make_node(state: RunState = RunState.PENDING) -> ChainNode:
    return ChainNode(id="c1", title="t", brief="b", modes=MODES_1, run_state=state)


def test_happy_path_transitions():
    node = make_node()
    audit = []
    for target in (RunState.CLASSIFIED, RunState.COMPLETED, RunState.STALE, RunState.CLASSIFIED):
        apply_transition(node, target, audit)
    assert node.run_state is RunState.CLASSIFIED
    assert [(t.before.value, t.after.value) for t in audit] == [
        ("pending", "classified"),
        ("classified", "completed"),
        ("completed", "stale"),
        ("stale", "classified"),
    ]


def test_any_state_can_fail():
    for state in RunState:
        if state is RunState.FAILED:
            continue
        node = make_node(state)
        apply_transition(node, RunState.FAILED)
        assert node.run_state is RunState.FAILED


def test_failed_can_be_reclassified():
    node = make_node(RunState.FAILED)
    apply_transition(node, RunState.CLASSIFIED)
    assert node.run_state is RunState.CLASSIFIED


def test_illegal_transitions_rejected():
    for before, after in [
        (RunState.PENDING, RunState.COMPLETED),
        (RunState.PENDING, RunState.STALE),
        (RunState.COMPLETED, RunState.CLASSIFIED),
        (RunState.STALE, RunState.COMPLETED),
        (RunState.CLASSIFIED, RunState.PENDING),
    ]:
        node = make_node(before)
        with pytest.raises(InvalidState):
            apply_transition(node, after)


def test_can_transition_table_is_exact():
    legal = {(b, a) for b in RunState for a in RunState if can_transition(b, a)}
    expected = {(b, RunState.FAILED) for b in RunState}
    expected |= {
        (RunState.PENDING, RunState.CLASSIFIED),
        (RunState.CLASSIFIED, RunState.COMPLETED),
        (RunState.COMPLETED, RunState.STALE),
        (RunState.STALE, RunState.CLASSIFIED),
        (RunState.FAILED, RunState.CLASSIFIED),
    }
    assert legal == expected


def test_word_count_notes():
    ok = Rationale(
        title="Concise summary",
        rationale1=" ".join(["word"] * 30),
        rationale2=" ".join(["word"] * 28),
        rationale3=" ".join(["word"] * 32),
        rationale4=" ".join(["word"] * 30),
    )
    assert rationale_word_count_notes(ok) == []
    thin = Rationale("T", "too short", "fine " * 30, "fine " * 30, "fine " * 30)
    notes = rationale_word_count_notes(thin)
    assert any("rationale1" in n for n in notes)
