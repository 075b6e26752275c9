"""Reasoning-chain domain types, label parsing, and the run-state machine.

Everything here is pure: functions take model output text and return typed
values or raise. Network calls happen in the orchestrator through the gateway.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .errors import InvalidChain, InvalidState, SchemaError, StepListError, UnparseableLabel


class ReasoningMode(str, Enum):
    INDUCTIVE = "Inductive"
    DEDUCTIVE = "Deductive"
    ABDUCTIVE = "Abductive"
    ANALOGICAL = "Analogical"


class DesignStage(str, Enum):
    DISCOVER_DIVERGENT = "DiscoverDivergent"
    DISCOVER_CONVERGENT = "DiscoverConvergent"
    DEFINE = "Define"
    DEVELOP_DIVERGENT = "DevelopDivergent"
    DEVELOP_CONVERGENT = "DevelopConvergent"
    DELIVER = "Deliver"


class RunState(str, Enum):
    PENDING = "pending"
    CLASSIFIED = "classified"
    COMPLETED = "completed"
    FAILED = "failed"
    STALE = "stale"


# Stage goals and deliverables, used both to describe the stage inside the
# rationale prompt and to present stages to users.
STAGE_INFO: dict[DesignStage, dict[str, str]] = {
    DesignStage.DISCOVER_DIVERGENT: {
        "label": "Discover Divergent",
        "goal": "Diverge, collect raw information widely.",
        "deliverables": "Competitor analysis, user interviews, market data, literature reviews.",
    },
    DesignStage.DISCOVER_CONVERGENT: {
        "label": "Discover Convergent",
        "goal": "Converge, organize data to find patterns and insights.",
        "deliverables": "User personas, journey maps, pain point lists.",
    },
    DesignStage.DEFINE: {
        "label": "Define",
        "goal": "Translate insights into core problems and design principles.",
        "deliverables": '"How Might We" questions, problem statements, design principles.',
    },
    DesignStage.DEVELOP_DIVERGENT: {
        "label": "Develop Divergent",
        "goal": "Brainstorm broadly, explore novel ideas.",
        "deliverables": "Idea sketches, storyboards, concept cards.",
    },
    DesignStage.DEVELOP_CONVERGENT: {
        "label": "Develop Convergent",
        "goal": "Filter and combine ideas into feasible prototypes.",
        "deliverables": "Low-fidelity prototypes, feature lists, system diagrams.",
    },
    DesignStage.DELIVER: {
        "label": "Deliver",
        "goal": "Finalize and communicate solution value.",
        "deliverables": "Service blueprints, high-fidelity mockups, pitch decks.",
    },
}


@dataclass
class ModeAssignment:
    """One or two reasoning modes; the first one the model names is primary."""

    primary: ReasoningMode
    secondary: Optional[ReasoningMode] = None

    def __post_init__(self) -> None:
        if self.secondary is not None and self.secondary == self.primary:
            raise UnparseableLabel("secondary mode must differ from primary")

    def as_list(self) -> list[ReasoningMode]:
        return [self.primary] if self.secondary is None else [self.primary, self.secondary]


@dataclass
class ChainStep:
    title: str
    brief: str
    parallel_group: Optional[str] = None


@dataclass
class ChainPlan:
    steps: list[ChainStep]
    modes: ModeAssignment


@dataclass
class Rationale:
    title: str
    rationale1: str
    rationale2: str
    rationale3: str
    rationale4: str

    def to_dict(self) -> dict[str, str]:
        return {
            "title": self.title,
            "rationale1": self.rationale1,
            "rationale2": self.rationale2,
            "rationale3": self.rationale3,
            "rationale4": self.rationale4,
        }

    def bullets(self) -> list[str]:
        return [self.rationale1, self.rationale2, self.rationale3, self.rationale4]


def render_rationale_text(r: Rationale) -> str:
    """Canvas-facing rendering: title line plus four bullet lines.

    The export round-trip relies on this exact shape; see rationale_from_text.
    """
    return "\n".join([r.title] + [f"- {b}" for b in r.bullets()])


def rationale_from_text(text: str) -> Rationale:
    lines = text.split("\n")
    if len(lines) != 5 or any(not line.startswith("- ") for line in lines[1:]):
        raise SchemaError("not a rendered rationale: expected a title plus four bullet lines")
    return Rationale(lines[0], *(line[2:] for line in lines[1:]))


@dataclass
class ChainNode:
    id: str
    title: str
    brief: str
    modes: ModeAssignment
    stage: Optional[DesignStage] = None
    rationale: Optional[Rationale] = None
    run_state: RunState = RunState.PENDING
    user_edited: bool = False
    order_index: int = 0
    parallel_group: Optional[str] = None
    content_version: int = 0
    last_error: Optional[str] = None
    # (ancestor id, ancestor content_version) pairs in context-assembly order,
    # captured when the node last completed; drift against the live value
    # is what marks the node stale
    completed_fingerprint: Optional[tuple[tuple[str, int], ...]] = None


@dataclass
class TransitionRecord:
    node_id: str
    before: RunState
    after: RunState


# Legal edges of the run-state machine. Failure is reachable from anywhere;
# Failed -> Classified covers regeneration after a failed run.
_TRANSITIONS: frozenset[tuple[RunState, RunState]] = frozenset(
    {
        (RunState.PENDING, RunState.CLASSIFIED),
        (RunState.CLASSIFIED, RunState.COMPLETED),
        (RunState.COMPLETED, RunState.STALE),
        (RunState.STALE, RunState.CLASSIFIED),
        (RunState.FAILED, RunState.CLASSIFIED),
    }
)


def can_transition(before: RunState, after: RunState) -> bool:
    return after == RunState.FAILED or (before, after) in _TRANSITIONS


def apply_transition(node: ChainNode, after: RunState,
                     audit: Optional[list[TransitionRecord]] = None) -> None:
    if not can_transition(node.run_state, after):
        raise InvalidState(f"{node.run_state.value} -> {after.value} is not a legal run-state move")
    if audit is not None:
        audit.append(TransitionRecord(node.id, node.run_state, after))
    node.run_state = after


# --- model-output parsing ---------------------------------------------------

_FENCE_RE = re.compile(r"^```[\w+-]*[ \t]*\r?\n")


def strip_fences(text: str) -> str:
    """Remove one enclosing Markdown code fence, if present."""
    s = text.strip()
    m = _FENCE_RE.match(s)
    if not m:
        return s
    body = s[m.end():]
    # closing fence: last line consisting of backticks only
    lines = body.split("\n")
    for i in range(len(lines) - 1, -1, -1):
        if lines[i].strip() == "```":
            return "\n".join(lines[:i]).strip()
        if lines[i].strip():
            break
    return body.strip()


def _json_candidates(raw: str) -> list[str]:
    """The fence-stripped text, then a brace-sliced fallback for prose wrapping."""
    s = strip_fences(raw)
    out = [s]
    start = s.find("{")
    end = s.rfind("}")
    if start != -1 and end > start and s[start:end + 1] != s:
        out.append(s[start:end + 1])
    return out


def _load_json(raw: str, error: type[Exception], what: str) -> Any:
    last: Exception | None = None
    for candidate in _json_candidates(raw):
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError) as exc:
            last = exc
    raise error(f"{what}: not valid JSON ({last})") from last


_ALNUM_RE = re.compile(r"[^a-z0-9]+")


def _normalize_label(label: str) -> str:
    return _ALNUM_RE.sub("", label.casefold())


_MODE_BY_KEY = {_normalize_label(m.value): m for m in ReasoningMode}
_STAGE_BY_KEY = {_normalize_label(s.value): s for s in DesignStage}
# the classifier prompt spells these with spaces; accept that spelling too
_STAGE_BY_KEY.update({_normalize_label(info["label"]): s for s, info in STAGE_INFO.items()})


def parse_mode_labels(raw: str) -> ModeAssignment:
    """Parse classifier output into one or two reasoning modes.

    Accepts a bare label, a comma-separated pair, or a JSON envelope such as
    {"modes": ["Abductive", "Analogical"]}.
    """
    s = strip_fences(raw)
    labels: list[str]
    if s.startswith("{") or s.startswith("["):
        payload = _load_json(s, UnparseableLabel, "mode labels")
        if isinstance(payload, dict):
            if "modes" in payload:
                value = payload["modes"]
                labels = value.split(",") if isinstance(value, str) else list(value)
            elif "primary" in payload:
                labels = [payload["primary"]]
                if payload.get("secondary"):
                    labels.append(payload["secondary"])
            else:
                raise UnparseableLabel("mode envelope missing 'modes'")
        elif isinstance(payload, list):
            labels = payload
        else:
            raise UnparseableLabel(f"mode payload {payload!r} is not a label set")
    else:
        labels = s.split(",")

    cleaned = [str(x).strip() for x in labels if str(x).strip()]
    if not cleaned:
        raise UnparseableLabel("no reasoning mode named")
    if len(cleaned) > 2:
        raise UnparseableLabel(f"{len(cleaned)} modes named, at most 2 allowed")
    modes = []
    for label in cleaned:
        mode = _MODE_BY_KEY.get(_normalize_label(label))
        if mode is None:
            raise UnparseableLabel(f"unknown reasoning mode {label!r}")
        modes.append(mode)
    if len(modes) == 2 and modes[0] == modes[1]:
        raise UnparseableLabel(f"mode {modes[0].value} listed twice")
    return ModeAssignment(primary=modes[0], secondary=modes[1] if len(modes) == 2 else None)


def parse_stage_label(raw: str) -> DesignStage:
    """Parse classifier output into a Double-Diamond stage.

    Case, underscores, and spaces are normalized: "Develop_Convergent",
    "develop convergent" and "DevelopConvergent" all match.
    """
    s = strip_fences(raw)
    if s.startswith("{"):
        payload = _load_json(s, UnparseableLabel, "stage label")
        if not isinstance(payload, dict) or "stage" not in payload:
            raise UnparseableLabel("stage envelope missing 'stage'")
        s = str(payload["stage"])
    label = s.strip().strip('"')
    stage = _STAGE_BY_KEY.get(_normalize_label(label))
    if stage is None:
        raise UnparseableLabel(f"unknown design stage {label!r}")
    return stage


def parse_rationale_json(raw: str) -> Rationale:
    """Parse the five-field rationale JSON; extra keys ignored, fences stripped."""
    payload = _load_json(raw, SchemaError, "rationale")
    if not isinstance(payload, dict):
        raise SchemaError(f"rationale payload must be a JSON object, got {type(payload).__name__}")
    fields = {}
    for key in ("title", "rationale1", "rationale2", "rationale3", "rationale4"):
        if key not in payload:
            raise SchemaError(f"{key} missing")
        value = payload[key]
        if not isinstance(value, str):
            raise SchemaError(f"{key} must be a string")
        if not value.strip():
            raise SchemaError(f"{key} empty")
        fields[key] = value
    return Rationale(**fields)


def rationale_word_count_notes(r: Rationale) -> list[str]:
    """Advisory deviations from the ~30 word-per-field / ~140 total targets."""
    notes = []
    total = 0
    for name, text in zip(("rationale1", "rationale2", "rationale3", "rationale4"), r.bullets()):
        n = len(text.split())
        total += n
        if n < 10 or n > 60:
            notes.append(f"{name} has {n} words, target is about 30")
    total += len(r.title.split())
    if total < 60 or total > 240:
        notes.append(f"rationale totals {total} words, target is about 140")
    return notes


def parse_chain_plan(raw: str, modes: ModeAssignment) -> ChainPlan:
    """Parse and validate a chain plan from model output.

    Wire format: {"steps": [{"title": ..., "brief": ..., "parallel_group": ...}]}.
    """
    payload = _load_json(raw, InvalidChain, "chain plan")
    if not isinstance(payload, dict) or not isinstance(payload.get("steps"), list):
        raise InvalidChain("chain plan must be an object with a 'steps' list")
    steps = []
    for i, item in enumerate(payload["steps"]):
        if not isinstance(item, dict):
            raise InvalidChain(f"step {i} is not an object")
        title = str(item.get("title", "")).strip()
        brief = str(item.get("brief", "")).strip()
        if not title:
            raise InvalidChain(f"step {i} has no title")
        if not brief:
            raise InvalidChain(f"step {i} has no brief")
        group = item.get("parallel_group")
        group = str(group) if group not in (None, "") else None
        steps.append(ChainStep(title=title, brief=brief, parallel_group=group))
    plan = ChainPlan(steps=steps, modes=modes)
    validate_chain_plan(plan)
    return plan


def parse_step_list(raw: str) -> list[tuple[str, str]]:
    """Parse pipeline steps: {"steps": [{"title", "brief"}]}, at least three of them."""
    payload = _load_json(raw, StepListError, "step list")
    if not isinstance(payload, dict) or not isinstance(payload.get("steps"), list):
        raise StepListError("step list must be an object with a 'steps' list")
    steps = []
    for i, item in enumerate(payload["steps"]):
        if not isinstance(item, dict):
            raise StepListError(f"step {i} is not an object")
        title = str(item.get("title", "")).strip()
        brief = str(item.get("brief", "")).strip()
        if not title:
            raise StepListError(f"step {i} has no title")
        steps.append((title, brief))
    if len(steps) < 3:
        raise StepListError(f"{len(steps)} steps; a design pipeline needs at least 3")
    titles = [t for t, _ in steps]
    if len(set(titles)) != len(titles):
        raise StepListError("step titles must be pairwise distinct")
    return steps


def validate_chain_plan(plan: ChainPlan) -> None:
    steps = plan.steps
    if not 3 <= len(steps) <= 4:
        raise InvalidChain(f"{len(steps)} steps, a chain needs 3 or 4")
    titles = [s.title for s in steps]
    if len(set(titles)) != len(titles):
        raise InvalidChain("step titles must be pairwise distinct")
    if steps[-1].parallel_group is not None:
        raise InvalidChain("the final solution step cannot sit in a parallel group")
    if steps[0].parallel_group is not None:
        raise InvalidChain("the first step anchors the chain and cannot sit in a parallel group")
    # each group tag must cover a single run of >= 2 consecutive steps
    runs: dict[str, list[int]] = {}
    for i, s in enumerate(steps):
        if s.parallel_group is not None:
            runs.setdefault(s.parallel_group, []).append(i)
    for tag, idxs in runs.items():
        if len(idxs) < 2:
            raise InvalidChain(f"parallel group {tag!r} covers a single step")
        if idxs != list(range(idxs[0], idxs[-1] + 1)):
            raise InvalidChain(f"parallel group {tag!r} is not consecutive")
