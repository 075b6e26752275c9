"""Deterministic offline stand-in for a live model.

Answers are derived from the prompt text alone: a small keyword table drives
mode and stage classification, clause pools seeded by a sha256 digest of the
request produce rationale and free text. The same request always yields the
same bytes, which is what makes recorded transcripts reproducible from source.

This is not trying to be smart. It exists so the full pipeline can run and be
tested with zero network access, and so fixtures can be re-recorded cheaply.
"""

from __future__ import annotations

import hashlib
import json
import re

from .gateway import ChatRequest, ChatResponse
from .reasoning import DesignStage, ReasoningMode

_WORD_RE = re.compile(r"[a-z0-9]+")

_STOPWORDS = frozenset({
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "for", "with",
    "how", "can", "could", "should", "we", "our", "your", "their", "my",
    "is", "are", "be", "do", "does", "it", "at", "by", "from", "into",
    "what", "when", "where", "which", "who", "why", "might", "that", "this",
    "s", "about",
})

_MODE_KEYWORDS: dict[ReasoningMode, frozenset[str]] = {
    ReasoningMode.INDUCTIVE: frozenset({
        "pattern", "patterns", "common", "commonalities", "trend", "trends",
        "summarize", "synthesize", "insight", "insights", "persona", "personas",
        "interviews", "survey", "surveys", "feedback", "reviews", "data",
        "cluster", "classify", "observations",
    }),
    ReasoningMode.DEDUCTIVE: frozenset({
        "evaluate", "evaluation", "review", "test", "testing", "validate",
        "verify", "standards", "heuristic", "heuristics", "theory", "apply",
        "feasibility", "usability", "guidelines", "checklist", "audit",
        "principles", "criteria", "compliance",
    }),
    ReasoningMode.ABDUCTIVE: frozenset({
        "why", "diagnose", "cause", "causes", "explain", "root", "conceive",
        "plan", "brainstorm", "explore", "idea", "ideas", "solution",
        "solutions", "improve", "positioning", "new", "novel", "drop",
        "drops", "declined", "mystery", "hypothesis",
    }),
    ReasoningMode.ANALOGICAL: frozenset({
        "like", "borrow", "inspired", "inspiration", "analogy", "analogies",
        "transfer", "adapt", "metaphor", "domain", "domains", "game",
        "games", "gamify", "gamification", "nature", "biomimicry", "other",
        "industries", "outside",
    }),
}

_MODE_ORDER = [ReasoningMode.INDUCTIVE, ReasoningMode.DEDUCTIVE,
               ReasoningMode.ABDUCTIVE, ReasoningMode.ANALOGICAL]

_STAGE_KEYWORDS: dict[DesignStage, frozenset[str]] = {
    DesignStage.DISCOVER_DIVERGENT: frozenset({
        "collect", "gather", "research", "interview", "interviews",
        "competitor", "competitors", "market", "data", "literature",
        "observe", "survey", "surveys", "field", "desk", "benchmark",
    }),
    DesignStage.DISCOVER_CONVERGENT: frozenset({
        "organize", "synthesize", "synthesis", "persona", "personas",
        "journey", "pain", "points", "patterns", "insights", "cluster",
        "affinity", "summarize", "map", "themes",
    }),
    DesignStage.DEFINE: frozenset({
        "define", "problem", "statement", "statements", "principles",
        "frame", "scope", "criteria", "hmw", "core", "question", "questions",
        "drivers", "constraints", "unknown",
    }),
    DesignStage.DEVELOP_DIVERGENT: frozenset({
        "brainstorm", "ideate", "ideas", "sketch", "sketches", "storyboard",
        "storyboards", "concepts", "diverge", "generate", "options",
        "alternatives", "explore", "angles", "variations", "probe",
    }),
    DesignStage.DEVELOP_CONVERGENT: frozenset({
        "prototype", "prototypes", "filter", "select", "combine", "refine",
        "feature", "features", "feasible", "wireframe", "wireframes",
        "converge", "evaluate", "compare", "test",
    }),
    DesignStage.DELIVER: frozenset({
        "final", "finalize", "deliver", "blueprint", "mockup", "mockups",
        "pitch", "launch", "implement", "implementable", "solution",
        "present", "handoff", "rollout", "plan", "ship", "spec",
    }),
}

_STAGE_ORDER = [DesignStage.DISCOVER_DIVERGENT, DesignStage.DISCOVER_CONVERGENT,
                DesignStage.DEFINE, DesignStage.DEVELOP_DIVERGENT,
                DesignStage.DEVELOP_CONVERGENT, DesignStage.DELIVER]

# wire spelling used by the stage classifier's answer schema
_STAGE_WIRE = {
    DesignStage.DISCOVER_DIVERGENT: "Discover_Divergent",
    DesignStage.DISCOVER_CONVERGENT: "Discover_Convergent",
    DesignStage.DEFINE: "Define",
    DesignStage.DEVELOP_DIVERGENT: "Develop_Divergent",
    DesignStage.DEVELOP_CONVERGENT: "Develop_Convergent",
    DesignStage.DELIVER: "Deliver",
}


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.casefold())


def _key_phrase(text: str, limit: int = 3) -> str:
    picked = [w for w in _words(text) if w not in _STOPWORDS][:limit]
    return " ".join(picked) if picked else "the goal"


def _digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _quoted_line(user: str, label: str) -> str:
    """Value of a `Label: '...'` line; empty string when the line is absent."""
    prefix = label + " '"
    for line in user.splitlines():
        line = line.strip()
        if line.startswith(prefix) and line.endswith("'"):
            return line[len(prefix):-1]
    return ""


def _design_goal(system: str) -> str:
    for line in system.splitlines():
        m = re.match(r"^The current design context is: .*, and the design goal is: (.*)\.$",
                     line.strip())
        if m:
            return m.group(1)
        m = re.match(r"^- Current design context: .*, design goal: (.*)\. Base all reasoning on this\.$",
                     line.strip())
        if m:
            return m.group(1)
    return ""


def _score(words: set[str], table) -> list[tuple[int, int]]:
    order = _MODE_ORDER if table is _MODE_KEYWORDS else _STAGE_ORDER
    scores = [(sum(w in table[key] for w in words), i) for i, key in enumerate(order)]
    return sorted(scores, key=lambda t: (-t[0], t[1]))


def classify_modes(goal: str) -> list[ReasoningMode]:
    if "non-reader" in goal.casefold() or "non reader" in goal.casefold():
        return [ReasoningMode.ABDUCTIVE, ReasoningMode.ANALOGICAL]
    ranked = _score(set(_words(goal)), _MODE_KEYWORDS)
    (top_score, top_i), (second_score, second_i) = ranked[0], ranked[1]
    if top_score == 0:
        return [ReasoningMode.ABDUCTIVE]
    picked = [_MODE_ORDER[top_i]]
    if second_score >= 1 and second_score * 2 >= top_score:
        picked.append(_MODE_ORDER[second_i])
    return picked


def classify_stage(step_text: str) -> DesignStage:
    ranked = _score(set(_words(step_text)), _STAGE_KEYWORDS)
    top_score, top_i = ranked[0]
    return _STAGE_ORDER[top_i] if top_score > 0 else DesignStage.DEFINE


# Clause pools for rationale fields. Three picks joined per field land around
# thirty words, inside the advisory range, without two steps ever colliding.
_OPENERS = [
    "Start from what the canvas already establishes",
    "Treat the stated goal as the fixed reference point",
    "Read the preceding steps as constraints, not suggestions",
    "Take the user group named in the context seriously",
    "Let the stage goal dictate what counts as progress",
    "Keep the scope narrow enough to finish this step",
]
_MIDDLES = [
    "then work {kw} into two or three concrete moves",
    "and translate {kw} into observable, checkable terms",
    "so {kw} stops being abstract and becomes a task list",
    "while holding {kw} against the real usage situation",
    "and separate what {kw} requires from what it merely invites",
    "then weigh {kw} against the effort the team can spend",
]
_CLOSERS = [
    "so the next step inherits something firm to build on.",
    "which keeps the chain honest about what was actually decided.",
    "and name the single riskiest assumption out loud.",
    "so reviewers can disagree with specifics instead of vibes.",
    "before polish tempts anyone away from the core question.",
    "and leave a short note on what was deliberately skipped.",
]

_FILL_VERBS = ["Pin down", "List", "Sketch", "Compare", "Draft", "Check"]
_FILL_OBJECTS = [
    "the two or three user moments that matter most",
    "the constraints that cannot move",
    "a first rough structure",
    "existing solutions worth stealing from",
    "the open questions blocking a decision",
    "success signals you could actually measure",
]


def _clause(pool: list[str], digest: bytes, i: int, kw: str) -> str:
    return pool[digest[i] % len(pool)].format(kw=kw)


def _rationale_field(digest: bytes, base: int, kw: str) -> str:
    return ", ".join([
        _clause(_OPENERS, digest, base, kw),
        _clause(_MIDDLES, digest, base + 1, kw),
        _clause(_CLOSERS, digest, base + 2, kw),
    ])


def make_rationale(step_text: str, stage_label: str, seed_text: str) -> dict:
    digest = _digest(seed_text)
    title_part = step_text.split(": ", 1)[0] if step_text else "This step"
    return {
        "title": f"{title_part} under a {stage_label} lens",
        "rationale1": _rationale_field(digest, 0, _key_phrase(step_text)),
        "rationale2": _rationale_field(digest, 3, _key_phrase(step_text)),
        "rationale3": _rationale_field(digest, 6, _key_phrase(step_text)),
        "rationale4": _rationale_field(digest, 9, _key_phrase(step_text)),
    }


_NON_READER_STEPS = [
    {"title": "Map non-reader constraints",
     "brief": "Identify what blocks children who cannot read yet during their first session.",
     "parallel_group": None},
    {"title": "Use audio prompts",
     "brief": "Explore spoken guidance that walks a child through each onboarding moment.",
     "parallel_group": "g1"},
    {"title": "Add avatar-based guidance",
     "brief": "Explore a friendly character that demonstrates actions and reacts to taps.",
     "parallel_group": "g1"},
    {"title": "Design progressive onboarding flow",
     "brief": "Combine audio and avatar guidance into progressive disclosure of functionality for first use.",
     "parallel_group": None},
]


def make_chain_plan(goal: str) -> list[dict]:
    lowered = goal.casefold()
    if "non-reader" in lowered or "non reader" in lowered:
        return [dict(s) for s in _NON_READER_STEPS]
    digest = _digest(goal)
    kw = _key_phrase(goal)
    steps = [
        {"title": f"Map the territory of {kw}",
         "brief": f"Lay out what is already known and unknown about {kw} in this project.",
         "parallel_group": None},
        {"title": f"Probe drivers behind {kw}",
         "brief": f"Work out the forces and user needs that shape {kw}.",
         "parallel_group": None},
        {"title": f"Converge on a plan for {kw}",
         "brief": f"Fold the findings into one concrete, implementable direction for {kw}.",
         "parallel_group": None},
    ]
    if digest[0] % 2 == 1:
        steps.insert(2, {
            "title": f"Test angles on {kw}",
            "brief": f"Compare several distinct approaches to {kw} against the context.",
            "parallel_group": None,
        })
        if digest[1] % 2 == 0:
            steps[1]["parallel_group"] = "g1"
            steps[2]["parallel_group"] = "g1"
    return steps


_STORY_PIPELINE = [
    {"title": "story background",
     "brief": "Define the story world, characters, and tone for ages 5 to 8."},
    {"title": "onboarding interaction",
     "brief": "Shape how a child first meets the app and learns to use it."},
    {"title": "layout structure",
     "brief": "Organize screens and content blocks for young readers."},
    {"title": "navigation flow",
     "brief": "Map how a child moves between stories and activities."},
    {"title": "personalization options",
     "brief": "Let families tailor stories, pace, and appearance."},
]


def make_pipeline(design_goal: str) -> list[dict]:
    lowered = design_goal.casefold()
    if "storytell" in lowered and ("child" in lowered or "kids" in lowered):
        return [dict(s) for s in _STORY_PIPELINE]
    digest = _digest(design_goal)
    kw = _key_phrase(design_goal)
    pool = [
        {"title": f"Research {kw}",
         "brief": "Gather user, market, and context evidence."},
        {"title": "Define the core problem",
         "brief": "Turn findings into a sharp problem statement."},
        {"title": "Ideate concepts",
         "brief": "Generate and compare candidate directions."},
        {"title": "Prototype and test",
         "brief": "Build quick versions and check them with users."},
        {"title": "Refine the experience",
         "brief": "Fold feedback into a coherent design."},
        {"title": "Plan the delivery",
         "brief": "Prepare assets and handoff for launch."},
    ]
    return pool[:4 + digest[0] % 3]


def make_fill_lines(step_text: str, seed_text: str) -> str:
    digest = _digest(seed_text)
    kw = _key_phrase(step_text)
    count = 3 + digest[0] % 3
    lines = []
    for i in range(count):
        verb = _FILL_VERBS[digest[i + 1] % len(_FILL_VERBS)]
        obj = _FILL_OBJECTS[(digest[i + 1] + i) % len(_FILL_OBJECTS)]
        lines.append(f"- {verb} {obj} for {kw}.")
    return "\n".join(lines)


def make_brainstorm(goal: str, seed_text: str) -> str:
    digest = _digest(seed_text)
    kw = _key_phrase(goal)
    lines = [f"Ideas around {kw}:"]
    for i in range(3):
        verb = _FILL_VERBS[digest[i + 2] % len(_FILL_VERBS)]
        obj = _FILL_OBJECTS[(digest[i + 2] + i) % len(_FILL_OBJECTS)]
        lines.append(f"- {verb} {obj}, framed for {kw}.")
    return "\n".join(lines)


class SyntheticProvider:
    """Rule-based provider producing schema-correct answers offline."""

    provider_id = "synthetic-v1"

    def complete(self, request: ChatRequest) -> ChatResponse:
        hint = request.response_hint
        user = request.user
        if hint == "ModeLabelJson":
            goal = _quoted_line(user, "Goal to classify:")
            text = json.dumps({"modes": [m.value for m in classify_modes(goal)]})
        elif hint == "StageLabelJson":
            step = _quoted_line(user, "Current Execution Step:")
            text = json.dumps({"stage": _STAGE_WIRE[classify_stage(step)]})
        elif hint == "ChainPlanJson":
            goal = _quoted_line(user, "Exploration goal:")
            text = json.dumps({"steps": make_chain_plan(goal)})
        elif hint == "StepListJson":
            text = json.dumps({"steps": make_pipeline(_design_goal(request.system))})
        elif hint == "RationaleJson":
            step = _quoted_line(user, "Current Execution Step:")
            stage = ""
            for line in user.splitlines():
                if line.strip().startswith("- Stage Name: "):
                    stage = line.strip()[len("- Stage Name: "):]
                    break
            text = json.dumps(make_rationale(step, stage or "Define", user))
        elif hint == "FreeText":
            if "Current step to elaborate: '" in user:
                step = _quoted_line(user, "Current step to elaborate:")
                text = make_fill_lines(step, user)
            elif "Brainstorm request: '" in user:
                text = make_brainstorm(_quoted_line(user, "Brainstorm request:"), user)
            else:
                text = f"Notes on {_key_phrase(user)}:\n- Ground the next move in the given context."
        else:
            raise ValueError(f"unknown response hint: {hint}")
        return ChatResponse(
            text=text,
            prompt_tokens=len(request.system + request.user) // 4,
            completion_tokens=len(text) // 4,
            provider_id=self.provider_id,
        )
