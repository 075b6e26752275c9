"""Prompt template catalog and deterministic rendering.

Templates live as plain text files next to this module (see
templates/manifest.json). Rendering is flat ``{name}`` substitution, nothing
else: no conditionals, no loops, no escaping rules. A template either gets
every placeholder it mentions or rendering fails naming the missing field.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional, Sequence

from .errors import EmptyGoal, MissingPlaceholder, UnknownTemplate
from .reasoning import ReasoningMode


class TemplateId(str, Enum):
    MAIN_CANVAS_ROLE = "MainCanvasRole"
    MAIN_CANVAS_WORKFLOW = "MainCanvasWorkflow"
    SUB_CANVAS_ROLE = "SubCanvasRole"
    PIPELINE_ARCHITECT = "PipelineArchitect"
    STEP_CONTENT_FILL = "StepContentFill"
    BRAINSTORM = "Brainstorm"
    MODE_CLASSIFIER = "ModeClassifier"
    CHAIN_GENERATION = "ChainGeneration"
    STAGE_CLASSIFIER = "StageClassifier"
    RATIONALE_GENERATION = "RationaleGeneration"


class ExpectedOutput(str, Enum):
    FREE_TEXT = "FreeText"
    RATIONALE_JSON = "RationaleJson"
    STEP_LIST_JSON = "StepListJson"
    MODE_LABEL_JSON = "ModeLabelJson"
    STAGE_LABEL_JSON = "StageLabelJson"
    CHAIN_PLAN_JSON = "ChainPlanJson"


NO_PRIOR_STEPS = "(no prior steps)"
NO_EXAMPLE = "(no example available)"


@dataclass
class PromptContext:
    """Placeholder bundle shared by all templates.

    A template only needs the fields it actually mentions; everything else may
    stay None.
    """

    bg: str
    dg: str
    goal: Optional[str] = None
    context_str: Optional[str] = None
    parent_title: Optional[str] = None
    parent_content: Optional[str] = None
    current_node_content: Optional[str] = None
    few_shot_example: Optional[str] = None
    rationale_type: Optional[str] = None
    rationale_type_description: Optional[str] = None
    mode_definitions: Optional[str] = None


@dataclass
class RenderedPrompt:
    system: str
    user: str
    expected_output: ExpectedOutput


@dataclass
class StructuredPromptSpec:
    """The five-part breakdown a free-form user request is mapped into."""

    task: str
    requirements: list[str] = field(default_factory=list)
    context: str = ""
    output: str = ""
    examples: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class _CatalogEntry:
    template_id: TemplateId
    text: str
    part: str
    provenance: str
    output: ExpectedOutput
    system_from: tuple[TemplateId, ...]


_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")
# the rationale template spells the main-canvas goal placeholder out in full
_ALIASES = {"design_goal": "dg"}


def _data_root():
    return resources.files("dloop") / "templates"


@lru_cache(maxsize=1)
def _catalog() -> dict[TemplateId, _CatalogEntry]:
    root = _data_root()
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    entries: dict[TemplateId, _CatalogEntry] = {}
    for item in manifest["templates"]:
        tid = TemplateId(item["id"])
        entries[tid] = _CatalogEntry(
            template_id=tid,
            text=(root / item["file"]).read_text(encoding="utf-8").rstrip("\n"),
            part=item["part"],
            provenance=item["provenance"],
            output=ExpectedOutput(item["output"]),
            system_from=tuple(TemplateId(x) for x in item.get("system_from", [])),
        )
    missing = set(TemplateId) - set(entries)
    if missing:
        raise UnknownTemplate(f"manifest lacks entries for {sorted(t.value for t in missing)}")
    return entries


@lru_cache(maxsize=1)
def _mode_texts() -> dict[ReasoningMode, str]:
    root = _data_root()
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    return {
        ReasoningMode(name): (root / rel).read_text(encoding="utf-8").rstrip("\n")
        for name, rel in manifest["modes"].items()
    }


def catalog_provenance() -> dict[str, str]:
    return {e.template_id.value: e.provenance for e in _catalog().values()}


def _substitute(text: str, ctx: PromptContext) -> str:
    known = {f.name for f in fields(PromptContext)}

    def repl(match: re.Match[str]) -> str:
        name = match.group(1)
        field_name = _ALIASES.get(name, name)
        if field_name not in known:
            raise MissingPlaceholder(field_name)
        value = getattr(ctx, field_name)
        if value is None:
            raise MissingPlaceholder(field_name)
        return value

    return _PLACEHOLDER_RE.sub(repl, text)


def render(template: TemplateId, ctx: PromptContext) -> RenderedPrompt:
    """Render one template to a system/user prompt pair.

    Pure: same template and context give byte-identical output.
    """
    entries = _catalog()
    entry = entries.get(template)
    if entry is None:
        raise UnknownTemplate(str(template))
    system_parts = [_substitute(entries[sid].text, ctx) for sid in entry.system_from]
    if entry.part == "system":
        system_parts.append(_substitute(entry.text, ctx))
        user = ""
    else:
        user = _substitute(entry.text, ctx)
    return RenderedPrompt(system="\n\n".join(system_parts), user=user,
                          expected_output=entry.output)


def mode_definition_block(
    modes: Sequence[ReasoningMode],
    examples: Optional[Mapping[ReasoningMode, Sequence[str]]] = None,
) -> str:
    """Concatenate the definition texts for the given modes, filling example slots.

    Slots without a supplied example render as an explicit absence marker so
    the prompt shape stays stable whether or not the store had matches.
    """
    blocks = []
    for mode in modes:
        text = _mode_texts()[mode]
        supplied = list(examples.get(mode, [])) if examples else []
        lines = []
        for line in text.split("\n"):
            m = re.fullmatch(r"<Example (\d)>", line.strip())
            if m:
                i = int(m.group(1)) - 1
                lines.append(supplied[i] if i < len(supplied) else NO_EXAMPLE)
            else:
                lines.append(line)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def leftover_placeholders(text: str) -> list[str]:
    """Unsubstituted placeholder tokens, for render-invariant checks."""
    return _PLACEHOLDER_RE.findall(text)


def build_structured_prompt(goal: str, ctx: PromptContext) -> StructuredPromptSpec:
    """Map a free-form goal into the task/requirements/context/output/examples shape."""
    if not goal or not goal.strip():
        raise EmptyGoal("goal must be non-empty")
    goal = goal.strip()
    context_lines = [f"Design context: {ctx.bg}", f"Design goal: {ctx.dg}"]
    if ctx.parent_title is not None:
        parent = ctx.parent_title
        if ctx.parent_content:
            parent = f"{parent}: {ctx.parent_content}"
        context_lines.append(f"Parent node: {parent}")
    if ctx.context_str:
        context_lines.append(f"Preceding steps: {ctx.context_str}")
    return StructuredPromptSpec(
        task=f"Explore and resolve: {goal}",
        requirements=[
            "Stay grounded in the design context and goal.",
            "Be concrete and actionable, not generic.",
            "Respect the work already done in preceding steps.",
        ],
        context="\n".join(context_lines),
        output="A focused, structured response that directly serves the stated task.",
        examples=[ctx.few_shot_example] if ctx.few_shot_example else [],
    )
