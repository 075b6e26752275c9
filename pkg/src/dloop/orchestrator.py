"""Pipelines and co-creation operations composed over one session.

Every mutating operation follows the same shape: read the clock exactly once,
route all generated ids through a tap, mutate the session, then append one
event whose payload carries the user arguments plus the tapped ids. Replaying
the event log with a scripted clock and scripted ids therefore reproduces the
session exactly, as long as the gateway answers the same requests the same
way (which the replay provider guarantees).

Failure routing in run/regenerate is deliberate: a response the validators
reject marks the node Failed and commits, because that outcome is real user-
visible state. Transport-level trouble raises instead, so the caller can roll
the whole operation back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

from . import store as _store
from .errors import (
    EmptyContent,
    EmptyGoal,
    GatewayError,
    IncompleteContext,
    InvalidState,
    LastNode,
    NotCompleted,
    ReorderRejected,
    UnknownId,
    ValidationExhausted,
)
from .events import CoCreationEvent, EventKind
from .gateway import CallRecord, ChatRequest, Gateway
from .graph import (
    AiNode,
    Canvas,
    CanvasNode,
    DesignNode,
    Edge,
    Session,
    StickyNote,
    SubCanvas,
    add_node,
    chain_predecessors_in_order,
    connect,
    create_subcanvas,
    disconnect,
    predecessors_in_order,
    remove_node,
)
from .exemplars import ExemplarStore
from .prompts import (
    NO_EXAMPLE,
    NO_PRIOR_STEPS,
    PromptContext,
    RenderedPrompt,
    TemplateId,
    mode_definition_block,
    render,
)
from .reasoning import (
    STAGE_INFO,
    ChainNode,
    ChainPlan,
    ModeAssignment,
    Rationale,
    ReasoningMode,
    RunState,
    TransitionRecord,
    apply_transition,
    parse_chain_plan,
    parse_mode_labels,
    parse_rationale_json,
    parse_stage_label,
    parse_step_list,
    rationale_word_count_notes,
    render_rationale_text,
    validate_chain_plan,
)
from .runtime import Clock, IdFactory, RandomIds, ScriptedClock, ScriptedIds, SystemClock

logger = logging.getLogger("dloop.orchestrator")

TEMPERATURE_CLASSIFY = 0.0
TEMPERATURE_GENERATE = 0.7
MAX_TOKENS_CLASSIFY = 128
MAX_TOKENS_GENERATE = 1024



def _link(sub: SubCanvas, tap: "_Tap", source: str, target: str) -> None:
    eid = tap.new_id()
    sub.edges[eid] = Edge(id=eid, source=source, target=target)

@dataclass
class PipelineResult:
    created_nodes: list[str]
    created_edges: list[str]
    audit: list[CallRecord]


class _Tap:
    """Id factory wrapper that remembers what it handed out during one op."""

    def __init__(self, inner: IdFactory):
        self._inner = inner
        self.issued: list[str] = []

    def new_id(self) -> str:
        value = self._inner.new_id()
        self.issued.append(value)
        return value


class Orchestrator:
    def __init__(
        self,
        gateway: Gateway,
        exemplars: Optional[ExemplarStore] = None,
        clock: Optional[Clock] = None,
        ids: Optional[IdFactory] = None,
        model: str = "design-loop-v1",
        max_validation_retries: int = 1,
    ):
        self.gateway = gateway
        self.exemplars = exemplars
        self.clock = clock or SystemClock()
        self.ids = ids or RandomIds()
        self.model = model
        self.max_validation_retries = max_validation_retries
        self.transitions: list[TransitionRecord] = []

    # --- session lifecycle ---------------------------------------------------

    def new_session(
        self,
        background: str,
        design_goal: str,
        style_preferences: tuple[str, ...] = (),
        session_id: Optional[str] = None,
        created_at: Optional[datetime] = None,
    ) -> Session:
        from .graph import DesignContext
        if not background.strip() or not design_goal.strip():
            raise IncompleteContext("background and design goal must both be set")
        if created_at is None:
            created_at = self.clock.now()
        session = Session(
            id=session_id if session_id is not None else self.ids.new_id(),
            context=DesignContext(
                background=background,
                design_goal=design_goal,
                style_preferences=list(style_preferences),
            ),
            created_at=created_at,
            modified_at=created_at,
        )
        return session

    # --- prompt plumbing -----------------------------------------------------

    def _ctx(self, session: Session, **kw) -> PromptContext:
        return PromptContext(
            bg=session.context.background,
            dg=session.context.design_goal,
            **kw,
        )

    def _request(self, rendered: RenderedPrompt, temperature: float,
                 max_tokens: int) -> ChatRequest:
        return ChatRequest(
            system=rendered.system,
            user=rendered.user,
            model=self.model,
            temperature=temperature,
            max_tokens=max_tokens,
            response_hint=rendered.expected_output.value,
        )

    def _generate(self, rendered: RenderedPrompt) -> str:
        request = self._request(rendered, TEMPERATURE_GENERATE, MAX_TOKENS_GENERATE)
        return self.gateway.complete(request).text

    def _validated(self, rendered: RenderedPrompt, validator, *, classify: bool):
        temperature = TEMPERATURE_CLASSIFY if classify else TEMPERATURE_GENERATE
        max_tokens = MAX_TOKENS_CLASSIFY if classify else MAX_TOKENS_GENERATE
        request = self._request(rendered, temperature, max_tokens)
        return self.gateway.complete_validated(
            request, validator, max_retries=self.max_validation_retries)

    def _few_shot(self, query: str, tag: str, k: int) -> str:
        if self.exemplars is None or len(self.exemplars) == 0:
            return NO_EXAMPLE
        hits = self.exemplars.retrieve(query, k=k, tag=tag)
        if not hits:
            return NO_EXAMPLE
        return "\n\n".join(ex.output_text for ex, _ in hits)

    def _mode_examples(self) -> Optional[dict]:
        if self.exemplars is None:
            return None
        examples = {}
        for mode in ReasoningMode:
            snippets = [ex.output_text for ex in self.exemplars.by_tag(f"mode:{mode.value}")[:3]]
            if snippets:
                examples[mode] = snippets
        return examples or None

    # --- context assembly ----------------------------------------------------

    @staticmethod
    def _node_text(node: CanvasNode) -> str:
        if isinstance(node, DesignNode):
            return f"{node.title}: {'; '.join(node.blocks)}" if node.blocks else node.title
        if isinstance(node, AiNode):
            return f"{node.title}: {node.content}" if node.content else node.title
        return node.content

    def _main_context_str(self, session: Session, node_id: str) -> str:
        preds = predecessors_in_order(session.main_canvas, node_id)
        return "\n".join(self._node_text(n) for n in preds) if preds else NO_PRIOR_STEPS

    @staticmethod
    def _chain_context_str(sub: SubCanvas, node_id: str) -> str:
        done = [
            n for n in chain_predecessors_in_order(sub, node_id)
            if n.run_state in (RunState.COMPLETED, RunState.STALE) and n.rationale
        ]
        if not done:
            return NO_PRIOR_STEPS
        return "\n\n".join(
            f"Step: {n.title}\n{render_rationale_text(n.rationale)}" for n in done)

    # --- event plumbing ------------------------------------------------------

    @staticmethod
    def _emit(session: Session, event_log: list[CoCreationEvent],
              kind: EventKind, target: str, payload: dict,
              tap: _Tap, now: datetime) -> None:
        payload = dict(payload)
        payload["ids"] = tap.issued
        session.modified_at = now
        event_log.append(CoCreationEvent(kind=kind, target=target, payload=payload, at=now))

    # --- staleness -----------------------------------------------------------

    @staticmethod
    def _live_fingerprint(sub: SubCanvas, node_id: str) -> tuple[tuple[str, int], ...]:
        return tuple(
            (p.id, p.content_version)
            for p in chain_predecessors_in_order(sub, node_id)
        )

    def _refresh_staleness(self, session: Session) -> None:
        for sub in session.subcanvases.values():
            for node in sub.chain_nodes.values():
                if node.run_state is not RunState.COMPLETED:
                    continue
                if self._live_fingerprint(sub, node.id) != node.completed_fingerprint:
                    apply_transition(node, RunState.STALE, self.transitions)

    # --- main-canvas pipelines -----------------------------------------------

    def generate_pipeline(self, session: Session,
                          event_log: list[CoCreationEvent]) -> PipelineResult:
        if not session.context.background.strip() or not session.context.design_goal.strip():
            raise IncompleteContext("background and design goal must both be set")
        now = self.clock.now()
        tap = _Tap(self.ids)
        audit_start = len(self.gateway.audit)

        rendered = render(TemplateId.PIPELINE_ARCHITECT, self._ctx(session))
        steps = self._validated(rendered, parse_step_list, classify=False)

        created_nodes: list[str] = []
        created_edges: list[str] = []
        for i, (title, brief) in enumerate(steps):
            node = DesignNode(id=tap.new_id(), title=title, blocks=[brief],
                              position=(260.0 * i, 0.0))
            add_node(session.main_canvas, node)
            created_nodes.append(node.id)
        for a, b in zip(created_nodes, created_nodes[1:]):
            edge = connect(session.main_canvas, a, b, tap.new_id())
            created_edges.append(edge.id)
        for node_id in created_nodes:
            self._fill_node(session, node_id)

        self._emit(session, event_log, EventKind.GENERATE_PIPELINE, session.id, {}, tap, now)
        return PipelineResult(created_nodes, created_edges,
                              self.gateway.audit[audit_start:])

    def _fill_node(self, session: Session, node_id: str) -> DesignNode:
        node = session.main_canvas.nodes.get(node_id)
        if not isinstance(node, DesignNode):
            raise UnknownId(f"{node_id} is not a design node on the main canvas")
        content = f"{node.title}: {'; '.join(node.blocks)}" if node.blocks else node.title
        rendered = render(TemplateId.STEP_CONTENT_FILL, self._ctx(
            session,
            context_str=self._main_context_str(session, node_id),
            current_node_content=content,
            few_shot_example=self._few_shot(content, tag="fill", k=2),
        ))
        text = self._generate(rendered)
        lines = [line.lstrip("- ").strip() for line in text.splitlines() if line.strip()]
        node.blocks = lines or [text.strip()]
        return node

    def fill_step_content(self, session: Session, node_id: str,
                          event_log: list[CoCreationEvent]) -> DesignNode:
        now = self.clock.now()
        tap = _Tap(self.ids)
        node = self._fill_node(session, node_id)
        self._emit(session, event_log, EventKind.FILL_NODE, node_id, {"node": node_id}, tap, now)
        return node

    def brainstorm(self, session: Session, node_id: str,
                   event_log: list[CoCreationEvent]) -> AiNode:
        node = session.main_canvas.nodes.get(node_id)
        if not isinstance(node, AiNode):
            raise UnknownId(f"{node_id} is not an AI node on the main canvas")
        now = self.clock.now()
        tap = _Tap(self.ids)
        goal = node.origin_prompt or node.title
        rendered = render(TemplateId.BRAINSTORM, self._ctx(
            session,
            context_str=self._main_context_str(session, node_id),
            goal=goal,
        ))
        archived = node.content
        node.content = self._generate(rendered)
        node.origin_prompt = goal
        node.user_edited = False
        self._emit(session, event_log, EventKind.BRAINSTORM, node_id,
                   {"node": node_id, "archived_content": archived}, tap, now)
        return node

    # --- sub-canvas lifecycle --------------------------------------------------

    def _classify_modes(self, session: Session, goal: str) -> ModeAssignment:
        rendered = render(TemplateId.MODE_CLASSIFIER, self._ctx(
            session,
            goal=goal,
            mode_definitions=mode_definition_block(list(ReasoningMode),
                                                   self._mode_examples()),
        ))
        return self._validated(rendered, parse_mode_labels, classify=True)

    def _generate_chain(self, session: Session, goal: str,
                        modes: ModeAssignment) -> ChainPlan:
        rendered = render(TemplateId.CHAIN_GENERATION, self._ctx(
            session,
            goal=goal,
            mode_definitions=mode_definition_block(modes.as_list(), self._mode_examples()),
            few_shot_example=self._few_shot(goal, tag="chain", k=2),
        ))

        def validator(raw: str) -> ChainPlan:
            plan = parse_chain_plan(raw, modes)
            validate_chain_plan(plan)
            return plan

        return self._validated(rendered, validator, classify=False)

    def _materialize_chain(self, sub: SubCanvas, plan: ChainPlan, tap: _Tap) -> None:
        segments: list[list[str]] = []
        last_group: Optional[str] = None
        for i, step in enumerate(plan.steps):
            node = ChainNode(
                id=tap.new_id(),
                title=step.title,
                brief=step.brief,
                modes=ModeAssignment(plan.modes.primary, plan.modes.secondary),
                order_index=i,
                parallel_group=step.parallel_group,
            )
            sub.chain_nodes[node.id] = node
            sub.chain_order.append(node.id)
            if step.parallel_group is not None and step.parallel_group == last_group:
                segments[-1].append(node.id)
            else:
                segments.append([node.id])
            last_group = step.parallel_group
        for before, after in zip(segments, segments[1:]):
            for a in before:
                for b in after:
                    _link(sub, tap, source=a, target=b)

    def open_subcanvas(self, session: Session, node_id: str, goal: str,
                       event_log: list[CoCreationEvent]) -> SubCanvas:
        node = session.main_canvas.nodes.get(node_id)
        if node is None:
            raise UnknownId(f"node {node_id} not in main canvas")
        if isinstance(node, DesignNode) and node.subcanvas:
            return session.subcanvases[node.subcanvas]
        if not goal or not goal.strip():
            raise EmptyGoal("sub-canvas goal must be non-empty")
        now = self.clock.now()
        tap = _Tap(self.ids)
        modes = self._classify_modes(session, goal)
        plan = self._generate_chain(session, goal, modes)
        sub = create_subcanvas(session, node_id, goal, tap.new_id())
        self._materialize_chain(sub, plan, tap)
        self._emit(session, event_log, EventKind.OPEN_SUBCANVAS, node_id,
                   {"node": node_id, "goal": goal}, tap, now)
        return sub

    # --- chain node execution --------------------------------------------------

    def _sub(self, session: Session, sub_id: str) -> SubCanvas:
        sub = session.subcanvases.get(sub_id)
        if sub is None:
            raise UnknownId(f"subcanvas {sub_id} not in session")
        return sub

    def _chain_node(self, sub: SubCanvas, node_id: str) -> ChainNode:
        node = sub.chain_nodes.get(node_id)
        if node is None:
            raise UnknownId(f"chain node {node_id} not in subcanvas {sub.id}")
        return node

    def _execute_run(self, session: Session, sub: SubCanvas, node: ChainNode) -> ChainNode:
        """Classify the stage, then generate the rationale. Shared by run and regenerate.

        Validation exhaustion marks the node Failed and returns it; transport
        errors propagate.
        """
        parent = session.main_canvas.nodes[sub.parent]
        content = f"{node.title}: {node.brief}"
        try:
            rendered = render(TemplateId.STAGE_CLASSIFIER, self._ctx(
                session, current_node_content=content))
            stage = self._validated(rendered, parse_stage_label, classify=True)
            node.stage = stage
            apply_transition(node, RunState.CLASSIFIED, self.transitions)

            info = STAGE_INFO[stage]
            parent_content = "; ".join(parent.blocks) if parent.blocks else "(no content yet)"
            few_shot = self._few_shot(content, tag=f"mode:{node.modes.primary.value}", k=1)
            if few_shot == NO_EXAMPLE:
                few_shot = self._few_shot(content, tag="rationale", k=1)
            rendered = render(TemplateId.RATIONALE_GENERATION, self._ctx(
                session,
                rationale_type=info["label"],
                rationale_type_description=info["goal"],
                goal=sub.goal,
                parent_title=parent.title,
                parent_content=parent_content,
                context_str=self._chain_context_str(sub, node.id),
                current_node_content=content,
                few_shot_example=few_shot,
            ))
            rationale = self._validated(rendered, parse_rationale_json, classify=False)
        except ValidationExhausted as exc:
            node.last_error = str(exc)
            apply_transition(node, RunState.FAILED, self.transitions)
            return node
        for note in rationale_word_count_notes(rationale):
            logger.info("rationale length advisory for %s: %s", node.id, note)
        node.rationale = rationale
        node.last_error = None
        apply_transition(node, RunState.COMPLETED, self.transitions)
        node.content_version += 1
        node.completed_fingerprint = self._live_fingerprint(sub, node.id)
        return node

    def run_chain_node(self, session: Session, sub_id: str, node_id: str,
                       event_log: list[CoCreationEvent]) -> ChainNode:
        sub = self._sub(session, sub_id)
        node = self._chain_node(sub, node_id)
        if node.run_state not in (RunState.PENDING, RunState.STALE):
            raise InvalidState(
                f"run requires Pending or Stale, node is {node.run_state.value}; "
                "use regenerate to redo a finished node")
        now = self.clock.now()
        tap = _Tap(self.ids)
        node = self._execute_run(session, sub, node)
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.RUN_NODE, node_id,
                   {"sub": sub_id, "node": node_id,
                    "failed": node.run_state is RunState.FAILED}, tap, now)
        return node

    def regenerate(self, session: Session, sub_id: str, node_id: str,
                   event_log: list[CoCreationEvent]) -> ChainNode:
        sub = self._sub(session, sub_id)
        node = self._chain_node(sub, node_id)
        now = self.clock.now()
        tap = _Tap(self.ids)
        archived = node.rationale.to_dict() if node.rationale else None
        if node.run_state is RunState.COMPLETED:
            apply_transition(node, RunState.STALE, self.transitions)
        node = self._execute_run(session, sub, node)
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.REGENERATE, node_id,
                   {"sub": sub_id, "node": node_id, "archived_rationale": archived},
                   tap, now)
        return node

    # --- co-creation edits ------------------------------------------------------

    @staticmethod
    def _renumber(sub: SubCanvas) -> None:
        for i, nid in enumerate(sub.chain_order):
            sub.chain_nodes[nid].order_index = i

    @staticmethod
    def _preds(sub: SubCanvas, node_id: str) -> list[str]:
        pos = {nid: i for i, nid in enumerate(sub.chain_order)}
        found = {e.source for e in sub.edges.values() if e.target == node_id}
        return sorted(found, key=pos.__getitem__)

    @staticmethod
    def _succs(sub: SubCanvas, node_id: str) -> list[str]:
        pos = {nid: i for i, nid in enumerate(sub.chain_order)}
        found = {e.target for e in sub.edges.values() if e.source == node_id}
        return sorted(found, key=pos.__getitem__)

    def cocreate_add(self, session: Session, sub_id: str, after: Optional[str],
                     user_text: str, event_log: list[CoCreationEvent]) -> ChainNode:
        sub = self._sub(session, sub_id)
        if not user_text or not user_text.strip():
            raise EmptyContent("user text for the new node must be non-empty")
        anchor = self._chain_node(sub, after) if after is not None else None
        now = self.clock.now()
        tap = _Tap(self.ids)

        if sub.chain_order:
            modes = sub.chain_nodes[sub.chain_order[0]].modes
            modes = ModeAssignment(modes.primary, modes.secondary)
        else:
            modes = self._classify_modes(session, user_text)
        draft = self._generate_chain(session, user_text, modes).steps[0]

        node = ChainNode(id=tap.new_id(), title=draft.title, brief=draft.brief,
                         modes=modes)
        sub.chain_nodes[node.id] = node

        if anchor is not None and anchor.parallel_group is not None:
            # sibling inside the anchor's parallel group: same neighbours, same tag
            node.parallel_group = anchor.parallel_group
            for p in self._preds(sub, anchor.id):
                _link(sub, tap, source=p, target=node.id)
            for s in self._succs(sub, anchor.id):
                _link(sub, tap, source=node.id, target=s)
            sub.chain_order.insert(sub.chain_order.index(anchor.id) + 1, node.id)
        elif anchor is not None:
            # splice into the spine right after the anchor
            doomed = [eid for eid, e in sub.edges.items() if e.source == anchor.id]
            successors = [sub.edges[eid].target for eid in doomed]
            for eid in doomed:
                del sub.edges[eid]
            _link(sub, tap, source=anchor.id, target=node.id)
            pos = {nid: i for i, nid in enumerate(sub.chain_order)}
            for s in sorted(successors, key=pos.__getitem__):
                _link(sub, tap, source=node.id, target=s)
            sub.chain_order.insert(sub.chain_order.index(anchor.id) + 1, node.id)
        else:
            sinks = [nid for nid in sub.chain_order
                     if nid != node.id and not self._succs(sub, nid)]
            for sink in sinks:
                _link(sub, tap, source=sink, target=node.id)
            sub.chain_order.append(node.id)

        self._renumber(sub)
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.ADD, node.id,
                   {"sub": sub_id, "after": after, "user_text": user_text}, tap, now)
        return node

    def cocreate_delete(self, session: Session, sub_id: str, node_id: str,
                        event_log: list[CoCreationEvent]) -> int:
        sub = self._sub(session, sub_id)
        self._chain_node(sub, node_id)
        if len(sub.chain_nodes) <= 1:
            raise LastNode("a sub-canvas keeps at least one chain node")
        now = self.clock.now()
        tap = _Tap(self.ids)

        preds = self._preds(sub, node_id)
        succs = self._succs(sub, node_id)
        doomed = [eid for eid, e in sub.edges.items()
                  if e.source == node_id or e.target == node_id]
        for eid in doomed:
            del sub.edges[eid]
        del sub.chain_nodes[node_id]
        sub.chain_order.remove(node_id)

        existing_pairs = {(e.source, e.target) for e in sub.edges.values()}
        for p in preds:
            for s in succs:
                if (p, s) not in existing_pairs:
                    _link(sub, tap, source=p, target=s)

        # a parallel tag on a single remaining node means nothing; drop it
        by_group: dict[str, list[ChainNode]] = {}
        for n in sub.chain_nodes.values():
            if n.parallel_group is not None:
                by_group.setdefault(n.parallel_group, []).append(n)
        for members in by_group.values():
            if len(members) == 1:
                members[0].parallel_group = None

        self._renumber(sub)
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.DELETE, node_id,
                   {"sub": sub_id, "node": node_id}, tap, now)
        return len(doomed)

    def cocreate_revise(self, session: Session, sub_id: str, node_id: str,
                        edits: dict, event_log: list[CoCreationEvent]) -> ChainNode:
        sub = self._sub(session, sub_id)
        node = self._chain_node(sub, node_id)
        if node.run_state not in (RunState.COMPLETED, RunState.STALE):
            raise InvalidState(
                f"revise requires Completed or Stale, node is {node.run_state.value}")
        allowed = {"title", "brief", "rationale"}
        unknown = set(edits) - allowed
        if unknown:
            raise EmptyContent(f"unknown edit fields: {sorted(unknown)}")
        now = self.clock.now()
        tap = _Tap(self.ids)
        if "title" in edits:
            node.title = edits["title"]
        if "brief" in edits:
            node.brief = edits["brief"]
        if "rationale" in edits and node.rationale is not None:
            fields = node.rationale.to_dict()
            fields.update(edits["rationale"])
            node.rationale = Rationale(**fields)
        node.user_edited = True
        node.content_version += 1
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.REVISE, node_id,
                   {"sub": sub_id, "node": node_id, "edits": edits}, tap, now)
        return node

    def cocreate_reorder(self, session: Session, sub_id: str, first: str,
                         second: str, event_log: list[CoCreationEvent]) -> None:
        sub = self._sub(session, sub_id)
        a = self._chain_node(sub, first)
        b = self._chain_node(sub, second)
        now = self.clock.now()
        tap = _Tap(self.ids)

        if a.parallel_group is not None and a.parallel_group == b.parallel_group:
            i, j = sub.chain_order.index(first), sub.chain_order.index(second)
            sub.chain_order[i], sub.chain_order[j] = second, first
        else:
            # only an adjacent, ungrouped spine pair may swap
            src, dst = (a, b) if any(
                e.source == a.id and e.target == b.id for e in sub.edges.values()
            ) else (b, a)
            adjacent = any(e.source == src.id and e.target == dst.id
                           for e in sub.edges.values())
            clean = (adjacent
                     and src.parallel_group is None and dst.parallel_group is None
                     and self._succs(sub, src.id) == [dst.id]
                     and self._preds(sub, dst.id) == [src.id])
            if not clean:
                raise ReorderRejected(
                    f"{first} and {second} are neither parallel siblings nor an "
                    "adjacent unbranched pair")
            link = next(e for e in sub.edges.values()
                        if e.source == src.id and e.target == dst.id)
            for e in sub.edges.values():
                if e is link:
                    continue
                if e.target == src.id:
                    e.target = dst.id
                elif e.source == dst.id:
                    e.source = src.id
            link.source, link.target = dst.id, src.id
            i, j = sub.chain_order.index(src.id), sub.chain_order.index(dst.id)
            sub.chain_order[i], sub.chain_order[j] = dst.id, src.id

        self._renumber(sub)
        self._refresh_staleness(session)
        self._emit(session, event_log, EventKind.REORDER, first,
                   {"sub": sub_id, "first": first, "second": second}, tap, now)

    def refine_prompt(self, session: Session, sub_id: str, new_goal: str,
                      event_log: list[CoCreationEvent]) -> SubCanvas:
        sub = self._sub(session, sub_id)
        if not new_goal or not new_goal.strip():
            raise EmptyGoal("refined goal must be non-empty")
        now = self.clock.now()
        tap = _Tap(self.ids)
        archived = {
            "goal": sub.goal,
            "chain": [_store.chain_node_to_dict(sub.chain_nodes[nid])
                      for nid in sub.chain_order],
        }
        modes = self._classify_modes(session, new_goal)
        plan = self._generate_chain(session, new_goal, modes)
        sub.chain_nodes.clear()
        sub.edges.clear()
        sub.chain_order.clear()
        sub.goal = new_goal
        self._materialize_chain(sub, plan, tap)
        self._emit(session, event_log, EventKind.REFINE_PROMPT, sub_id,
                   {"sub": sub_id, "new_goal": new_goal, "archived": archived}, tap, now)
        return sub

    def output_to_canvas(self, session: Session, sub_id: str, node_id: str,
                         event_log: list[CoCreationEvent]) -> str:
        sub = self._sub(session, sub_id)
        node = self._chain_node(sub, node_id)
        if node.run_state is not RunState.COMPLETED or node.rationale is None:
            raise NotCompleted(f"chain node {node_id} has no completed output to export")
        now = self.clock.now()
        tap = _Tap(self.ids)
        parent = session.main_canvas.nodes[sub.parent]
        exported = sum(
            1 for n in session.main_canvas.nodes.values()
            if isinstance(n, StickyNote) and n.source_chain_node in sub.chain_nodes)
        note = StickyNote(
            id=tap.new_id(),
            content=render_rationale_text(node.rationale),
            position=(parent.position[0] + 300.0, parent.position[1] + 120.0 * exported),
            source_chain_node=node_id,
        )
        add_node(session.main_canvas, note)
        connect(session.main_canvas, parent.id, note.id, tap.new_id())
        self._emit(session, event_log, EventKind.OUTPUT_TO_CANVAS, node_id,
                   {"sub": sub_id, "node": node_id}, tap, now)
        return note.id

    def create_note(self, session: Session, sub_id: Optional[str], content: str,
                    position: tuple[float, float],
                    event_log: list[CoCreationEvent]) -> str:
        if not content or not content.strip():
            raise EmptyContent("note content must be non-empty")
        now = self.clock.now()
        tap = _Tap(self.ids)
        note = StickyNote(id=tap.new_id(), content=content, position=tuple(position))
        if sub_id is None:
            add_node(session.main_canvas, note)
        else:
            self._sub(session, sub_id).notes[note.id] = note
        self._emit(session, event_log, EventKind.CREATE_NOTE, note.id,
                   {"sub": sub_id, "content": content, "position": list(position)},
                   tap, now)
        return note.id

    # --- main-canvas curation ----------------------------------------------------

    def canvas_add_node(self, session: Session, spec: dict,
                        event_log: list[CoCreationEvent]) -> str:
        now = self.clock.now()
        tap = _Tap(self.ids)
        kind = spec.get("kind")
        position = tuple(spec.get("position", (0.0, 0.0)))
        if kind == "design":
            node: CanvasNode = DesignNode(
                id=tap.new_id(), title=spec["title"],
                blocks=list(spec.get("blocks", [])), position=position,
                color=spec.get("color"))
        elif kind == "ai":
            node = AiNode(id=tap.new_id(), title=spec["title"],
                          content=spec.get("content", ""),
                          origin_prompt=spec.get("origin_prompt"), position=position)
        elif kind == "sticky":
            node = StickyNote(id=tap.new_id(), content=spec["content"],
                              position=position)
        else:
            raise EmptyContent(f"unknown node kind {kind!r}")
        add_node(session.main_canvas, node)
        self._emit(session, event_log, EventKind.CANVAS_ADD_NODE, node.id,
                   {"spec": spec}, tap, now)
        return node.id

    def canvas_update_node(self, session: Session, node_id: str, fields: dict,
                           event_log: list[CoCreationEvent]) -> CanvasNode:
        node = session.main_canvas.nodes.get(node_id)
        if node is None:
            raise UnknownId(f"node {node_id} not in main canvas")
        now = self.clock.now()
        tap = _Tap(self.ids)
        editable = {
            DesignNode: {"title", "blocks", "position", "color"},
            AiNode: {"title", "content", "position"},
            StickyNote: {"content", "position"},
        }[type(node)]
        unknown = set(fields) - editable
        if unknown:
            raise EmptyContent(f"fields not editable on {node.kind}: {sorted(unknown)}")
        for key, value in fields.items():
            if key == "position":
                value = tuple(value)
            setattr(node, key, value)
        if isinstance(node, AiNode) and "content" in fields:
            node.user_edited = True
        self._emit(session, event_log, EventKind.CANVAS_UPDATE_NODE, node_id,
                   {"node": node_id, "fields": fields}, tap, now)
        return node

    def canvas_remove_node(self, session: Session, node_id: str,
                           event_log: list[CoCreationEvent]) -> int:
        now = self.clock.now()
        tap = _Tap(self.ids)
        removed = remove_node(session.main_canvas, node_id, session)
        self._emit(session, event_log, EventKind.CANVAS_REMOVE_NODE, node_id,
                   {"node": node_id}, tap, now)
        return removed

    def canvas_connect(self, session: Session, source: str, target: str,
                       event_log: list[CoCreationEvent]) -> str:
        now = self.clock.now()
        tap = _Tap(self.ids)
        edge = connect(session.main_canvas, source, target, tap.new_id())
        self._emit(session, event_log, EventKind.CANVAS_CONNECT, edge.id,
                   {"source": source, "target": target}, tap, now)
        return edge.id

    def canvas_disconnect(self, session: Session, edge_id: str,
                          event_log: list[CoCreationEvent]) -> None:
        now = self.clock.now()
        tap = _Tap(self.ids)
        disconnect(session.main_canvas, edge_id)
        self._emit(session, event_log, EventKind.CANVAS_DISCONNECT, edge_id,
                   {"edge": edge_id}, tap, now)

    # --- event replay --------------------------------------------------------------

    def apply_event(self, session: Session, event: CoCreationEvent,
                    event_log: list[CoCreationEvent]) -> None:
        p = event.payload
        kind = event.kind
        if kind is EventKind.GENERATE_PIPELINE:
            self.generate_pipeline(session, event_log)
        elif kind is EventKind.FILL_NODE:
            self.fill_step_content(session, p["node"], event_log)
        elif kind is EventKind.BRAINSTORM:
            self.brainstorm(session, p["node"], event_log)
        elif kind is EventKind.OPEN_SUBCANVAS:
            self.open_subcanvas(session, p["node"], p["goal"], event_log)
        elif kind is EventKind.RUN_NODE:
            self.run_chain_node(session, p["sub"], p["node"], event_log)
        elif kind is EventKind.REGENERATE:
            self.regenerate(session, p["sub"], p["node"], event_log)
        elif kind is EventKind.ADD:
            self.cocreate_add(session, p["sub"], p["after"], p["user_text"], event_log)
        elif kind is EventKind.DELETE:
            self.cocreate_delete(session, p["sub"], p["node"], event_log)
        elif kind is EventKind.REVISE:
            self.cocreate_revise(session, p["sub"], p["node"], p["edits"], event_log)
        elif kind is EventKind.REORDER:
            self.cocreate_reorder(session, p["sub"], p["first"], p["second"], event_log)
        elif kind is EventKind.REFINE_PROMPT:
            self.refine_prompt(session, p["sub"], p["new_goal"], event_log)
        elif kind is EventKind.OUTPUT_TO_CANVAS:
            self.output_to_canvas(session, p["sub"], p["node"], event_log)
        elif kind is EventKind.CREATE_NOTE:
            self.create_note(session, p["sub"], p["content"],
                             tuple(p["position"]), event_log)
        elif kind is EventKind.CANVAS_ADD_NODE:
            self.canvas_add_node(session, p["spec"], event_log)
        elif kind is EventKind.CANVAS_UPDATE_NODE:
            self.canvas_update_node(session, p["node"], p["fields"], event_log)
        elif kind is EventKind.CANVAS_REMOVE_NODE:
            self.canvas_remove_node(session, p["node"], event_log)
        elif kind is EventKind.CANVAS_CONNECT:
            self.canvas_connect(session, p["source"], p["target"], event_log)
        elif kind is EventKind.CANVAS_DISCONNECT:
            self.canvas_disconnect(session, p["edge"], event_log)
        else:
            raise ValueError(f"unhandled event kind {kind}")


def replay_events(
    gateway: Gateway,
    session_id: str,
    background: str,
    design_goal: str,
    style_preferences: tuple[str, ...],
    created_at: datetime,
    events: list[CoCreationEvent],
    exemplars: Optional[ExemplarStore] = None,
    model: str = "design-loop-v1",
) -> tuple[Session, list[CoCreationEvent]]:
    """Rebuild a session by re-running its event log against a fresh state.

    The scripted clock and scripted ids feed back exactly the instants and ids
    recorded in the events, so the result is byte-identical to the original
    session when the gateway serves the original responses.
    """
    ids = ScriptedIds([])
    clock = ScriptedClock([e.at for e in events])
    orch = Orchestrator(gateway, exemplars, clock=clock, ids=ids, model=model)
    session = orch.new_session(background, design_goal, style_preferences,
                               session_id=session_id, created_at=created_at)
    log: list[CoCreationEvent] = []
    for event in events:
        ids.push(*event.payload.get("ids", []))
        orch.apply_event(session, event, log)
    return session, log
