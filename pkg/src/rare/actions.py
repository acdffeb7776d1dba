"""The seven reasoning actions: prompts, execution, and output parsing.

Transition relation (which actions are legal in which context):

    root        -> {A1, A2, A3, A5, A6}
    after A1    -> {A1, A2, A3, A6}
    after A5    -> {A1, A2, A3, A6}   (rephrased question used from here on)
    after A3    -> {A3, A4, A7}       (sub-question chain open)
    after A4    -> {A3}
    after A7    -> {A3}

always intersected with the enabled-action set. A2 and A6 end a trajectory by
construction; an A3 whose sub-question begins with the answer-now marker ends
it too; any other step ends it when its output contains an extractable final
answer. Once the sub-question chain reaches the configured cap, only A2
remains, which bounds trajectory depth.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import NoViableChildError, ValidationError
from .lm import LmBackend, request_for
from .retrieval import RetrievalIndex, ScoredHit, search
from .types import ActionKind, ActionStep, DocumentRef, Question, SearchConfig

ANSWER_NOW_MARKER = "now we can answer"

_ANSWER_RE = re.compile(
    r"the answer is\s*:?\s*\(?([A-Za-z])\)?(?![A-Za-z])", re.IGNORECASE
)
_STEP_SPLIT_RE = re.compile(r"\n(?=Step\s*\d)")
_QUESTION_LABEL_RE = re.compile(r"(?:^|\n)\s*Question[^:\n]*:\s*", re.IGNORECASE)
_ANSWER_LABEL_RE = re.compile(r"(?:^|\n)\s*Answer[^:\n]*:\s*", re.IGNORECASE)
_QUERY_LINE_RE = re.compile(r"^\s*Query[^:\n]*:\s*(.*)$", re.IGNORECASE)
_DOCUMENT_LINE_RE = re.compile(r"^\s*Document", re.IGNORECASE)
_REPHRASED_PREFIX_RE = re.compile(r"^\s*Rephrased Question\s*:\s*", re.IGNORECASE)


class PromptLibrary:
    """Loads the per-action template files and renders prompts.

    Templates are plain text with ``{question}``, ``{steps}``,
    ``{sub_question}`` and ``{documents}`` placeholders; everything else
    passes through verbatim, so few-shot scaffolds stay intact.
    """

    def __init__(self, templates: dict[ActionKind, str]):
        missing = set(ActionKind) - set(templates)
        if missing:
            raise ValidationError(f"missing templates for {sorted(k.value for k in missing)}")
        self.templates = dict(templates)

    @classmethod
    def default(cls) -> "PromptLibrary":
        templates = {}
        root = resources.files(__package__) / "templates"
        for kind in ActionKind:
            templates[kind] = (root / f"{kind.value.lower()}.txt").read_text("utf-8")
        return cls(templates)

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptLibrary":
        base = Path(path)
        templates = {}
        for kind in ActionKind:
            file = base / f"{kind.value.lower()}.txt"
            if not file.is_file():
                raise ValidationError(f"template file not found: {file}")
            templates[kind] = file.read_text("utf-8")
        return cls(templates)

    def scaffold(self, kind: ActionKind) -> str:
        """Template text up to the first placeholder (the few-shot part)."""
        text = self.templates[kind]
        brace = text.find("{")
        return text if brace < 0 else text[:brace]

    def render(self, kind: ActionKind, question: str = "", steps: str = "",
               sub_question: str = "", documents: str = "") -> str:
        return self.templates[kind].format(
            question=question,
            steps=steps,
            sub_question=sub_question,
            documents=documents,
        )


_DEFAULT_PROMPTS: PromptLibrary | None = None


def default_prompts() -> PromptLibrary:
    global _DEFAULT_PROMPTS
    if _DEFAULT_PROMPTS is None:
        _DEFAULT_PROMPTS = PromptLibrary.default()
    return _DEFAULT_PROMPTS


@dataclass(frozen=True)
class ActionContext:
    """Search state preceding the next action."""

    question: Question
    steps: tuple[ActionStep, ...] = ()
    rephrased_stem: str | None = None
    pending_sub_question: str | None = None
    terminal: bool = False

    def extend(self, outcome: "ActionOutcome") -> "ActionContext":
        step = outcome.step
        rephrased = step.output if step.kind == ActionKind.A5 else self.rephrased_stem
        pending = None
        if step.kind == ActionKind.A3 and not outcome.is_terminal:
            pending = step.sub_question
        return ActionContext(
            question=self.question,
            steps=self.steps + (step,),
            rephrased_stem=rephrased,
            pending_sub_question=pending,
            terminal=outcome.is_terminal,
        )

    def subquestion_count(self) -> int:
        return sum(1 for step in self.steps if step.kind == ActionKind.A3)

    def question_text(self) -> str:
        return self.question.render(self.rephrased_stem)


@dataclass(frozen=True)
class ActionOutcome:
    step: ActionStep
    is_terminal: bool
    extracted_answer: str | None = None

    def __post_init__(self) -> None:
        if self.is_terminal != (self.extracted_answer is not None):
            raise ValidationError("is_terminal must match presence of an extracted answer")


def extract_answer(text: str, q: Question) -> str | None:
    """Label from the last ``the answer is <label>`` occurrence, or None.

    The label must be one of the question's option keys; a letter that merely
    starts a longer word does not count.
    """
    labels = set(q.labels)
    found = None
    for match in _ANSWER_RE.finditer(text):
        label = match.group(1).upper()
        if label in labels:
            found = label
    return found


def valid_actions(ctx: ActionContext, cfg: SearchConfig) -> frozenset[ActionKind]:
    """Subset of enabled actions legal at this context."""
    if ctx.terminal:
        return frozenset()
    if ctx.subquestion_count() >= cfg.max_subquestion_chain:
        base = {ActionKind.A2}
    elif not ctx.steps:
        base = {ActionKind.A1, ActionKind.A2, ActionKind.A3, ActionKind.A5, ActionKind.A6}
    else:
        last = ctx.steps[-1].kind
        if last in (ActionKind.A1, ActionKind.A5):
            base = {ActionKind.A1, ActionKind.A2, ActionKind.A3, ActionKind.A6}
        elif last == ActionKind.A3:
            base = {ActionKind.A3, ActionKind.A4, ActionKind.A7}
        elif last in (ActionKind.A4, ActionKind.A7):
            base = {ActionKind.A3}
        else:
            # A2/A6 steps are terminal; a consistent context cannot reach here
            base = set()
    return frozenset(base) & cfg.enabled_actions


# --- output parsing ----------------------------------------------------------

def parse_first_step(text: str) -> str:
    """First reasoning step from an A1 completion (cut before a second Step)."""
    parts = _STEP_SPLIT_RE.split(text.strip(), maxsplit=1)
    return parts[0].strip()


def parse_sub_qa(text: str) -> tuple[str, str] | None:
    """(sub-question, answer) from an A3 completion, or None if unparseable.

    Accepts ``Question x.y: ... Answer x.y: ...`` labelled pairs and the
    unlabelled form where the completion opens with the answer-now marker.
    Only the first pair is kept when the model over-generates.
    """
    qm = _QUESTION_LABEL_RE.search(text)
    if qm:
        rest = text[qm.end():]
    else:
        stripped = text.strip()
        if not stripped.lower().startswith(ANSWER_NOW_MARKER):
            return None
        rest = stripped
    am = _ANSWER_LABEL_RE.search(rest)
    if am:
        sub_question = rest[: am.start()].strip()
        answer = rest[am.end():]
    else:
        first, _, remainder = rest.partition("\n")
        sub_question = first.strip()
        answer = remainder
    next_q = _QUESTION_LABEL_RE.search(answer)
    if next_q:
        answer = answer[: next_q.start()]
    answer = answer.strip()
    if not sub_question or not answer:
        return None
    return sub_question, answer


def parse_queries(text: str, limit: int) -> list[str]:
    """Search queries from a completion: ``Query ...:`` lines when present,
    otherwise bare nonempty lines; ``Document ...`` lines never count."""
    labelled: list[str] = []
    bare: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        match = _QUERY_LINE_RE.match(line)
        if match:
            if match.group(1).strip():
                labelled.append(match.group(1).strip())
        elif not _DOCUMENT_LINE_RE.match(line):
            bare.append(line)
    chosen = labelled if labelled else bare
    return chosen[:limit]


def render_cot_steps(steps: tuple[ActionStep, ...]) -> str:
    lines = []
    for step in steps:
        if step.sub_question:
            lines.append(step.sub_question)
        lines.append(step.output)
    return "\n".join(lines)


def render_qa_steps(steps: tuple[ActionStep, ...]) -> str:
    """Render the step history as the numbered sub-question chain the A3
    template continues. Re-answer steps replace the previous answer."""
    prefix: list[str] = []
    pairs: list[tuple[str, str]] = []
    for step in steps:
        if step.kind == ActionKind.A3:
            pairs.append((step.sub_question or "", step.output))
        elif step.kind in (ActionKind.A4, ActionKind.A7) and pairs:
            pairs[-1] = (pairs[-1][0], step.output)
        else:
            prefix.append(step.output)
    lines = list(prefix)
    for i, (sub_question, answer) in enumerate(pairs, start=1):
        lines.append(f"Question 2.{i}: {sub_question}")
        lines.append(f"Answer 2.{i}: {answer}")
    return "\n".join(lines)


def render_documents(hits: list[ScoredHit] | tuple[DocumentRef, ...],
                     index: RetrievalIndex | None = None) -> str:
    lines = []
    for hit in hits:
        title = ""
        if index is not None:
            try:
                title = index.document(hit.doc_id).title
            except KeyError:
                title = ""
        lines.append(f"{title}: {hit.snippet}" if title else hit.snippet)
    return "\n".join(lines)


def merge_hits(hit_lists: list[list[ScoredHit]], cap: int) -> tuple[DocumentRef, ...]:
    """Union per-query hits, first occurrence wins, capped."""
    merged: list[DocumentRef] = []
    seen: set[str] = set()
    for hits in hit_lists:
        for hit in hits:
            if hit.doc_id not in seen:
                seen.add(hit.doc_id)
                merged.append(hit)
    return tuple(merged[:cap])


# --- execution ---------------------------------------------------------------

def execute_action(
    kind: ActionKind,
    ctx: ActionContext,
    backend: LmBackend,
    index: RetrievalIndex | None,
    cfg: SearchConfig,
    prompts: PromptLibrary | None = None,
    n_outcomes: int | None = None,
) -> list[ActionOutcome]:
    """Sample outcomes for one action at one context.

    Returns up to ``n_outcomes`` (default ``cfg.children_per_action``)
    outcomes; unparseable samples are discarded and an empty harvest raises
    NoViableChildError. Backend failures propagate.
    """
    prompts = prompts or default_prompts()
    n = n_outcomes if n_outcomes is not None else cfg.children_per_action
    question_text = ctx.question_text()

    if kind == ActionKind.A1:
        prompt = prompts.render(ActionKind.A1, question=question_text,
                                steps=render_cot_steps(ctx.steps))
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("### Instruction",)))
        outcomes = []
        for completion in resp.completions:
            text = parse_first_step(completion)
            if not text:
                continue
            answer = extract_answer(text, ctx.question)
            step = ActionStep(ActionKind.A1, prompt, text)
            outcomes.append(ActionOutcome(step, answer is not None, answer))

    elif kind == ActionKind.A2:
        prompt = prompts.render(ActionKind.A2, question=question_text,
                                steps=render_cot_steps(ctx.steps))
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("### Instruction",)))
        outcomes = []
        for completion in resp.completions:
            text = completion.strip()
            answer = extract_answer(text, ctx.question)
            if not text or answer is None:
                continue
            step = ActionStep(ActionKind.A2, prompt, text)
            outcomes.append(ActionOutcome(step, True, answer))

    elif kind == ActionKind.A3:
        prompt = prompts.render(ActionKind.A3, question=question_text,
                                steps=render_qa_steps(ctx.steps))
        resp = backend.complete(request_for("action_gen", prompt, n))
        outcomes = []
        for completion in resp.completions:
            parsed = parse_sub_qa(completion)
            if parsed is None:
                continue
            sub_question, answer_text = parsed
            is_final = sub_question.lower().startswith(ANSWER_NOW_MARKER)
            step = ActionStep(ActionKind.A3, prompt, answer_text, sub_question=sub_question)
            if is_final:
                answer = extract_answer(answer_text, ctx.question)
                if answer is None:
                    continue
                outcomes.append(ActionOutcome(step, True, answer))
            else:
                outcomes.append(ActionOutcome(step, False, None))

    elif kind == ActionKind.A4:
        sub_question = ctx.pending_sub_question
        if not sub_question:
            raise ValidationError("A4 requires a pending sub-question")
        prompt = prompts.render(ActionKind.A4, question=question_text,
                                sub_question=sub_question)
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("### Instruction",)))
        outcomes = []
        for completion in resp.completions:
            text = completion.strip()
            if not text:
                continue
            answer = extract_answer(text, ctx.question)
            step = ActionStep(ActionKind.A4, prompt, text, sub_question=sub_question)
            outcomes.append(ActionOutcome(step, answer is not None, answer))

    elif kind == ActionKind.A5:
        prompt = prompts.render(ActionKind.A5, question=question_text)
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("Original Question:",)))
        outcomes = []
        for completion in resp.completions:
            text = _REPHRASED_PREFIX_RE.sub("", completion.strip()).strip()
            if not text:
                continue
            answer = extract_answer(text, ctx.question)
            step = ActionStep(ActionKind.A5, prompt, text)
            outcomes.append(ActionOutcome(step, answer is not None, answer))

    elif kind == ActionKind.A6:
        if index is None:
            raise ValidationError("A6 requires a retrieval index")
        query_prompt = prompts.render(ActionKind.A6, question=question_text)
        query_resp = backend.complete(request_for("query_gen", query_prompt, 1,
                                                  stop_sequences=("\nQuestion 3",)))
        queries = parse_queries(query_resp.completions[0], cfg.queries_per_call)
        if not queries:
            raise NoViableChildError("A6 query generation produced no queries")
        hit_lists = [search(index, query, cfg.retrieval_top_k) for query in queries]
        merged = merge_hits(hit_lists, cfg.retrieval_top_k)
        prompt = prompts.render(ActionKind.A7, sub_question=question_text,
                                documents=render_documents(list(merged), index))
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("### Instruction",)))
        outcomes = []
        for completion in resp.completions:
            text = completion.strip()
            answer = extract_answer(text, ctx.question)
            if not text or answer is None:
                continue
            step = ActionStep(ActionKind.A6, prompt, text,
                              retrieved=merged, queries=tuple(queries))
            outcomes.append(ActionOutcome(step, True, answer))

    elif kind == ActionKind.A7:
        if index is None:
            raise ValidationError("A7 requires a retrieval index")
        sub_question = ctx.pending_sub_question
        if not sub_question:
            raise ValidationError("A7 requires a pending sub-question")
        hits = tuple(search(index, sub_question, cfg.retrieval_top_k))
        prompt = prompts.render(ActionKind.A7, sub_question=sub_question,
                                documents=render_documents(list(hits), index))
        resp = backend.complete(request_for("action_gen", prompt, n,
                                            stop_sequences=("### Instruction",)))
        outcomes = []
        for completion in resp.completions:
            text = completion.strip()
            if not text:
                continue
            answer = extract_answer(text, ctx.question)
            step = ActionStep(ActionKind.A7, prompt, text,
                              sub_question=sub_question, retrieved=hits,
                              queries=(sub_question,))
            outcomes.append(ActionOutcome(step, answer is not None, answer))

    else:  # pragma: no cover
        raise ValidationError(f"unknown action kind: {kind}")

    if not outcomes:
        raise NoViableChildError(f"no viable child for {kind.value}")
    return outcomes
