"""Core domain types: questions, actions, reasoning steps, trajectories, config.

Everything here is an immutable value object, safe to share across worker
threads. Each type has a ``*_to_record`` / ``*_from_record`` codec pair for
the line-delimited JSON formats used by the CLI and report tooling.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping

from .errors import ValidationError

LABELS = "ABCDE"


class ActionKind(str, enum.Enum):
    """The seven reasoning actions available to the search."""

    A1 = "A1"  # propose one next reasoning step
    A2 = "A2"  # propose all remaining steps and a final answer
    A3 = "A3"  # generate the next sub-question and answer it
    A4 = "A4"  # re-answer the pending sub-question
    A5 = "A5"  # rephrase the question
    A6 = "A6"  # generate search queries, retrieve, answer with evidence
    A7 = "A7"  # retrieve for the pending sub-question and re-answer it

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.value


RETRIEVAL_ACTIONS = frozenset({ActionKind.A6, ActionKind.A7})
SUBQUESTION_ACTIONS = frozenset({ActionKind.A3, ActionKind.A4, ActionKind.A7})
ALL_ACTIONS = frozenset(ActionKind)
BASE_ACTIONS = frozenset(
    {ActionKind.A1, ActionKind.A2, ActionKind.A3, ActionKind.A4, ActionKind.A5}
)


def parse_action_kind(text: str) -> ActionKind:
    try:
        return ActionKind(text)
    except ValueError:
        raise ValidationError(f"unknown action kind: {text!r}") from None


@dataclass(frozen=True)
class Question:
    """One multiple-choice question.

    ``options`` is an ordered sequence of (label, text) pairs; labels must be
    unique and contiguous from "A". ``gold_label`` is optional so the engine
    can run inference-only.
    """

    id: str
    stem: str
    options: tuple[tuple[str, str], ...]
    gold_label: str | None = None
    domain_tag: str = ""

    def __post_init__(self) -> None:
        # accept a mapping or any iterable of pairs, store canonical tuples
        opts = self.options
        if isinstance(opts, Mapping):
            pairs = tuple((str(k), str(v)) for k, v in opts.items())
        else:
            pairs = tuple((str(k), str(v)) for k, v in opts)
        object.__setattr__(self, "options", pairs)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.options)

    def options_map(self) -> dict[str, str]:
        return dict(self.options)

    def option_text(self, label: str) -> str:
        for key, text in self.options:
            if key == label:
                return text
        raise KeyError(label)

    def render(self, rephrased_stem: str | None = None) -> str:
        """Inline question text with options, e.g. ``...? A: foo, B: bar``.

        A rephrased stem is used verbatim because rephrasing already restates
        the options.
        """
        if rephrased_stem:
            return rephrased_stem
        opts = ", ".join(f"{label}: {text}" for label, text in self.options)
        return f"{self.stem} {opts}"


def validate_question(q: Question) -> None:
    """Raise ValidationError unless all Question invariants hold."""
    if not q.stem.strip():
        raise ValidationError(f"question {q.id!r}: empty stem")
    if not q.options:
        raise ValidationError(f"question {q.id!r}: empty options")
    labels = q.labels
    if len(set(labels)) != len(labels):
        raise ValidationError(f"question {q.id!r}: duplicate label")
    if not 2 <= len(labels) <= len(LABELS):
        raise ValidationError(
            f"question {q.id!r}: expected 2-{len(LABELS)} options, got {len(labels)}"
        )
    expected = tuple(LABELS[: len(labels)])
    if labels != expected:
        raise ValidationError(
            f"question {q.id!r}: labels {labels} not contiguous from 'A'"
        )
    if q.gold_label is not None and q.gold_label not in labels:
        raise ValidationError(
            f"question {q.id!r}: gold label {q.gold_label!r} not among options"
        )


@dataclass(frozen=True)
class DocumentRef:
    """A retrieved passage as embedded in a reasoning step."""

    doc_id: str
    score: float
    snippet: str


@dataclass(frozen=True)
class ActionStep:
    """One executed reasoning step.

    ``retrieved`` is nonempty only for A6/A7 steps; ``sub_question`` is
    present only for A3/A4/A7 steps.
    """

    kind: ActionKind
    prompt_rendered: str
    output: str
    sub_question: str | None = None
    retrieved: tuple[DocumentRef, ...] = ()
    queries: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.retrieved and self.kind not in RETRIEVAL_ACTIONS:
            raise ValidationError(f"{self.kind} step cannot carry retrieved documents")
        if self.sub_question is not None and self.kind not in SUBQUESTION_ACTIONS:
            raise ValidationError(f"{self.kind} step cannot carry a sub-question")


@dataclass(frozen=True)
class Trajectory:
    """A root-to-leaf reasoning path for one question."""

    question_ref: str
    steps: tuple[ActionStep, ...]
    final_answer: str | None = None
    terminal_reward: float = 0.0
    factuality: "FactualityReport | None" = None

    def action_sequence(self) -> tuple[ActionKind, ...]:
        return tuple(step.kind for step in self.steps)

    def content_hash(self) -> str:
        """Hash of the step outputs, used to deduplicate candidates."""
        h = hashlib.sha256()
        for step in self.steps:
            h.update(step.output.encode("utf-8"))
            h.update(b"\x1e")
        return h.hexdigest()[:16]

    def factuality_score(self) -> float:
        """Score for ranking; -1.0 marks a failed or missing report."""
        return self.factuality.score if self.factuality is not None else -1.0


@dataclass(frozen=True)
class Statement:
    """One sentence of a trajectory, with its evidence and verdict."""

    index: int
    text: str
    queries: tuple[str, ...] = ()
    evidence: tuple[DocumentRef, ...] = ()
    label: str | None = None  # "supported" | "not_supported", set after rating


@dataclass(frozen=True)
class FactualityReport:
    """Per-statement support labels plus the aggregate score."""

    statements: tuple[Statement, ...]
    supported_count: int
    not_supported_count: int
    score: float

    def __post_init__(self) -> None:
        if self.supported_count + self.not_supported_count != len(self.statements):
            raise ValidationError("statement counts do not partition the report")


def make_factuality_report(statements: Iterable[Statement]) -> FactualityReport:
    """Aggregate rated statements; score is supported / total, division last."""
    stmts = tuple(statements)
    supported = sum(1 for s in stmts if s.label == "supported")
    not_supported = len(stmts) - supported
    score = supported / len(stmts) if stmts else 0.0
    return FactualityReport(stmts, supported, not_supported, score)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for one search run. ``validate()`` checks the invariants."""

    exploration_c: float = 1.0
    rollouts: int = 4
    max_depth: int = 8
    children_per_action: int = 1
    n_consistency_samples: int = 3
    enabled_actions: frozenset[ActionKind] = ALL_ACTIONS
    rafs_enabled: bool = True
    retrieval_top_k: int = 5
    queries_per_call: int = 3
    rng_seed: int = 0
    max_subquestion_chain: int = 6

    def validate(self) -> None:
        if self.exploration_c <= 0:
            raise ValidationError("exploration_c must be > 0")
        for name in ("rollouts", "max_depth", "children_per_action",
                     "n_consistency_samples", "retrieval_top_k", "queries_per_call"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        extra = self.enabled_actions - ALL_ACTIONS
        if extra:
            raise ValidationError(f"unknown actions enabled: {extra}")
        if ActionKind.A4 in self.enabled_actions and ActionKind.A3 not in self.enabled_actions:
            raise ValidationError("A4 enabled requires A3 enabled")
        if ActionKind.A7 in self.enabled_actions and ActionKind.A3 not in self.enabled_actions:
            raise ValidationError("A7 enabled requires A3 enabled")

    def with_seed(self, seed: int) -> "SearchConfig":
        return replace(self, rng_seed=seed)


def derive_seed(base_seed: int, key: str) -> int:
    """Stable per-question seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{base_seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# --- record codecs -----------------------------------------------------------

def question_to_record(q: Question) -> dict[str, Any]:
    record: dict[str, Any] = {
        "id": q.id,
        "question": q.stem,
        "options": q.options_map(),
    }
    if q.gold_label is not None:
        record["answer"] = q.gold_label
    if q.domain_tag:
        record["domain"] = q.domain_tag
    return record


def question_from_record(record: Mapping[str, Any]) -> Question:
    """Decode one dataset record. Normalizes numeric option keys and yes/no
    answers into the contiguous letter-label form, then validates."""
    if "id" not in record or "question" not in record:
        raise ValidationError("record missing 'id' or 'question'")
    raw_options = record.get("options") or {}
    if isinstance(raw_options, Mapping):
        pairs = [(str(k), str(v)) for k, v in raw_options.items()]
    else:
        pairs = [(str(k), str(v)) for k, v in raw_options]
    answer = record.get("answer")
    answer = None if answer is None else str(answer)

    if not pairs and answer is not None and answer.strip().lower() in (
        "yes", "no", "true", "false",
    ):
        pairs = [("A", "yes"), ("B", "no")]
        answer = "A" if answer.strip().lower() in ("yes", "true") else "B"
    elif pairs:
        keys = [k for k, _ in pairs]
        if len(set(keys)) != len(keys):
            raise ValidationError(f"record {record.get('id')!r}: duplicate label")
        if all(k.strip().isdigit() for k in keys):
            order = sorted(range(len(pairs)), key=lambda i: int(keys[i].strip()))
            relabeled = [(LABELS[rank], pairs[i][1]) for rank, i in enumerate(order)]
            if answer is not None and answer.strip() in [k.strip() for k in keys]:
                pos = [keys[i].strip() for i in order].index(answer.strip())
                answer = LABELS[pos]
            pairs = relabeled
        else:
            pairs = [(k.strip().upper(), v) for k, v in pairs]
            if answer is not None:
                answer = answer.strip().upper()

    q = Question(
        id=str(record["id"]),
        stem=str(record["question"]),
        options=pairs,
        gold_label=answer,
        domain_tag=str(record.get("domain", "") or ""),
    )
    validate_question(q)
    return q


def document_ref_to_record(ref: DocumentRef) -> dict[str, Any]:
    return {"doc_id": ref.doc_id, "score": ref.score, "snippet": ref.snippet}


def document_ref_from_record(record: Mapping[str, Any]) -> DocumentRef:
    return DocumentRef(
        doc_id=str(record["doc_id"]),
        score=float(record["score"]),
        snippet=str(record["snippet"]),
    )


def action_step_to_record(step: ActionStep) -> dict[str, Any]:
    return {
        "kind": step.kind.value,
        "prompt_rendered": step.prompt_rendered,
        "output": step.output,
        "sub_question": step.sub_question,
        "retrieved": [document_ref_to_record(r) for r in step.retrieved],
        "queries": list(step.queries),
    }


def action_step_from_record(record: Mapping[str, Any]) -> ActionStep:
    return ActionStep(
        kind=parse_action_kind(record["kind"]),
        prompt_rendered=str(record.get("prompt_rendered", "")),
        output=str(record["output"]),
        sub_question=record.get("sub_question"),
        retrieved=tuple(document_ref_from_record(r) for r in record.get("retrieved", [])),
        queries=tuple(str(x) for x in record.get("queries", [])),
    )


def statement_to_record(stmt: Statement) -> dict[str, Any]:
    return {
        "index": stmt.index,
        "text": stmt.text,
        "queries": list(stmt.queries),
        "evidence_ids": [ref.doc_id for ref in stmt.evidence],
        "label": stmt.label,
    }


def factuality_report_to_record(report: FactualityReport) -> dict[str, Any]:
    return {
        "statements": [statement_to_record(s) for s in report.statements],
        "supported": report.supported_count,
        "not_supported": report.not_supported_count,
        "score": report.score,
    }


def trajectory_to_record(traj: Trajectory) -> dict[str, Any]:
    return {
        "question_id": traj.question_ref,
        "actions": [k.value for k in traj.action_sequence()],
        "steps": [action_step_to_record(s) for s in traj.steps],
        "final_answer": traj.final_answer,
        "terminal_reward": traj.terminal_reward,
        "factuality_score": traj.factuality.score if traj.factuality else None,
        "trajectory_hash": traj.content_hash(),
    }


def trajectory_from_record(record: Mapping[str, Any]) -> Trajectory:
    return Trajectory(
        question_ref=str(record["question_id"]),
        steps=tuple(action_step_from_record(s) for s in record.get("steps", [])),
        final_answer=record.get("final_answer"),
        terminal_reward=float(record.get("terminal_reward", 0.0)),
    )


def config_to_record(cfg: SearchConfig) -> dict[str, Any]:
    return {
        "exploration_c": cfg.exploration_c,
        "rollouts": cfg.rollouts,
        "max_depth": cfg.max_depth,
        "children_per_action": cfg.children_per_action,
        "n_consistency_samples": cfg.n_consistency_samples,
        "enabled_actions": sorted(k.value for k in cfg.enabled_actions),
        "rafs_enabled": cfg.rafs_enabled,
        "retrieval_top_k": cfg.retrieval_top_k,
        "queries_per_call": cfg.queries_per_call,
        "rng_seed": cfg.rng_seed,
        "max_subquestion_chain": cfg.max_subquestion_chain,
    }


def config_from_record(record: Mapping[str, Any]) -> SearchConfig:
    kwargs = dict(record)
    kwargs["enabled_actions"] = frozenset(
        parse_action_kind(k) for k in record["enabled_actions"]
    )
    return SearchConfig(**kwargs)
