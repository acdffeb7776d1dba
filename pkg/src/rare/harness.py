"""Dataset loading, batch evaluation, cost accounting, trajectory statistics.

Questions are evaluated independently on a bounded thread pool; each question
gets a deterministic seed derived from its id so results never depend on pool
size or scheduling order. Per-question costs are tracked through a scoped
ledger wrapped around the shared backend.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable

from .actions import PromptLibrary
from .errors import DatasetError, RareError, ValidationError
from .factuality import score_candidates
from .lm import LmBackend, ScopedBackend
from .mcts import run_search
from .retrieval import RetrievalIndex
from .selection import SelectionResult, run_baseline, select_majority, select_rare
from .types import (
    ActionKind,
    BASE_ACTIONS,
    ALL_ACTIONS,
    Question,
    SearchConfig,
    Trajectory,
    config_to_record,
    derive_seed,
    question_from_record,
    trajectory_to_record,
)

logger = logging.getLogger(__name__)

# One preset per ablation row: which retrieval actions exist and whether the
# factuality scorer (instead of majority voting) picks the answer.
ABLATION_PRESETS: dict[str, tuple[frozenset[ActionKind], bool]] = {
    "rstar": (BASE_ACTIONS, False),
    "rstar+rafs": (BASE_ACTIONS, True),
    "rstar+a6": (BASE_ACTIONS | {ActionKind.A6}, False),
    "rstar+a7": (BASE_ACTIONS | {ActionKind.A7}, False),
    "rstar+a6+a7": (ALL_ACTIONS, False),
    "rare": (ALL_ACTIONS, True),
}

EVAL_METHODS = ("cot", "sc", "rag", "rstar", "rare")


def apply_preset(cfg: SearchConfig, preset: str) -> SearchConfig:
    if preset not in ABLATION_PRESETS:
        raise ValidationError(
            f"unknown ablation preset {preset!r}; choose from {sorted(ABLATION_PRESETS)}"
        )
    enabled, rafs = ABLATION_PRESETS[preset]
    return replace(cfg, enabled_actions=enabled, rafs_enabled=rafs)


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    method: str
    predicted: str | None
    gold: str | None
    correct: bool
    candidate_count: int
    calls_used: int
    tokens_used: int
    action_sequence: tuple[ActionKind, ...]
    error: str | None = None


@dataclass(frozen=True)
class RunReport:
    config: dict[str, Any]
    records: tuple[EvalRecord, ...]
    accuracy: float
    avg_calls: float
    avg_tokens: float
    trajectory_histogram: dict[str, int]


def load_dataset(path: str, strict: bool = True) -> list[Question]:
    """Read a line-delimited question file. Malformed lines are fatal unless
    ``strict`` is off, in which case they are reported and skipped."""

    def pairs_hook(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
        keys = [k for k, _ in pairs]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ValidationError(f"duplicate label: {dupes}")
        return dict(pairs)

    questions: list[Question] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset: {exc}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line, object_pairs_hook=pairs_hook)
                questions.append(question_from_record(record))
            except (json.JSONDecodeError, ValidationError) as exc:
                if strict:
                    raise DatasetError(str(exc), line_no=line_no) from None
                logger.warning("skipping dataset line %d: %s", line_no, exc)
    return questions


def _sequence_key(sequence: tuple[ActionKind, ...]) -> str:
    return "->".join(kind.value for kind in sequence)


def evaluate_question(question: Question, method: str, backend: LmBackend,
                      index: RetrievalIndex | None, cfg: SearchConfig,
                      prompts: PromptLibrary | None = None,
                      ) -> tuple[EvalRecord, list[Trajectory]]:
    """Run one method on one question; failures become an incorrect record."""
    scope = ScopedBackend(backend)
    qcfg = cfg.with_seed(derive_seed(cfg.rng_seed, question.id))
    result: SelectionResult | None = None
    candidates: list[Trajectory] = []
    error: str | None = None
    try:
        if method in ("cot", "sc", "rag"):
            result = run_baseline(method, question, scope, index, qcfg, prompts)
            candidates = [result.chosen]
        else:
            searched = run_search(question, scope, index, qcfg, prompts)
            if qcfg.rafs_enabled:
                candidates = score_candidates(searched, scope, index, qcfg)
                result = select_rare(candidates)
            else:
                candidates = searched
                result = select_majority(candidates, method="rstar")
    except RareError as exc:
        error = f"{type(exc).__name__}: {exc}"

    ledger = scope.snapshot_costs()
    if result is not None:
        predicted = result.chosen.final_answer
        sequence = result.chosen.action_sequence()
        candidate_count = len(result.all_candidates)
    else:
        predicted, sequence, candidate_count = None, (), 0
        candidates = []
    record = EvalRecord(
        question_id=question.id,
        method=method,
        predicted=predicted,
        gold=question.gold_label,
        correct=predicted is not None and predicted == question.gold_label,
        candidate_count=candidate_count,
        calls_used=ledger.total_calls,
        tokens_used=ledger.total_completion_tokens,
        action_sequence=sequence,
        error=error,
    )
    return record, candidates


def run_eval(questions: list[Question], method: str, backend: LmBackend,
             index: RetrievalIndex | None, cfg: SearchConfig,
             workers: int | None = None,
             prompts: PromptLibrary | None = None,
             on_candidates: Callable[[Question, list[Trajectory]], None] | None = None,
             ) -> RunReport:
    """Evaluate every question and aggregate accuracy, cost means, and the
    action-sequence histogram of chosen trajectories."""
    if method not in EVAL_METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {EVAL_METHODS}")
    cfg.validate()
    if not questions:
        raise ValidationError("no questions to evaluate")
    if workers is None:
        workers = os.cpu_count() or 1

    def work(question: Question) -> tuple[EvalRecord, list[Trajectory]]:
        return evaluate_question(question, method, backend, index, cfg, prompts)

    if workers == 1:
        outcomes = [work(q) for q in questions]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, questions))

    records = tuple(record for record, _ in outcomes)
    if on_candidates is not None:
        for question, (_, candidates) in zip(questions, outcomes):
            on_candidates(question, candidates)

    histogram = Counter(
        _sequence_key(record.action_sequence)
        for record in records
        if record.action_sequence
    )
    # tree methods pick by factuality when the scorer is on, else by majority
    # vote; the vote is also what approximates the original verifier setup
    if method in ("rstar", "rare"):
        selection_rule = "factuality" if cfg.rafs_enabled else "majority_vote"
    elif method == "sc":
        selection_rule = "majority_vote"
    else:
        selection_rule = "single_completion"
    n = len(records)
    return RunReport(
        config={"method": method, "selection_rule": selection_rule,
                **config_to_record(cfg)},
        records=records,
        accuracy=sum(1 for r in records if r.correct) / n,
        avg_calls=sum(r.calls_used for r in records) / n,
        avg_tokens=sum(r.tokens_used for r in records) / n,
        trajectory_histogram=dict(sorted(histogram.items())),
    )


def trajectory_stats(report: RunReport, top_n: int = 10,
                     ) -> list[tuple[tuple[ActionKind, ...], int]]:
    """Most common action sequences among correctly answered questions,
    ranked by count descending then lexicographically."""
    if not report.records:
        raise ValidationError("empty report")
    counter = Counter(
        record.action_sequence
        for record in report.records
        if record.correct and record.action_sequence
    )
    ranked = sorted(
        counter.items(),
        key=lambda item: (-item[1], tuple(kind.value for kind in item[0])),
    )
    return ranked[:top_n]


def eval_record_to_record(record: EvalRecord) -> dict[str, Any]:
    return {
        "question_id": record.question_id,
        "method": record.method,
        "predicted": record.predicted,
        "gold": record.gold,
        "correct": record.correct,
        "candidate_count": record.candidate_count,
        "calls_used": record.calls_used,
        "tokens_used": record.tokens_used,
        "action_sequence": [kind.value for kind in record.action_sequence],
        "error": record.error,
    }


def report_to_record(report: RunReport) -> dict[str, Any]:
    return {
        "config": dict(report.config),
        "num_questions": len(report.records),
        "accuracy": report.accuracy,
        "avg_calls": report.avg_calls,
        "avg_tokens": report.avg_tokens,
        "trajectory_histogram": dict(report.trajectory_histogram),
        "records": [eval_record_to_record(r) for r in report.records],
    }


def dump_trajectories(path: str, entries: list[tuple[Question, list[Trajectory]]]) -> None:
    """Write every candidate trajectory as one JSON object per line; a scored
    candidate is followed by its statement-level factuality record."""
    from .factuality import factuality_record

    with open(path, "w", encoding="utf-8") as fh:
        for _, candidates in entries:
            for traj in candidates:
                fh.write(json.dumps(trajectory_to_record(traj), sort_keys=True))
                fh.write("\n")
                if traj.factuality is not None:
                    fh.write(json.dumps(factuality_record(traj), sort_keys=True))
                    fh.write("\n")
