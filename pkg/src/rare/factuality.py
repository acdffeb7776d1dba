"""Factuality scoring of candidate trajectories.

Four steps per trajectory: split the reasoning into sentence statements,
generate retrieval queries per statement, retrieve evidence for each query,
and rate every statement Supported or Not Supported against its evidence.
The trajectory's score is the supported proportion.

The scorer calls the same backend instance as the generator unless the caller
hands it a different one.
"""

from __future__ import annotations

import re
from dataclasses import replace

from .actions import merge_hits, parse_queries
from .errors import CorpusError, LmBackendError, ValidationError
from .lm import LmBackend, request_for
from .retrieval import RetrievalIndex, search
from .types import (
    FactualityReport,
    SearchConfig,
    Statement,
    Trajectory,
    make_factuality_report,
)

SUPPORTED = "supported"
NOT_SUPPORTED = "not_supported"

QUERY_PROMPT = (
    "Write up to {n} short search queries that would retrieve evidence to"
    " verify or refute the statement below. One query per line.\n\n"
    "Statement: {statement}\n"
    "Queries:\n"
)

RATING_PROMPT = (
    "Decide whether the statement is supported by the evidence."
    " Reply with exactly one label: Supported or Not Supported.\n\n"
    "Evidence:\n{evidence}\n\n"
    "Statement: {statement}\n\n"
    "Label:"
)

_TERMINATORS = ".?!"
_WORD_RE = re.compile(r"[A-Za-z0-9]+")


def _is_split_point(text: str, i: int) -> bool:
    ch = text[i]
    n = len(text)
    # sentence boundaries are followed by whitespace; this also keeps
    # decimals ("2.5") and dotted acronyms intact
    if i + 1 < n and not text[i + 1].isspace():
        return False
    # single-letter abbreviation such as "E. coli"
    if ch == "." and i >= 1 and text[i - 1].isalpha():
        if i < 2 or not text[i - 2].isalnum():
            return False
    # an option label continues the sentence: "...? A: Ampicillin"
    j = i + 1
    while j < n and text[j].isspace():
        j += 1
    if j + 1 < n and text[j].isalpha() and text[j].isupper() and text[j + 1] == ":":
        return False
    return True


def _word_count(piece: str) -> int:
    return len(_WORD_RE.findall(piece))


def _standalone(piece: str) -> bool:
    return bool(piece) and piece[0].isupper() and piece[-1] in _TERMINATORS


def split_sentences(text: str) -> list[str]:
    """Segment text at sentence terminators, then fold fragments under three
    words into their neighbours unless they stand alone as sentences."""
    text = " ".join(text.split())
    pieces: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in _TERMINATORS and _is_split_point(text, i):
            piece = text[start: i + 1].strip()
            if piece:
                pieces.append(piece)
            start = i + 1
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)

    merged: list[str] = []
    carry = ""
    for piece in pieces:
        if carry:
            piece = f"{carry} {piece}"
            carry = ""
        if _word_count(piece) < 3 and not _standalone(piece):
            if merged:
                merged[-1] = f"{merged[-1]} {piece}"
            else:
                carry = piece
        else:
            merged.append(piece)
    if carry:
        if merged:
            merged[-1] = f"{merged[-1]} {carry}"
        else:
            merged.append(carry)
    return merged


def split_statements(traj: Trajectory) -> list[str]:
    """Sentence statements from the trajectory's step outputs. Retrieved
    document text lives in prompts, never in outputs, so it is excluded."""
    if not traj.steps:
        raise ValidationError("trajectory has no steps to split")
    text = " ".join(step.output for step in traj.steps if step.output.strip())
    return split_sentences(text)


def generate_queries(statement: str, backend: LmBackend, n: int) -> list[str]:
    """Up to ``n`` retrieval queries for a statement; falls back to the
    statement itself when the reply parses to nothing."""
    prompt = QUERY_PROMPT.format(n=n, statement=statement)
    resp = backend.complete(request_for("query_gen", prompt, 1))
    queries = parse_queries(resp.completions[0], n)
    if not queries:
        queries = [statement]
    return queries[:n]


def rate_statement(statement: str, evidence: tuple, backend: LmBackend) -> str:
    """Label a statement against evidence snippets. "not supported" is
    checked before "supported" since the former contains the latter; an
    unparseable reply rates conservatively as not supported."""
    evidence_text = "\n".join(ref.snippet for ref in evidence) or "(no evidence found)"
    prompt = RATING_PROMPT.format(evidence=evidence_text, statement=statement)
    resp = backend.complete(request_for("rating", prompt, 1))
    reply = resp.completions[0].lower()
    if "not supported" in reply:
        return NOT_SUPPORTED
    if "supported" in reply:
        return SUPPORTED
    return NOT_SUPPORTED


def score_trajectory(traj: Trajectory, backend: LmBackend, index: RetrievalIndex,
                     cfg: SearchConfig) -> FactualityReport:
    """Split, query, retrieve, and rate one trajectory. Backend and retrieval
    failures propagate; the caller decides how a failed report ranks."""
    if not cfg.rafs_enabled:
        raise ValidationError("factuality scoring is disabled in this configuration")
    statements: list[Statement] = []
    for i, sentence in enumerate(split_statements(traj)):
        queries = generate_queries(sentence, backend, cfg.queries_per_call)
        hit_lists = [search(index, query, cfg.retrieval_top_k) for query in queries]
        evidence = merge_hits(hit_lists, cfg.retrieval_top_k)
        label = rate_statement(sentence, evidence, backend)
        statements.append(Statement(
            index=i, text=sentence, queries=tuple(queries),
            evidence=evidence, label=label,
        ))
    return make_factuality_report(statements)


def score_candidates(candidates: list[Trajectory], backend: LmBackend,
                     index: RetrievalIndex, cfg: SearchConfig) -> list[Trajectory]:
    """Attach factuality reports to candidates. A trajectory whose report
    fails keeps ``factuality=None`` and therefore ranks with score -1."""
    scored: list[Trajectory] = []
    for traj in candidates:
        try:
            report = score_trajectory(traj, backend, index, cfg)
        except (LmBackendError, CorpusError):
            scored.append(traj)
            continue
        scored.append(replace(traj, factuality=report))
    return scored


def factuality_record(traj: Trajectory) -> dict:
    """Report-stream record for one scored trajectory."""
    if traj.factuality is None:
        raise ValidationError("trajectory carries no factuality report")
    return {
        "question_id": traj.question_ref,
        "trajectory_hash": traj.content_hash(),
        "statements": [
            {
                "text": stmt.text,
                "queries": list(stmt.queries),
                "evidence_ids": [ref.doc_id for ref in stmt.evidence],
                "label": stmt.label,
            }
            for stmt in traj.factuality.statements
        ],
        "score": traj.factuality.score,
    }
