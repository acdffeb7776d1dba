"""Monte Carlo tree search over the reasoning action space.

Each rollout runs selection (greedy UCT with an unvisited-first rule),
expansion (one sampled child per legal action), simulation (uniform random
actions to a terminal state or the depth cap), terminal-reward scoring by
self-consistency voting, and additive backpropagation along the path.

Candidates are every distinct terminal trajectory discovered, keyed by a hash
of their step outputs; each carries its consistency reward when returned.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .actions import (
    ActionContext,
    ActionOutcome,
    PromptLibrary,
    default_prompts,
    execute_action,
    extract_answer,
    render_cot_steps,
    valid_actions,
)
from .errors import NoCandidatesError, NoViableChildError, ValidationError
from .lm import LmBackend, request_for
from .retrieval import RetrievalIndex
from .types import ActionKind, ActionStep, Question, SearchConfig, Trajectory, validate_question


def uct_score(child_q: float, child_visits: int, parent_visits: int, c: float) -> float:
    """Mean reward plus the exploration bonus ``c * sqrt(2 ln N / N_j)``.

    An unvisited child scores positive infinity so it is always explored
    before any visited sibling.
    """
    if child_visits == 0:
        return math.inf
    if parent_visits < 1:
        raise ValidationError("parent_visits must be >= 1")
    if c <= 0:
        raise ValidationError("exploration constant must be > 0")
    mean = child_q / child_visits
    return mean + c * math.sqrt(2.0 * math.log(parent_visits) / child_visits)


@dataclass(eq=False)
class TreeNode:
    node_id: int
    parent: "TreeNode | None"
    incoming: ActionOutcome | None
    ctx: ActionContext
    q_value: float = 0.0
    visits: int = 0
    children: list["TreeNode"] = field(default_factory=list)
    expanded: bool = False
    terminal_failed: bool = False

    def is_terminal(self) -> bool:
        if self.terminal_failed:
            return True
        return self.incoming is not None and self.incoming.is_terminal

    def path_from_root(self) -> list["TreeNode"]:
        path: list[TreeNode] = []
        node: TreeNode | None = self
        while node is not None:
            path.append(node)
            node = node.parent
        path.reverse()
        return path


class SearchTree:
    """One question's search tree plus its private random stream."""

    def __init__(self, question: Question, cfg: SearchConfig):
        self.question = question
        self.cfg = cfg
        self.rng = random.Random(cfg.rng_seed)
        self.nodes: list[TreeNode] = []
        self.root = self.add_node(parent=None, incoming=None, ctx=ActionContext(question))

    def add_node(self, parent: TreeNode | None, incoming: ActionOutcome | None,
                 ctx: ActionContext) -> TreeNode:
        node = TreeNode(node_id=len(self.nodes), parent=parent, incoming=incoming, ctx=ctx)
        self.nodes.append(node)
        if parent is not None:
            parent.children.append(node)
        return node

    def trajectory_of(self, node: TreeNode) -> Trajectory:
        final_answer = None
        if node.incoming is not None and node.incoming.is_terminal:
            final_answer = node.incoming.extracted_answer
        return Trajectory(
            question_ref=self.question.id,
            steps=node.ctx.steps,
            final_answer=final_answer,
        )


def _best_child(node: TreeNode, c: float) -> TreeNode:
    unvisited = [child for child in node.children if child.visits == 0]
    if unvisited:
        return min(unvisited, key=lambda child: child.node_id)
    return max(
        node.children,
        key=lambda child: (uct_score(child.q_value, child.visits, node.visits, c),
                           -child.node_id),
    )


def select(tree: SearchTree) -> TreeNode:
    """First node on the greedy-UCT path that is unexpanded and non-terminal,
    or the terminal leaf the path ends at."""
    node = tree.root
    while True:
        if node.is_terminal() or not node.expanded:
            return node
        if not node.children:
            return node
        node = _best_child(node, tree.cfg.exploration_c)


def expand(tree: SearchTree, node: TreeNode, backend: LmBackend,
           index: RetrievalIndex | None,
           prompts: PromptLibrary | None = None) -> list[TreeNode]:
    """Add one sampled child per legal action. A node at the depth cap, or
    one where every action fails, is marked terminal-failed (reward 0)."""
    if node.is_terminal():
        raise ValidationError("cannot expand a terminal node")
    if node.expanded:
        raise ValidationError("node already expanded")
    node.expanded = True
    if len(node.ctx.steps) >= tree.cfg.max_depth:
        node.terminal_failed = True
        return []
    kinds = sorted(valid_actions(node.ctx, tree.cfg), key=lambda k: k.value)
    for kind in kinds:
        try:
            outcomes = execute_action(kind, node.ctx, backend, index, tree.cfg, prompts)
        except NoViableChildError:
            continue
        for outcome in outcomes:
            tree.add_node(parent=node, incoming=outcome, ctx=node.ctx.extend(outcome))
    if not node.children:
        node.terminal_failed = True
    return list(node.children)


def simulate(tree: SearchTree, node: TreeNode, backend: LmBackend,
             index: RetrievalIndex | None,
             prompts: PromptLibrary | None = None) -> Trajectory:
    """Uniform-random rollout from ``node`` to a terminal state or the depth
    cap. A dead end (no legal action, or no viable outcome) ends the rollout
    with no final answer, which scores reward 0."""
    if node.is_terminal():
        return tree.trajectory_of(node)
    ctx = node.ctx
    final_answer: str | None = None
    while not ctx.terminal and len(ctx.steps) < tree.cfg.max_depth:
        kinds = sorted(valid_actions(ctx, tree.cfg), key=lambda k: k.value)
        if not kinds:
            break
        kind = tree.rng.choice(kinds)
        try:
            outcomes = execute_action(kind, ctx, backend, index, tree.cfg,
                                      prompts, n_outcomes=1)
        except NoViableChildError:
            break
        outcome = outcomes[0]
        ctx = ctx.extend(outcome)
        if outcome.is_terminal:
            final_answer = outcome.extracted_answer
    return Trajectory(
        question_ref=tree.question.id,
        steps=ctx.steps,
        final_answer=final_answer,
    )


def context_from_steps(question: Question, steps: tuple[ActionStep, ...]) -> ActionContext:
    """Rebuild the context preceding a step list (all steps non-terminal)."""
    ctx = ActionContext(question)
    for step in steps:
        ctx = ctx.extend(ActionOutcome(step, False, None))
    return ctx


def terminal_reward(traj: Trajectory, question: Question, backend: LmBackend,
                    cfg: SearchConfig, prompts: PromptLibrary | None = None) -> float:
    """Self-consistency reward: sample ``n_consistency_samples`` more final
    answers for the trajectory's context and return the fraction of the
    n+1 votes (counting the trajectory's own) that agree with it."""
    if traj.final_answer is None:
        raise ValidationError("terminal reward requires a final answer")
    prompts = prompts or default_prompts()
    ctx = context_from_steps(question, traj.steps[:-1])
    prompt = prompts.render(ActionKind.A2, question=ctx.question_text(),
                            steps=render_cot_steps(ctx.steps))
    resp = backend.complete(
        request_for("consistency", prompt, cfg.n_consistency_samples,
                    stop_sequences=("### Instruction",))
    )
    votes = 1
    for completion in resp.completions:
        if extract_answer(completion, question) == traj.final_answer:
            votes += 1
    return votes / (cfg.n_consistency_samples + 1)


def backpropagate(tree: SearchTree, leaf: TreeNode, reward: float) -> None:
    """Add ``reward`` to the Q value and bump the visit count of every node
    on the root-to-leaf path."""
    for node in leaf.path_from_root():
        node.q_value += reward
        node.visits += 1


def run_search(question: Question, backend: LmBackend, index: RetrievalIndex | None,
               cfg: SearchConfig,
               prompts: PromptLibrary | None = None) -> list[Trajectory]:
    """Run ``cfg.rollouts`` MCTS iterations and return every distinct terminal
    trajectory discovered, each with its consistency reward attached."""
    _, candidates = run_search_tree(question, backend, index, cfg, prompts)
    return candidates


def run_search_tree(question: Question, backend: LmBackend,
                    index: RetrievalIndex | None, cfg: SearchConfig,
                    prompts: PromptLibrary | None = None,
                    ) -> tuple[SearchTree, list[Trajectory]]:
    """Like ``run_search`` but also hands back the finished tree."""
    cfg.validate()
    validate_question(question)
    prompts = prompts or default_prompts()
    tree = SearchTree(question, cfg)

    candidates: dict[str, Trajectory] = {}
    rewards: dict[str, float] = {}

    def register(traj: Trajectory) -> str:
        key = traj.content_hash()
        if key not in candidates:
            candidates[key] = traj
        return key

    def reward_for(traj: Trajectory) -> float:
        key = traj.content_hash()
        if key not in rewards:
            rewards[key] = terminal_reward(traj, question, backend, cfg, prompts)
        return rewards[key]

    for _ in range(cfg.rollouts):
        node = select(tree)

        if node.is_terminal():
            traj = tree.trajectory_of(node)
            if traj.final_answer is not None:
                register(traj)
                reward = reward_for(traj)
            else:
                reward = 0.0
            backpropagate(tree, node, reward)
            continue

        children = expand(tree, node, backend, index, prompts)
        for child in children:
            if child.is_terminal():
                register(tree.trajectory_of(child))
        if not children:
            backpropagate(tree, node, 0.0)
            continue

        start = tree.rng.choice(children)
        traj = simulate(tree, start, backend, index, prompts)
        if traj.final_answer is not None:
            register(traj)
            reward = reward_for(traj)
        else:
            reward = 0.0
        backpropagate(tree, start, reward)

    if not candidates:
        raise NoCandidatesError(f"no terminal trajectory for question {question.id!r}")
    scored = [replace(traj, terminal_reward=reward_for(traj)) for traj in candidates.values()]
    return tree, scored
