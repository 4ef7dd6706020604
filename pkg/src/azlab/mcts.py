"""PUCT tree search with network-evaluated leaves.

Each search builds a fresh tree (no reuse between moves). Simulations
descend by maximizing ``Q + c * P * sqrt(sum_b N) / (1 + N)``, expand one
leaf, initialize its edges to ``N = W = Q = 0`` with the network priors,
and back the leaf value up the path with a sign flip per ply (all values
are mover-perspective).

Visit accounting: the root is expanded before the first simulation and
each simulation increments the edge counts along its path, so the root's
edge visits sum to exactly ``num_simulations`` while an interior node's
edge visits sum to (visits into that node) - 1, the expansion visit having
stopped there. Unvisited edges use Q = 0 (first-play urgency).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .games import Game, State, TerminalStateError


@dataclass(frozen=True)
class RootNoise:
    """Dirichlet exploration noise mixed into root priors (off by default)."""

    alpha: float
    fraction: float = 0.25


@dataclass(frozen=True)
class SearchConfig:
    num_simulations: int = 25
    c_puct: float = 2.0
    temperature: float = 1.0
    temperature_drop_ply: int = 5
    root_noise: Optional[RootNoise] = None

    def __post_init__(self):
        if self.num_simulations < 1:
            raise ValueError("num_simulations must be >= 1")


def default_root_noise(action_count: int) -> RootNoise:
    return RootNoise(alpha=10.0 / action_count, fraction=0.25)


class SearchNode:
    """One state in the search tree with per-edge {N, W, Q, P} statistics."""

    __slots__ = ("state", "legal", "P", "N", "W", "children", "terminal", "illegal", "total")

    def __init__(self, state: State, terminal: Optional[int]):
        self.state = state
        self.terminal = terminal  # mover-perspective exact value, or None
        self.legal: Optional[np.ndarray] = None
        self.P: Optional[np.ndarray] = None
        self.N: Optional[np.ndarray] = None
        self.W: Optional[np.ndarray] = None
        self.children: Optional[list] = None
        self.illegal: Optional[np.ndarray] = None
        self.total = 0

    @property
    def expanded(self) -> bool:
        return self.P is not None

    def expand(self, legal: np.ndarray, priors: np.ndarray) -> None:
        n = len(priors)
        self.legal = legal
        self.P = priors
        self.N = np.zeros(n, dtype=np.int64)
        self.W = np.zeros(n, dtype=np.float64)
        self.children = [None] * n
        self.illegal = np.where(legal, 0.0, -np.inf)

    def q_values(self) -> np.ndarray:
        return self.W / np.maximum(self.N, 1)

    def select(self, c_puct: float) -> int:
        u = (c_puct * np.sqrt(self.total)) * self.P / (1.0 + self.N)
        return int(np.argmax(self.q_values() + u + self.illegal))


def run_search(
    game: Game,
    root_state: State,
    evaluator,
    cfg: SearchConfig,
    rng: Optional[np.random.Generator] = None,
) -> SearchNode:
    """Run ``cfg.num_simulations`` simulations from ``root_state``.

    ``evaluator`` is anything with ``evaluate(state) -> (priors, value)``
    where priors are masked probabilities over the action space and value
    is mover-perspective. Terminal tree nodes never reach the evaluator;
    their exact outcome is backed up instead.
    """
    if game.terminal_value(root_state) is not None:
        raise TerminalStateError("cannot search from a terminal state")
    root = SearchNode(root_state, None)
    priors, _ = evaluator.evaluate(root_state)
    legal = game.legal_actions(root_state)
    if cfg.root_noise is not None:
        if rng is None:
            raise ValueError("root noise requires an rng")
        noise = np.zeros_like(priors)
        idx = np.flatnonzero(legal)
        noise[idx] = rng.dirichlet(np.full(len(idx), cfg.root_noise.alpha))
        priors = (1.0 - cfg.root_noise.fraction) * priors + cfg.root_noise.fraction * noise
    root.expand(legal, np.asarray(priors, dtype=np.float64))

    for _ in range(cfg.num_simulations):
        node = root
        path = []
        # SELECT down to an unexpanded or terminal node.
        while node.expanded and node.terminal is None:
            action = node.select(cfg.c_puct)
            path.append((node, action))
            child = node.children[action]
            if child is None:
                child_state = game.apply(node.state, action)
                child = SearchNode(child_state, game.terminal_value(child_state))
                node.children[action] = child
            node = child

        # EVALUATE / EXPAND.
        if node.terminal is not None:
            value = float(node.terminal)
        else:
            priors, value = evaluator.evaluate(node.state)
            node.expand(game.legal_actions(node.state), np.asarray(priors, dtype=np.float64))

        # BACKUP with per-ply negation into each parent's perspective.
        for parent, action in reversed(path):
            value = -value
            parent.N[action] += 1
            parent.W[action] += value
            parent.total += 1
    return root


def search_policy(node: SearchNode, temperature: Optional[float]) -> np.ndarray:
    """Visit-count policy ``N^(1/tau) / sum N^(1/tau)``.

    ``temperature`` of ``None`` (or 0) is greedy mode: a one-hot on the
    most-visited action, ties broken by the lowest action index.
    """
    if not node.expanded or node.total == 0:
        raise ValueError("search_policy requires a searched node with visits")
    counts = node.N.astype(np.float64)
    out = np.zeros_like(counts)
    if temperature is None or temperature == 0.0:
        out[int(np.argmax(counts))] = 1.0
        return out
    if temperature == 1.0:
        return counts / counts.sum()
    # Exponentiate in log space from the max for numerical safety.
    pos = counts > 0
    scaled = np.zeros_like(counts)
    scaled[pos] = np.exp((np.log(counts[pos]) - np.log(counts[pos].max())) / temperature)
    return scaled / scaled.sum()


def root_value(node: SearchNode) -> float:
    """Visit-weighted mean of child Q values, from the root's perspective."""
    if node.total == 0:
        raise ValueError("root_value requires at least one simulation")
    return float((node.N * node.q_values()).sum() / node.total)


def root_edges(node: SearchNode) -> list[dict]:
    """Root edge statistics as JSON-friendly records (debug dump)."""
    q = node.q_values()
    return [
        {
            "action": int(a),
            "N": int(node.N[a]),
            "W": float(node.W[a]),
            "Q": float(q[a]),
            "P": float(node.P[a]),
        }
        for a in np.flatnonzero(node.legal)
    ]


class OracleEvaluator:
    """Uniform priors plus exact table values; isolates search from learning.

    Doubles as the "perfect value network" stub for the analysis pipeline,
    so it exposes the same value interface as a real network evaluator.
    """

    def __init__(self, game: Game, table):
        self.game = game
        self.table = table

    def evaluate(self, state: State):
        legal = self.game.legal_actions(state)
        priors = legal / legal.sum()
        return priors, float(self.table.value_of(self.game.key(state)))

    def value_of(self, state: State) -> float:
        terminal = self.game.terminal_value(state)
        if terminal is not None:
            return float(terminal)
        return float(self.table.value_of(self.game.key(state)))

    def value_many(self, states) -> np.ndarray:
        return np.array([self.value_of(s) for s in states])
