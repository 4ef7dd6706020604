"""Exact minimax ground truth: full-game solver, endgame solver, enumerator.

The solver is a memoized depth-first negamax over the raw reachable state
space. No symmetry reduction is applied to the transposition table, so one
table entry exists per reachable state and visitation accounting stays
one-to-one with self-play.

All solved values are from the perspective of the player to move:
``+1`` the mover wins with best play, ``0`` draw, ``-1`` the mover loses.
"""

from __future__ import annotations

import struct
from collections import deque
from typing import NamedTuple, Optional

import numpy as np

from .games import Game, State, TerminalStateError


class CoverageError(Exception):
    """A state was requested that the oracle table does not cover."""


class BudgetExceededError(Exception):
    """A solve or enumeration exceeded its node/memory budget."""


class TableFormatError(Exception):
    """A state-table file is corrupt or belongs to a different game."""


class SolvedEntry(NamedTuple):
    """Exact evaluation of one state.

    ``value`` is the mover-perspective minimax outcome. ``optimal_actions``
    is the full argmax set over legal actions (empty for terminal states).
    ``depth`` is plies to the outcome under the fastest-win / slowest-loss
    convention; it is informational and plays no role in optimality.
    """

    value: int
    optimal_actions: tuple[int, ...]
    depth: int


class StateTable:
    """Solved entries plus a training-visitation counter, keyed by state key."""

    MAGIC = b"AZTB"
    VERSION = 1

    def __init__(self, game_name: str):
        self.game_name = game_name
        self.entries: dict[int, SolvedEntry] = {}
        self.visits: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def value_of(self, key: int) -> int:
        try:
            return self.entries[key].value
        except KeyError:
            raise CoverageError(f"state key {key} not present in oracle table") from None

    def record_visit(self, key: int, count: int = 1) -> None:
        self.visits[key] = self.visits.get(key, 0) + count

    def save(self, path) -> None:
        """Write the table as a fixed-width binary record file.

        Layout: magic, version, game name, entry/visit counts, then one
        28-byte record per entry (16-byte LE key; i8 value; u8 pad; u64
        optimal-action bitmask; u16 depth), then 24-byte visit records
        (16-byte key, u64 count). Records are sorted by key so identical
        tables serialize to identical bytes.
        """
        name = self.game_name.encode()
        header = self.MAGIC + struct.pack(
            "<HB", self.VERSION, len(name)
        ) + name + struct.pack("<QQ", len(self.entries), len(self.visits))
        chunks = [header]
        for key in sorted(self.entries):
            e = self.entries[key]
            opt_mask = 0
            for a in e.optimal_actions:
                opt_mask |= 1 << a
            chunks.append(
                key.to_bytes(16, "little")
                + struct.pack("<bBQH", e.value, 0, opt_mask, e.depth)
            )
        for key in sorted(self.visits):
            chunks.append(key.to_bytes(16, "little") + struct.pack("<Q", self.visits[key]))
        with open(path, "wb") as f:
            f.write(b"".join(chunks))

    @classmethod
    def load(cls, path, expected_game: Optional[str] = None) -> "StateTable":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < 7 or data[:4] != cls.MAGIC:
            raise TableFormatError(f"{path}: not a state-table file (bad magic)")
        version, name_len = struct.unpack_from("<HB", data, 4)
        if version != cls.VERSION:
            raise TableFormatError(f"{path}: unsupported table version {version}")
        pos = 7
        name = data[pos : pos + name_len].decode()
        pos += name_len
        if expected_game is not None and name != expected_game:
            raise TableFormatError(
                f"{path}: table is for {name!r}, expected {expected_game!r}"
            )
        n_entries, n_visits = struct.unpack_from("<QQ", data, pos)
        pos += 16
        table = cls(name)
        record = struct.Struct("<bBQH")
        expected = pos + n_entries * (16 + record.size) + n_visits * 24
        if len(data) != expected:
            raise TableFormatError(f"{path}: truncated or padded table file")
        for _ in range(n_entries):
            key = int.from_bytes(data[pos : pos + 16], "little")
            pos += 16
            value, _, opt_mask, depth = record.unpack_from(data, pos)
            pos += record.size
            actions = []
            m = opt_mask
            while m:
                lsb = m & -m
                actions.append(lsb.bit_length() - 1)
                m ^= lsb
            table.entries[key] = SolvedEntry(value, tuple(actions), depth)
        for _ in range(n_visits):
            key = int.from_bytes(data[pos : pos + 16], "little")
            pos += 16
            (count,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            table.visits[key] = count
        return table


def _negamax(game: Game, state: State, entries: dict, budget: Optional[int]) -> SolvedEntry:
    key = game.key(state)
    hit = entries.get(key)
    if hit is not None:
        return hit
    if budget is not None and len(entries) >= budget:
        raise BudgetExceededError(
            f"solve budget of {budget} table entries exceeded for {game.name}"
        )
    tv = game.terminal_value(state)
    if tv is not None:
        entry = SolvedEntry(tv, (), 0)
        entries[key] = entry
        return entry
    mask = game.legal_actions(state)
    best = -2
    values = []
    depths = []
    actions = []
    for a in range(game.action_count):
        if not mask[a]:
            continue
        child = _negamax(game, game.apply(state, a), entries, budget)
        actions.append(a)
        values.append(-child.value)
        depths.append(child.depth + 1)
        if -child.value > best:
            best = -child.value
    optimal = tuple(a for a, v in zip(actions, values) if v == best)
    opt_depths = [d for v, d in zip(values, depths) if v == best]
    # Fastest win; slowest loss; for draws, the longest optimal line.
    depth = min(opt_depths) if best > 0 else max(opt_depths)
    entry = SolvedEntry(best, optimal, depth)
    entries[key] = entry
    return entry


def solve(game: Game, root: Optional[State] = None, max_entries: Optional[int] = None) -> StateTable:
    """Exactly solve every state reachable from ``root`` (default: empty board).

    Raises :class:`BudgetExceededError` once the table would exceed
    ``max_entries``; a full Connect Four solve is expected to trip this.
    """
    if root is None:
        root = game.initial_state()
    table = StateTable(game.name)
    _negamax(game, root, table.entries, max_entries)
    return table


def endgame_solve(
    game: Game,
    state: State,
    cache: Optional[dict] = None,
    node_budget: int = 5_000_000,
) -> SolvedEntry:
    """Solve a single (late-game) position exactly.

    ``cache`` may be shared across calls to amortize work over many nearby
    positions; it maps state keys to :class:`SolvedEntry`.
    """
    if cache is None:
        cache = {}
    budget = len(cache) + node_budget
    return _negamax(game, state, cache, budget)


def enumerate_states(game: Game, max_states: Optional[int] = None) -> list[State]:
    """All states reachable from the empty board, in deterministic BFS order.

    Terminal states are included (they are reached during play). Duplicate
    positions arising from different move orders appear exactly once.
    """
    initial = game.initial_state()
    seen = {game.key(initial)}
    queue = deque([initial])
    out = []
    while queue:
        state = queue.popleft()
        out.append(state)
        if max_states is not None and len(out) > max_states:
            raise BudgetExceededError(
                f"enumeration budget of {max_states} states exceeded for {game.name}"
            )
        if game.terminal_value(state) is not None:
            continue
        mask = game.legal_actions(state)
        for a in range(game.action_count):
            if not mask[a]:
                continue
            child = game.apply(state, a)
            k = game.key(child)
            if k not in seen:
                seen.add(k)
                queue.append(child)
    return out


def oracle_opponent(game: Game, state: State, table: StateTable, rng: np.random.Generator) -> int:
    """Uniformly random choice among the exactly-optimal actions."""
    if table.game_name != game.name:
        raise CoverageError(
            f"oracle table is for {table.game_name!r}, not {game.name!r}"
        )
    if game.terminal_value(state) is not None:
        raise TerminalStateError("oracle opponent asked to move in a terminal state")
    key = game.key(state)
    entry = table.entries.get(key)
    if entry is None:
        raise CoverageError(f"oracle table for {game.name} does not cover state {state!r}")
    opts = entry.optimal_actions
    if len(opts) == 1:
        return opts[0]
    return opts[int(rng.integers(len(opts)))]


_EXACT, _LOWER, _UPPER = 0, 1, 2


def alphabeta_value(
    game: Game,
    state: State,
    tt: Optional[dict] = None,
    node_budget: Optional[int] = None,
) -> int:
    """Root value only, via alpha-beta negamax with a bounded transposition table.

    Much faster than :func:`solve` when only the game value is needed
    (e.g. resolving the 4x4 root), but does not produce optimal-action sets.
    """
    if tt is None:
        tt = {}
    nodes = [0]
    order = _center_order(game)

    def search(s: State, alpha: int, beta: int) -> int:
        tv = game.terminal_value(s)
        if tv is not None:
            return tv
        key = game.key(s)
        hit = tt.get(key)
        if hit is not None:
            flag, val = hit
            if flag == _EXACT:
                return val
            if flag == _LOWER and val >= beta:
                return val
            if flag == _UPPER and val <= alpha:
                return val
        nodes[0] += 1
        if node_budget is not None and nodes[0] > node_budget:
            raise BudgetExceededError(f"alpha-beta node budget {node_budget} exceeded")
        mask = game.legal_actions(s)
        alpha0 = alpha
        best = -2
        for a in order:
            if not mask[a]:
                continue
            v = -search(game.apply(s, a), -beta, -alpha)
            if v > best:
                best = v
                if v > alpha:
                    alpha = v
            if alpha >= beta:
                break
        if best <= alpha0:
            tt[key] = (_UPPER, best)
        elif best >= beta:
            tt[key] = (_LOWER, best)
        else:
            tt[key] = (_EXACT, best)
        return best

    return search(state, -1, 1)


def _center_order(game: Game) -> list[int]:
    """Actions sorted center-first; centrality is a strong move-ordering
    heuristic in all three games."""
    if game.action_count == game.cols:  # column games
        mid = (game.cols - 1) / 2
        return sorted(range(game.action_count), key=lambda c: abs(c - mid))
    mid_r, mid_c = (game.rows - 1) / 2, (game.cols - 1) / 2
    return sorted(
        range(game.action_count),
        key=lambda i: abs(i // game.cols - mid_r) + abs(i % game.cols - mid_c),
    )
