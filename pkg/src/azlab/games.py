"""Board game rules, state representation, and symmetry groups.

Three games are supported: 3x3 tic-tac-toe (``ttt3``), 4x4 tic-tac-toe with
a four-in-a-row win condition (``ttt4``), and 6x7 Connect Four
(``connect4``).

States are immutable: a :class:`State` is a named tuple of two piece
bitboards, the player to move, and a move counter. All operations are pure
functions on states, so states can be shared freely between threads and
processes.

Conventions used throughout the package:

* Players are ``0`` (moves first, rendered ``X``) and ``1`` (rendered ``O``).
* All scalar values attached to a state (game outcomes, network values,
  search Q values) are from the perspective of the player to move at that
  state. ``+1`` means the mover wins under the quantity's semantics.
* Feature encoding is a flat float32 vector of three stacked planes in
  fixed order: player-0 pieces, player-1 pieces, and a turn plane that is
  all zeros when player 0 is to move and all ones otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np


class GameError(Exception):
    """Base class for rule violations and misuse of the game API."""


class IllegalActionError(GameError):
    """An action was applied that is not legal in the given state."""


class TerminalStateError(GameError):
    """An operation that requires a live game was called on a terminal state."""


class UnsupportedSymmetryError(GameError):
    """A symmetry operation was requested that the board does not admit."""


class State(NamedTuple):
    """Immutable game position.

    ``p1`` and ``p2`` are bitboards of player 0's and player 1's pieces
    (bit ``i`` set means cell ``i`` is occupied). ``player`` is the player
    to move. ``move_count`` is the number of moves played so far.
    """

    p1: int
    p2: int
    player: int
    move_count: int

    def pieces(self, player: int) -> int:
        return self.p1 if player == 0 else self.p2


@dataclass(frozen=True)
class SymmetryOp:
    """A board symmetry: a cell permutation plus optional player swap.

    ``cell_perm[i]`` is the destination cell of a piece currently on cell
    ``i``. ``action_perm`` maps action indices the same way (for cell-placement
    games it equals ``cell_perm``; for Connect Four it permutes columns).
    ``swaps_players`` marks the inversion op, which exchanges the two piece
    planes and toggles the player to move while leaving cells in place.
    """

    name: str
    cell_perm: tuple[int, ...]
    action_perm: tuple[int, ...]
    swaps_players: bool = False


def _bits(mask: int) -> Iterator[int]:
    while mask:
        lsb = mask & -mask
        yield lsb.bit_length() - 1
        mask ^= lsb


def _permute_mask(mask: int, perm: Sequence[int]) -> int:
    out = 0
    for b in _bits(mask):
        out |= 1 << perm[b]
    return out


def outcome_for_player(state: State, z_mover: int, player: int) -> int:
    """Re-sign a mover-perspective outcome to a fixed player's perspective."""
    return z_mover if state.player == player else -z_mover


_MISSING = object()


class Game:
    """Shared rules machinery for the square placement games and Connect Four.

    Subclasses provide the board geometry, the legal-move rule, and the
    symmetry group; everything else (win detection, encoding, transforms)
    lives here. A ``Game`` instance is immutable after construction and
    holds precomputed line masks and permutation tables.
    """

    name: str
    rows: int
    cols: int
    win_length: int
    action_count: int

    def __init__(self) -> None:
        self.cells = self.rows * self.cols
        self.input_dim = 3 * self.cells
        self.full_mask = (1 << self.cells) - 1
        self._lines = self._build_lines()
        self._ops = self._build_ops()
        self._ops_by_name = {op.name: op for op in self._ops}
        # Non-identity ops in augmentation order: rotations, reflections,
        # then inversion last.
        self.augment_ops = tuple(op for op in self._ops if op.name != "identity")
        self._tv_cache: dict[State, Optional[int]] = {}

    # -- geometry hooks -------------------------------------------------

    def _build_lines(self) -> list[int]:
        """All win_length-in-a-row cell masks (rows, columns, diagonals)."""
        k = self.win_length
        lines = []
        for r in range(self.rows):
            for c in range(self.cols):
                for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                    er, ec = r + (k - 1) * dr, c + (k - 1) * dc
                    if 0 <= er < self.rows and 0 <= ec < self.cols:
                        mask = 0
                        for i in range(k):
                            mask |= 1 << ((r + i * dr) * self.cols + (c + i * dc))
                        lines.append(mask)
        return lines

    def _build_ops(self) -> tuple[SymmetryOp, ...]:
        raise NotImplementedError

    def _dihedral_op(self, name: str, cell_map) -> SymmetryOp:
        """Build a dihedral op from a (row, col) -> (row, col) map."""
        perm = [0] * self.cells
        for r in range(self.rows):
            for c in range(self.cols):
                nr, nc = cell_map(r, c)
                perm[r * self.cols + c] = nr * self.cols + nc
        return SymmetryOp(name, tuple(perm), self._action_perm_from_cells(perm))

    def _action_perm_from_cells(self, cell_perm: Sequence[int]) -> tuple[int, ...]:
        raise NotImplementedError

    # -- rules ----------------------------------------------------------

    def initial_state(self) -> State:
        return State(0, 0, 0, 0)

    def legal_actions(self, state: State) -> np.ndarray:
        """Boolean mask over the action space; raises on terminal states."""
        if self.terminal_value(state) is not None:
            raise TerminalStateError(
                f"{self.name}: no legal actions in a terminal state (empty mask)"
            )
        return self._legal_mask(state)

    def _legal_mask(self, state: State) -> np.ndarray:
        raise NotImplementedError

    def apply(self, state: State, action: int) -> State:
        """Play ``action`` for the player to move; returns the new state."""
        if not 0 <= action < self.action_count:
            raise IllegalActionError(f"action {action} out of range for {self.name}")
        bit = self._placement_bit(state, action)
        if bit is None or (state.p1 | state.p2) & bit:
            raise IllegalActionError(
                f"action {action} is not legal in state {state!r}"
            )
        if self.terminal_value(state) is not None:
            raise IllegalActionError("cannot apply an action to a terminal state")
        if state.player == 0:
            return State(state.p1 | bit, state.p2, 1, state.move_count + 1)
        return State(state.p1, state.p2 | bit, 0, state.move_count + 1)

    def _placement_bit(self, state: State, action: int) -> Optional[int]:
        raise NotImplementedError

    def has_line(self, mask: int) -> bool:
        for line in self._lines:
            if mask & line == line:
                return True
        return False

    def terminal_value(self, state: State) -> Optional[int]:
        """Mover-perspective outcome if ``state`` is terminal, else ``None``.

        ``-1``: the opponent (who moved last) completed a line. ``+1``: the
        mover already owns a line (only possible in constructed positions).
        ``0``: the board is full with no line.
        """
        cached = self._tv_cache.get(state, _MISSING)
        if cached is not _MISSING:
            return cached
        opp = state.p2 if state.player == 0 else state.p1
        own = state.p1 if state.player == 0 else state.p2
        if self.has_line(opp):
            value: Optional[int] = -1
        elif self.has_line(own):
            value = 1
        elif (state.p1 | state.p2) == self.full_mask:
            value = 0
        else:
            value = None
        if len(self._tv_cache) > 2_000_000:
            self._tv_cache.clear()
        self._tv_cache[state] = value
        return value

    def is_terminal(self, state: State) -> bool:
        return self.terminal_value(state) is not None

    # -- representation -------------------------------------------------

    def encode(self, state: State) -> np.ndarray:
        """Flat float32 feature vector of the three planes."""
        out = np.zeros(self.input_dim, dtype=np.float32)
        for b in _bits(state.p1):
            out[b] = 1.0
        for b in _bits(state.p2):
            out[self.cells + b] = 1.0
        if state.player == 1:
            out[2 * self.cells :] = 1.0
        return out

    def encode_many(self, states: Sequence[State]) -> np.ndarray:
        out = np.zeros((len(states), self.input_dim), dtype=np.float32)
        for i, s in enumerate(states):
            for b in _bits(s.p1):
                out[i, b] = 1.0
            for b in _bits(s.p2):
                out[i, self.cells + b] = 1.0
            if s.player == 1:
                out[i, 2 * self.cells :] = 1.0
        return out

    def key(self, state: State) -> int:
        """Stable collision-free hash of piece planes plus player to move."""
        return state.p1 | (state.p2 << self.cells) | (state.player << (2 * self.cells))

    def state_from_key(self, key: int) -> State:
        p1 = key & self.full_mask
        p2 = (key >> self.cells) & self.full_mask
        player = key >> (2 * self.cells)
        return State(p1, p2, player, (p1 | p2).bit_count())

    # -- symmetry -------------------------------------------------------

    def symmetry_ops(self) -> tuple[SymmetryOp, ...]:
        """All ops: identity, the board's dihedral group, and inversion."""
        return self._ops

    def op(self, name: str) -> SymmetryOp:
        try:
            return self._ops_by_name[name]
        except KeyError:
            raise UnsupportedSymmetryError(
                f"{self.name} does not support symmetry op {name!r}"
            ) from None

    def transform(self, state: State, op: SymmetryOp) -> State:
        if op.name not in self._ops_by_name:
            raise UnsupportedSymmetryError(
                f"{self.name} does not support symmetry op {op.name!r}"
            )
        a = _permute_mask(state.p1, op.cell_perm)
        b = _permute_mask(state.p2, op.cell_perm)
        if op.swaps_players:
            return State(b, a, 1 - state.player, state.move_count)
        return State(a, b, state.player, state.move_count)

    def transform_action(self, action: int, op: SymmetryOp) -> int:
        if op.name not in self._ops_by_name:
            raise UnsupportedSymmetryError(
                f"{self.name} does not support symmetry op {op.name!r}"
            )
        return op.action_perm[action]

    def transform_policy(self, policy: np.ndarray, op: SymmetryOp) -> np.ndarray:
        """Permute an action distribution to track a transformed board."""
        out = np.empty_like(policy)
        out[list(op.action_perm)] = policy
        return out

    # -- debugging ------------------------------------------------------

    def render(self, state: State) -> str:
        raise NotImplementedError

    def _cell_char(self, state: State, r: int, c: int) -> str:
        bit = 1 << (r * self.cols + c)
        if state.p1 & bit:
            return "X"
        if state.p2 & bit:
            return "O"
        return "."


class TicTacToe(Game):
    """n-by-n tic-tac-toe; actions are row-major cell indices."""

    def __init__(self, size: int, win_length: int, name: str) -> None:
        self.name = name
        self.rows = size
        self.cols = size
        self.win_length = win_length
        self.action_count = size * size
        super().__init__()

    def _legal_mask(self, state: State) -> np.ndarray:
        occ = state.p1 | state.p2
        mask = np.zeros(self.action_count, dtype=bool)
        for i in range(self.action_count):
            mask[i] = not (occ >> i) & 1
        return mask

    def _placement_bit(self, state: State, action: int) -> Optional[int]:
        return 1 << action

    def _action_perm_from_cells(self, cell_perm: Sequence[int]) -> tuple[int, ...]:
        return tuple(cell_perm)

    def _build_ops(self) -> tuple[SymmetryOp, ...]:
        n = self.rows
        ident = tuple(range(self.cells))
        ops = [
            SymmetryOp("identity", ident, ident),
            self._dihedral_op("rot90", lambda r, c: (c, n - 1 - r)),
            self._dihedral_op("rot180", lambda r, c: (n - 1 - r, n - 1 - c)),
            self._dihedral_op("rot270", lambda r, c: (n - 1 - c, r)),
            self._dihedral_op("reflect_h", lambda r, c: (r, n - 1 - c)),
            self._dihedral_op("reflect_v", lambda r, c: (n - 1 - r, c)),
            self._dihedral_op("reflect_main", lambda r, c: (c, r)),
            self._dihedral_op("reflect_anti", lambda r, c: (n - 1 - c, n - 1 - r)),
            SymmetryOp("invert", ident, ident, swaps_players=True),
        ]
        return tuple(ops)

    def render(self, state: State) -> str:
        rows = []
        for r in range(self.rows):
            rows.append(" ".join(self._cell_char(state, r, c) for c in range(self.cols)))
        rows.append(f"to move: {'X' if state.player == 0 else 'O'}")
        return "\n".join(rows)


class ConnectFour(Game):
    """6x7 Connect Four; actions are column indices, pieces fall to row 0.

    Bit layout is bottom-up: cell ``r * 7 + c`` is row ``r`` counted from
    the bottom of the board, so gravity means "lowest empty r in column c".
    """

    name = "connect4"
    rows = 6
    cols = 7
    win_length = 4
    action_count = 7

    def __init__(self) -> None:
        super().__init__()
        self._col_bits = [
            [1 << (r * self.cols + c) for r in range(self.rows)]
            for c in range(self.cols)
        ]
        self._top_bits = [1 << ((self.rows - 1) * self.cols + c) for c in range(self.cols)]

    def _legal_mask(self, state: State) -> np.ndarray:
        occ = state.p1 | state.p2
        mask = np.zeros(self.action_count, dtype=bool)
        for c in range(self.action_count):
            mask[c] = not occ & self._top_bits[c]
        return mask

    def _placement_bit(self, state: State, action: int) -> Optional[int]:
        occ = state.p1 | state.p2
        for bit in self._col_bits[action]:
            if not occ & bit:
                return bit
        return None

    def _action_perm_from_cells(self, cell_perm: Sequence[int]) -> tuple[int, ...]:
        # Column c maps to whatever column its bottom cell lands in.
        return tuple(cell_perm[c] % self.cols for c in range(self.cols))

    def _build_ops(self) -> tuple[SymmetryOp, ...]:
        # A 6x7 board admits no quarter-turn; the dihedral group collapses
        # to {identity, column mirror}. Inversion is always available.
        ident = tuple(range(self.cells))
        ops = [
            SymmetryOp("identity", ident, ident),
            self._dihedral_op("reflect_h", lambda r, c: (r, self.cols - 1 - c)),
            SymmetryOp("invert", ident, ident, swaps_players=True),
        ]
        return tuple(ops)

    def render(self, state: State) -> str:
        rows = []
        for r in range(self.rows - 1, -1, -1):
            rows.append(" ".join(self._cell_char(state, r, c) for c in range(self.cols)))
        rows.append(" ".join(str(c) for c in range(self.cols)))
        rows.append(f"to move: {'X' if state.player == 0 else 'O'}")
        return "\n".join(rows)


_REGISTRY = {
    "ttt3": lambda: TicTacToe(3, 3, "ttt3"),
    "ttt4": lambda: TicTacToe(4, 4, "ttt4"),
    "connect4": ConnectFour,
}

GAME_NAMES = tuple(_REGISTRY)


def make_game(name: str) -> Game:
    """Construct a game by spec name: ``ttt3``, ``ttt4``, or ``connect4``."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown game {name!r}; expected one of {GAME_NAMES}") from None
    return factory()
