"""Game rules and the exact oracle.

Walks through the three supported games, plays a few moves, renders
boards, then solves 3x3 tic-tac-toe exactly and inspects the solution:
the root is a draw, every opening move is optimal, and the solver's
minimax values are self-consistent.

Run: python demos/01_rules_and_oracle.py
"""

import numpy as np

from azlab import make_game, solve
from azlab.oracle import enumerate_states, oracle_opponent

# --- rules ---------------------------------------------------------------

ttt = make_game("ttt3")
state = ttt.initial_state()
for action in (4, 0, 8, 2, 1):  # X center, O corner, ...
    state = ttt.apply(state, action)
print(ttt.render(state))
print()

c4 = make_game("connect4")
pos = c4.initial_state()
for col in (3, 3, 4, 4, 5):
    pos = c4.apply(pos, col)
print(c4.render(pos))
print()

# --- exact solve ---------------------------------------------------------

table = solve(ttt)
states = enumerate_states(ttt)
print(f"reachable ttt3 states: {len(states)} (terminal: "
      f"{sum(1 for s in states if ttt.terminal_value(s) is not None)})")

root = table.entries[ttt.key(ttt.initial_state())]
print(f"root value under optimal play: {root.value} (0 = draw)")
print(f"optimal opening moves: {root.optimal_actions}")

# Minimax self-consistency at a random interior state.
rng = np.random.default_rng(0)
probe = next(s for s in states if s.move_count == 3)
entry = table.entries[ttt.key(probe)]
child_values = {
    int(a): -table.entries[ttt.key(ttt.apply(probe, int(a)))].value
    for a in np.flatnonzero(ttt.legal_actions(probe))
}
print(f"\nprobe state value {entry.value}, children (negated): {child_values}")
assert entry.value == max(child_values.values())

# The oracle opponent never loses: self-play between two oracles draws.
outcomes = []
for _ in range(200):
    s = ttt.initial_state()
    while ttt.terminal_value(s) is None:
        s = ttt.apply(s, oracle_opponent(ttt, s, table, rng))
    outcomes.append(ttt.terminal_value(s))
print(f"\noracle vs oracle over 200 games: all draws = {all(z == 0 for z in outcomes)}")
