"""PUCT search anatomy.

Runs the tree search on a tactical position with an untrained network and
with exact oracle values, comparing the visit distributions. The forced
win is found in both cases; the oracle-guided search concentrates on it
almost exclusively.

Run: python demos/02_search.py
"""

import numpy as np

from azlab import make_game, solve
from azlab.mcts import OracleEvaluator, SearchConfig, root_edges, root_value, run_search
from azlab.net import NetEvaluator, init_params, net_config_for

ttt = make_game("ttt3")

# X to move, X on 0 and 1: playing 2 completes the top row.
state = ttt.initial_state()
for a in (0, 3, 1, 4):
    state = ttt.apply(state, a)
print(ttt.render(state))

fresh_net = NetEvaluator(ttt, init_params(net_config_for(ttt, seed=1)))
oracle = OracleEvaluator(ttt, solve(ttt))

for name, evaluator in (("untrained net", fresh_net), ("oracle values", oracle)):
    node = run_search(ttt, state, evaluator, SearchConfig(num_simulations=100))
    print(f"\n{name}: root value {root_value(node):+.3f}")
    print(f"{'action':>6} {'N':>5} {'Q':>7} {'P':>7}")
    for e in sorted(root_edges(node), key=lambda e: -e["N"]):
        print(f"{e['action']:>6} {e['N']:>5} {e['Q']:>+7.3f} {e['P']:>7.3f}")
    best = max(root_edges(node), key=lambda e: e["N"])
    assert best["action"] == 2, "search must find the winning move"

print("\nboth searches route most visits to the winning action 2")
