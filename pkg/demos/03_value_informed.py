"""Value-informed selection and augmentation, step by step.

Shows the two training-time mechanisms on concrete positions:

* the one-step lookahead policy (softmax over negated successor values,
  exact outcomes at terminal successors),
* the stochastic alternation between search policy and value policy,
* the symmetric augmentation that stores, per position, the transform on
  which the value net disagrees most with its own estimate (outcome sign
  flipped when that transform is the player inversion).

Run: python demos/03_value_informed.py
"""

import numpy as np

from azlab import make_game
from azlab.net import NetEvaluator, init_params, net_config_for
from azlab.training import value_policy, vis_select, visa_augment

ttt = make_game("ttt3")
net = NetEvaluator(ttt, init_params(net_config_for(ttt, seed=7)))
rng = np.random.default_rng(0)

# A position where X threatens the top row: the exact terminal outcome
# dominates the lookahead no matter what the untrained net thinks.
state = ttt.initial_state()
for a in (0, 3, 1, 4):
    state = ttt.apply(state, a)
print(ttt.render(state))

pv = value_policy(ttt, state, net)
print("\nvalue policy over actions:")
print(np.array_str(pv, precision=3, suppress_small=True))
print(f"winning action 2 gets the largest mass: {pv.argmax() == 2}")

# VIS: alternate between the search policy and the value policy.
search_pi = np.zeros(9)
search_pi[np.flatnonzero(ttt.legal_actions(state))] = 0.0
search_pi[2] = 1.0
branches = [
    vis_select(ttt, state, search_pi, net, epsilon=0.5, softmax_temp=1.0, rng=rng)[1]
    for _ in range(1000)
]
print(f"\nVIS branches over 1000 draws at epsilon=0.5: "
      f"policy {branches.count('policy')}, value {branches.count('value')}")

# VISA: keep the transform with maximum squared value disagreement.
entries, op_name = visa_augment(ttt, state, search_pi, z_mover=1.0, evaluator=net)
print(f"\nVISA chose op: {op_name}")
print(f"original target z: {entries[0].target_z}, twin target z: {entries[1].target_z}")
moved = ttt.transform(state, ttt.op(op_name))
print("twin board:")
print(ttt.render(moved))

# Disagreements per candidate op, for the curious.
v0 = net.value_of(state)
for op in ttt.augment_ops:
    vi = net.value_of(ttt.transform(state, op))
    print(f"  {op.name:>13}: (v - v_sigma)^2 = {(v0 - vi) ** 2:.5f}")
