"""Adversarial endgame detection.

Self-play where every move is the one the search policy likes LEAST
steers games into neglected corners of the state space. Every late-game
position encountered is solved exactly; positions where the value head is
confidently wrong (squared error > 1) are collected and re-verified.

A deliberately bad evaluator (constant -1) makes the mechanism obvious:
every decisive endgame it stumbles into where the mover actually wins is
flagged with the maximum error of 4.

Run: python demos/05_adversarial_probe.py
"""

import numpy as np

from azlab import make_game, solve
from azlab.analysis import adversarial_detect, reverify_detections
from azlab.mcts import SearchConfig
from azlab.net import NetEvaluator, init_params, net_config_for

ttt = make_game("ttt3")


class Pessimist:
    """Always predicts a loss; uniform priors."""

    def __init__(self, game):
        self.game = game

    def evaluate(self, state):
        legal = self.game.legal_actions(state)
        return legal / legal.sum(), -1.0

    def value_of(self, state):
        return -1.0

    def value_many(self, states):
        return np.full(len(states), -1.0)


found = adversarial_detect(
    ttt,
    Pessimist(ttt),
    SearchConfig(num_simulations=25),
    n_games=40,
    rng=np.random.default_rng(0),
    empties_budget=9,
)
print(f"pessimist: {len(found)} unique high-error endgame states, "
      f"mean error {found.mean_error():.2f}")
assert reverify_detections(ttt, found), "every detection re-verifies exactly"

# An untrained network gets flagged too, just less systematically.
net = NetEvaluator(ttt, init_params(net_config_for(ttt, seed=5)))
found_net = adversarial_detect(
    ttt, net, SearchConfig(num_simulations=25), 40, np.random.default_rng(1), empties_budget=9
)
print(f"untrained net: {len(found_net)} states, mean error {found_net.mean_error():.2f}, "
      f"mean misalignment {found_net.mean_misalignment():.2f}")

worst = max(found_net.states.values(), key=lambda d: d.error, default=None)
if worst is not None:
    state = ttt.state_from_key(worst.key)
    print("\nworst state (net value vs exact):"
          f" v={worst.net_value:+.2f}, z={worst.oracle_value:+d}")
    print(ttt.render(state))
