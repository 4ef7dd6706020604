import numpy as np
import pytest

from azlab.games import Game, State, make_game
from azlab.oracle import StateTable, solve


@pytest.fixture(scope="session")
def ttt3() -> Game:
    return make_game("ttt3")


@pytest.fixture(scope="session")
def ttt4() -> Game:
    return make_game("ttt4")


@pytest.fixture(scope="session")
def connect4() -> Game:
    return make_game("connect4")


@pytest.fixture(scope="session")
def ttt3_table(ttt3) -> StateTable:
    return solve(ttt3)


def play(game: Game, actions) -> State:
    state = game.initial_state()
    for a in actions:
        state = game.apply(state, a)
    return state


def random_playout_state(game: Game, rng: np.random.Generator, plies=None) -> State:
    """A state reached by uniformly random legal play.

    Stops early at terminal states; with ``plies=None`` plays to the end.
    """
    state = game.initial_state()
    steps = game.cells if plies is None else plies
    for _ in range(steps):
        if game.terminal_value(state) is not None:
            break
        mask = game.legal_actions(state)
        choices = np.flatnonzero(mask)
        state = game.apply(state, int(choices[rng.integers(len(choices))]))
    return state


def random_nonterminal_state(game: Game, rng: np.random.Generator) -> State:
    while True:
        plies = int(rng.integers(0, game.cells - 1))
        state = random_playout_state(game, rng, plies)
        if game.terminal_value(state) is None:
            return state
