"""azlab: an AlphaZero engine for solved board games, with value-informed
selection (VIS), value-informed symmetric augmentation (VISA), an exact
game-tree oracle, and the analysis tooling to measure policy quality, value
error, generalization, misalignment, and adversarially-detected failures."""

from .analysis import (
    AdversarialStateSet,
    EvalReport,
    MatchScores,
    adversarial_detect,
    assemble_report,
    compare_reports,
    evaluate_matches,
    generalization_curve,
    kl_divergence,
    mean_misalignment,
    misalignment,
    value_error_scan,
)
from .games import Game, State, SymmetryOp, make_game, outcome_for_player
from .mcts import (
    OracleEvaluator,
    RootNoise,
    SearchConfig,
    SearchNode,
    root_edges,
    root_value,
    run_search,
    search_policy,
)
from .net import (
    NetConfig,
    NetEvaluator,
    SgdMomentum,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    net_config_for,
    save_checkpoint,
)
from .oracle import (
    SolvedEntry,
    StateTable,
    alphabeta_value,
    endgame_solve,
    enumerate_states,
    oracle_opponent,
    solve,
)
from .training import (
    ReplayBuffer,
    ReplayEntry,
    TrainConfig,
    desk_config,
    paper_config,
    play_episode,
    train,
    value_policy,
    vis_select,
    visa_augment,
)

__all__ = [
    "AdversarialStateSet",
    "EvalReport",
    "Game",
    "MatchScores",
    "NetConfig",
    "NetEvaluator",
    "OracleEvaluator",
    "ReplayBuffer",
    "ReplayEntry",
    "RootNoise",
    "SearchConfig",
    "SearchNode",
    "SgdMomentum",
    "SolvedEntry",
    "State",
    "StateTable",
    "SymmetryOp",
    "TrainConfig",
    "adversarial_detect",
    "alphabeta_value",
    "assemble_report",
    "compare_reports",
    "desk_config",
    "endgame_solve",
    "enumerate_states",
    "evaluate_matches",
    "forward",
    "generalization_curve",
    "init_params",
    "kl_divergence",
    "load_checkpoint",
    "loss_and_grads",
    "make_game",
    "mean_misalignment",
    "misalignment",
    "net_config_for",
    "oracle_opponent",
    "outcome_for_player",
    "paper_config",
    "play_episode",
    "root_edges",
    "root_value",
    "run_search",
    "save_checkpoint",
    "search_policy",
    "solve",
    "train",
    "value_error_scan",
    "value_policy",
    "vis_select",
    "visa_augment",
]

__version__ = "0.1.0"
