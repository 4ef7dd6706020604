"""Self-play training: vanilla AlphaZero plus value-informed variants.

Modes:

* ``alphazero`` — search policy only (the value-selection branch never
  fires; internally this is the epsilon = 1 special case, so the vanilla
  run consumes the identical RNG stream as a VIS run and the two are
  step-for-step comparable under one seed).
* ``vis_only`` — action selection alternates stochastically between the
  search policy and a one-step value lookahead policy.
* ``visa_only`` — every recorded position is stored together with the
  symmetric transform on which the value net disagrees most with itself.
* ``visa_vis`` — both of the above.
* ``alphazero_random_starts`` — vanilla selection, but each rollout begins
  from a random legal non-terminal state (value-error lower bound).

Replay targets: the search policy (temperature-scheduled) and the final
game outcome re-signed to each recorded state's player to move. The VISA
transform of an entry permutes the policy target alongside the board and
negates the outcome exactly when the chosen op is the player inversion.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .games import Game, State, make_game, outcome_for_player
from .mcts import SearchConfig, run_search, search_policy
from .net import (
    NetConfig,
    NetEvaluator,
    SgdMomentum,
    init_params,
    loss_and_grads,
    net_config_for,
    save_checkpoint,
)
from .oracle import enumerate_states

MODES = ("alphazero", "vis_only", "visa_only", "visa_vis", "alphazero_random_starts")


@dataclass(frozen=True)
class TrainConfig:
    game: str
    net: NetConfig
    search: SearchConfig
    mode: str = "alphazero"
    vis_epsilon: float = 0.5
    vis_softmax_temp: float = 1.0
    total_games: int = 20_000
    batch_size: int = 64
    buffer_capacity: int = 16_384
    train_steps_per_game: int = 1
    checkpoint_every: int = 2_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.vis_epsilon <= 1.0:
            raise ValueError("vis_epsilon must be in [0, 1]")
        if self.vis_softmax_temp <= 0:
            raise ValueError("vis_softmax_temp must be > 0")
        if self.total_games % self.checkpoint_every:
            raise ValueError("total_games must be a multiple of checkpoint_every")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def vis_enabled(self) -> bool:
        return self.mode in ("vis_only", "visa_vis")

    @property
    def visa_enabled(self) -> bool:
        return self.mode in ("visa_only", "visa_vis")

    @property
    def effective_epsilon(self) -> float:
        """Probability of the policy branch; 1.0 outside the VIS modes."""
        return self.vis_epsilon if self.vis_enabled else 1.0


class ReplayEntry(NamedTuple):
    features: np.ndarray       # float32 (3*H*W,)
    target_policy: np.ndarray  # float32, supported only on legal actions
    target_z: float            # outcome from this state's mover perspective
    legal_mask: np.ndarray     # bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform random sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Optional[ReplayEntry]] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, entry: ReplayEntry) -> None:
        if len(self._items) < self.capacity:
            self._items.append(entry)
        else:
            self._items[self._next] = entry
            self._next = (self._next + 1) % self.capacity

    def extend(self, entries) -> None:
        for e in entries:
            self.append(e)

    def sample(self, rng: np.random.Generator, batch_size: int):
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        feats = np.stack([self._items[i].features for i in idx])
        pis = np.stack([self._items[i].target_policy for i in idx])
        zs = np.array([self._items[i].target_z for i in idx], dtype=np.float32)
        masks = np.stack([self._items[i].legal_mask for i in idx])
        return feats, pis, zs, masks


def value_policy(game: Game, state: State, evaluator, temp: float = 1.0) -> np.ndarray:
    """One-step lookahead distribution: softmax over successor values.

    Each legal action is scored by the successor's value negated into the
    mover's perspective; terminal successors use the exact game outcome
    instead of the network. Softmax (optionally tempered) over legal
    actions; illegal actions get exactly zero.
    """
    mask = game.legal_actions(state)
    actions = np.flatnonzero(mask)
    scores = np.empty(len(actions))
    pending_states = []
    pending_pos = []
    for i, a in enumerate(actions):
        succ = game.apply(state, int(a))
        tv = game.terminal_value(succ)
        if tv is not None:
            scores[i] = -float(tv)
        else:
            pending_pos.append(i)
            pending_states.append(succ)
    if pending_states:
        values = evaluator.value_many(pending_states)
        for i, v in zip(pending_pos, values):
            scores[i] = -float(v)
    scaled = (scores - scores.max()) / temp
    exp = np.exp(scaled)
    out = np.zeros(game.action_count)
    out[actions] = exp / exp.sum()
    return out


def vis_select(
    game: Game,
    state: State,
    policy: np.ndarray,
    evaluator,
    epsilon: float,
    softmax_temp: float,
    rng: np.random.Generator,
):
    """Value-informed selection: sample the search policy with probability
    ``epsilon``, otherwise the one-step value policy.

    Returns ``(action, branch)`` where branch is ``"policy"`` or ``"value"``.
    With ``epsilon = 1`` the behavior (and RNG stream) is exactly vanilla
    AlphaZero's.
    """
    eta = rng.random()
    if eta < epsilon:
        branch = "policy"
        dist = np.asarray(policy, dtype=np.float64)
    else:
        branch = "value"
        dist = value_policy(game, state, evaluator, softmax_temp)
    dist = dist / dist.sum()
    action = int(rng.choice(game.action_count, p=dist))
    return action, branch


def _choose_augment_op(game: Game, state: State, evaluator):
    """The symmetry transform with maximum squared value disagreement.

    Candidates are the non-identity ops in fixed order (rotations,
    reflections, inversion); ties go to the earliest, so a constant network
    picks the first rotation.
    """
    ops = game.augment_ops
    v0 = evaluator.value_of(state)
    transformed = [game.transform(state, op) for op in ops]
    values = evaluator.value_many(transformed)
    disagreement = (v0 - values) ** 2
    i = int(np.argmax(disagreement))
    return ops[i], transformed[i]


def make_entry(game: Game, state: State, policy: np.ndarray, z_mover: float) -> ReplayEntry:
    return ReplayEntry(
        features=game.encode(state),
        target_policy=np.asarray(policy, dtype=np.float32),
        target_z=float(z_mover),
        legal_mask=game.legal_actions(state),
    )


def visa_augment(game: Game, state: State, policy: np.ndarray, z_mover: float, evaluator):
    """The original replay entry plus its max-disagreement symmetric twin.

    The twin's policy target is permuted to track the transformed board
    (identity permutation for inversion) and its outcome is negated exactly
    when the chosen op is the inversion. Returns ``(entries, op_name)``.
    """
    op, moved = _choose_augment_op(game, state, evaluator)
    tz = -z_mover if op.swaps_players else z_mover
    twin = ReplayEntry(
        features=game.encode(moved),
        target_policy=np.asarray(game.transform_policy(policy, op), dtype=np.float32),
        target_z=float(tz),
        legal_mask=game.transform_policy(game.legal_actions(state), op),
    )
    return [make_entry(game, state, policy, z_mover), twin], op.name


class EpisodeStep(NamedTuple):
    state: State
    policy: np.ndarray
    action: int
    branch: str


class EpisodeRecord(NamedTuple):
    steps: list[EpisodeStep]
    outcome_p1: int
    final_state: State

    def z_for(self, state: State) -> int:
        return self.outcome_p1 if state.player == 0 else -self.outcome_p1


def play_episode(
    game: Game,
    evaluator,
    cfg: TrainConfig,
    rng: np.random.Generator,
    start_state: Optional[State] = None,
) -> EpisodeRecord:
    """One self-play game under the configured selection rule.

    The search temperature is 1.0 for the first ``temperature_drop_ply``
    steps of the rollout, then greedy.
    """
    state = game.initial_state() if start_state is None else start_state
    steps: list[EpisodeStep] = []
    t = 0
    while game.terminal_value(state) is None:
        tau = 1.0 if t < cfg.search.temperature_drop_ply else None
        node = run_search(game, state, evaluator, cfg.search, rng)
        policy = search_policy(node, tau)
        action, branch = vis_select(
            game, state, policy, evaluator, cfg.effective_epsilon, cfg.vis_softmax_temp, rng
        )
        steps.append(EpisodeStep(state, policy, action, branch))
        state = game.apply(state, action)
        t += 1
    outcome_p1 = outcome_for_player(state, game.terminal_value(state), 0)
    return EpisodeRecord(steps, outcome_p1, state)


def episode_entries(game: Game, episode: EpisodeRecord, evaluator, visa: bool):
    """Replay entries for an episode: one per step, two when VISA is on."""
    out = []
    ops = []
    for step in episode.steps:
        z = episode.z_for(step.state)
        if visa:
            entries, op_name = visa_augment(game, step.state, step.policy, z, evaluator)
            out.extend(entries)
            ops.append(op_name)
        else:
            out.append(make_entry(game, step.state, step.policy, z))
    return out, ops


def _random_start(game: Game, rng: np.random.Generator, pool: Optional[list]) -> State:
    if pool is not None:
        return pool[int(rng.integers(len(pool)))]
    # Larger games: truncate a random playout at a random ply.
    while True:
        state = game.initial_state()
        plies = int(rng.integers(0, game.cells - 1))
        for _ in range(plies):
            if game.terminal_value(state) is not None:
                break
            mask = game.legal_actions(state)
            choices = np.flatnonzero(mask)
            state = game.apply(state, int(choices[rng.integers(len(choices))]))
        if game.terminal_value(state) is None:
            return state


VISITS_MAGIC = b"AZVC"


def save_visits(path, visits: dict[int, int]) -> None:
    """Visit counter as fixed-width binary records (16-byte key, u64 count)."""
    with open(path, "wb") as f:
        f.write(VISITS_MAGIC + struct.pack("<Q", len(visits)))
        for key in sorted(visits):
            f.write(key.to_bytes(16, "little") + struct.pack("<Q", visits[key]))


def load_visits(path) -> dict[int, int]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != VISITS_MAGIC:
        raise ValueError(f"{path}: not a visit-counter file")
    (count,) = struct.unpack_from("<Q", data, 4)
    visits = {}
    pos = 12
    for _ in range(count):
        key = int.from_bytes(data[pos : pos + 16], "little")
        (n,) = struct.unpack_from("<Q", data, pos + 16)
        visits[key] = n
        pos += 24
    return visits


@dataclass
class TrainResult:
    checkpoints: list[Path]
    log_path: Path
    visits_path: Path
    visits: dict[int, int]
    params: dict
    cfg: TrainConfig
    elapsed: float
    branch_counts: dict[str, int] = field(default_factory=dict)


def _derived_seeds(seed: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence(seed)
    a, b, c = ss.spawn(3)
    return (
        int(a.generate_state(1)[0]),
        int(b.generate_state(1)[0]),
        int(c.generate_state(1)[0]),
    )


def train(cfg: TrainConfig, out_dir) -> TrainResult:
    """Run the full self-play training loop; see the module docstring.

    Writes numbered checkpoints, a JSON-lines log (one record per
    checkpoint), and the visit counter into ``out_dir``. Deterministic for
    ``workers=1`` given the seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    game = make_game(cfg.game)
    if cfg.net.input_dim != game.input_dim or cfg.net.action_count != game.action_count:
        raise ValueError(
            f"net config ({cfg.net.input_dim}, {cfg.net.action_count}) does not fit "
            f"{game.name} ({game.input_dim}, {game.action_count})"
        )
    net_seed, selfplay_seed, sample_seed = _derived_seeds(cfg.seed)
    net_cfg = replace(cfg.net, seed=net_seed)
    params = init_params(net_cfg)
    evaluator = NetEvaluator(game, params)
    optimizer = SgdMomentum(net_cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    selfplay_rng = np.random.default_rng(selfplay_seed)
    sample_rng = np.random.default_rng(sample_seed)
    visits: dict[int, int] = {}
    branch_counts = {"policy": 0, "value": 0}

    start_pool = None
    if cfg.mode == "alphazero_random_starts" and game.name == "ttt3":
        start_pool = [s for s in enumerate_states(game) if game.terminal_value(s) is None]

    log_path = out_dir / "train_log.jsonl"
    checkpoints: list[Path] = []
    t0 = time.time()
    step_count = 0
    window_terms: list[dict] = []

    if cfg.workers > 1:
        # Workers build the replay entries themselves so that VISA's value
        # comparisons use the snapshot that generated each episode.
        episode_source = _parallel_episodes(game, cfg, params, start_pool)
    else:
        def episode_source():
            for _ in range(cfg.total_games):
                start = None
                if cfg.mode == "alphazero_random_starts":
                    start = _random_start(game, selfplay_rng, start_pool)
                episode = play_episode(game, evaluator, cfg, selfplay_rng, start)
                entries, _ = episode_entries(game, episode, evaluator, cfg.visa_enabled)
                yield episode, entries
        episode_source = episode_source()

    with open(log_path, "w") as log:
        for game_idx, (episode, entries) in enumerate(episode_source, start=1):
            for step in episode.steps:
                key = game.key(step.state)
                visits[key] = visits.get(key, 0) + 1
                branch_counts[step.branch] += 1
            buffer.extend(entries)

            if len(buffer) >= cfg.batch_size:
                for _ in range(cfg.train_steps_per_game):
                    batch = buffer.sample(sample_rng, cfg.batch_size)
                    terms, grads = loss_and_grads(params, *batch, net_cfg.l2_lambda)
                    optimizer.step(params, grads)
                    step_count += 1
                    window_terms.append(terms)

            if game_idx % cfg.checkpoint_every == 0:
                ckpt = out_dir / f"checkpoint_{game_idx:07d}.ckpt"
                save_checkpoint(ckpt, params, net_cfg)
                checkpoints.append(ckpt)
                mean_terms = {
                    k: float(np.mean([t[k] for t in window_terms])) if window_terms else None
                    for k in ("loss", "policy_loss", "value_loss", "l2")
                }
                record = {
                    "games": game_idx,
                    "train_steps": step_count,
                    "buffer_size": len(buffer),
                    "unique_states_visited": len(visits),
                    "branch_counts": dict(branch_counts),
                    "elapsed_sec": round(time.time() - t0, 3),
                    **mean_terms,
                }
                log.write(json.dumps(record) + "\n")
                log.flush()
                window_terms.clear()
                if cfg.workers > 1:
                    episode_source.refresh_params(params)

    visits_path = out_dir / "visits.bin"
    save_visits(visits_path, visits)
    return TrainResult(
        checkpoints=checkpoints,
        log_path=log_path,
        visits_path=visits_path,
        visits=visits,
        params=params,
        cfg=cfg,
        elapsed=time.time() - t0,
        branch_counts=branch_counts,
    )


class _parallel_episodes:
    """Episode stream from worker processes over a bounded queue.

    Workers hold read-only parameter snapshots and refresh them at
    checkpoint boundaries (see ``refresh_params``). Episode arrival order
    is nondeterministic; single-worker mode is the reproducible path.
    """

    def __init__(self, game: Game, cfg: TrainConfig, params, start_pool):
        import multiprocessing as mp

        self._mp = mp.get_context("fork")
        self.cfg = cfg
        self.queue = self._mp.Queue(maxsize=4 * cfg.workers)
        self.param_queues = []
        self.procs = []
        counts = [cfg.total_games // cfg.workers] * cfg.workers
        for i in range(cfg.total_games % cfg.workers):
            counts[i] += 1
        for w in range(cfg.workers):
            pq = self._mp.Queue()
            pq.put({k: v.copy() for k, v in params.items()})
            proc = self._mp.Process(
                target=_worker_main,
                args=(cfg, counts[w], cfg.seed + 7919 * (w + 1), pq, self.queue),
                daemon=True,
            )
            proc.start()
            self.param_queues.append(pq)
            self.procs.append(proc)

    def refresh_params(self, params) -> None:
        snapshot = {k: v.copy() for k, v in params.items()}
        for pq in self.param_queues:
            pq.put(snapshot)

    def __iter__(self):
        for _ in range(self.cfg.total_games):
            steps_raw, outcome_p1, final_state, entries_raw = self.queue.get()
            steps = [EpisodeStep(State(*s), p, a, b) for s, p, a, b in steps_raw]
            entries = [ReplayEntry(*e) for e in entries_raw]
            yield EpisodeRecord(steps, outcome_p1, State(*final_state)), entries
        for proc in self.procs:
            proc.join(timeout=30)


def _worker_main(cfg: TrainConfig, n_games: int, seed: int, param_queue, episode_queue):
    from queue import Empty

    game = make_game(cfg.game)
    rng = np.random.default_rng(seed)
    params = param_queue.get()
    evaluator = NetEvaluator(game, params)
    start_pool = None
    if cfg.mode == "alphazero_random_starts" and game.name == "ttt3":
        start_pool = [s for s in enumerate_states(game) if game.terminal_value(s) is None]
    for _ in range(n_games):
        # Pick up the freshest snapshot, if any arrived.
        while True:
            try:
                params = param_queue.get_nowait()
                evaluator.params = params
            except Empty:
                break
        start = None
        if cfg.mode == "alphazero_random_starts":
            start = _random_start(game, rng, start_pool)
        episode = play_episode(game, evaluator, cfg, rng, start)
        entries, _ = episode_entries(game, episode, evaluator, cfg.visa_enabled)
        payload = (
            [(tuple(s.state), s.policy, s.action, s.branch) for s in episode.steps],
            episode.outcome_p1,
            tuple(episode.final_state),
            [tuple(e) for e in entries],
        )
        episode_queue.put(payload)


def desk_config(game_name: str, mode: str = "alphazero", seed: int = 0, **overrides) -> TrainConfig:
    """Desk-scale presets: reduced game counts, published hyperparameters
    otherwise (learning rate, batch size, simulations, c, temperature drop,
    L2 weight, widths/depths).

    Two knobs beyond the published tables were calibrated at this scale:
    a near-cumulative replay buffer plus two optimizer steps per game, and
    root Dirichlet exploration noise (without it, desk-scale self-play
    collapses onto too few lines to defend against an exactly-optimal
    opponent; see the training log's ``unique_states_visited``).
    """
    from .mcts import RootNoise

    game = make_game(game_name)
    presets = {
        "ttt3": dict(
            net=net_config_for(game, learning_rate=1e-3),
            search=SearchConfig(
                num_simulations=25,
                c_puct=2.0,
                temperature_drop_ply=5,
                root_noise=RootNoise(alpha=10 / 9, fraction=0.35),
            ),
            total_games=20_000,
            batch_size=64,
            buffer_capacity=131_072,
            train_steps_per_game=2,
            checkpoint_every=2_000,
        ),
        "ttt4": dict(
            net=net_config_for(game, learning_rate=1e-4),
            search=SearchConfig(
                num_simulations=25,
                c_puct=2.0,
                temperature_drop_ply=9,
                root_noise=RootNoise(alpha=10 / 16, fraction=0.35),
            ),
            total_games=60_000,
            batch_size=128,
            buffer_capacity=262_144,
            train_steps_per_game=4,
            checkpoint_every=6_000,
        ),
        "connect4": dict(
            net=net_config_for(game, learning_rate=1e-4),
            search=SearchConfig(
                num_simulations=50,
                c_puct=2.0,
                temperature_drop_ply=21,
                root_noise=RootNoise(alpha=10 / 7, fraction=0.35),
            ),
            total_games=100_000,
            batch_size=256,
            buffer_capacity=262_144,
            train_steps_per_game=4,
            checkpoint_every=10_000,
        ),
    }
    base = presets[game_name]
    base.update(overrides)
    return TrainConfig(game=game_name, mode=mode, seed=seed, **base)


def paper_config(game_name: str, mode: str = "alphazero", seed: int = 0, **overrides) -> TrainConfig:
    """Full published budgets (not desk-runnable): 500k / 1.75M / 7.5M games.

    Matches the published setup exactly where stated; in particular no
    root exploration noise.
    """
    totals = {"ttt3": 500_000, "ttt4": 1_750_000, "connect4": 7_500_000}
    cfg = desk_config(game_name, mode, seed)
    big = dict(
        total_games=totals[game_name],
        buffer_capacity=262_144,
        checkpoint_every=totals[game_name] // 100,
        search=replace(cfg.search, root_noise=None),
    )
    big.update(overrides)
    return replace(cfg, **big)
