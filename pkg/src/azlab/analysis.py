"""Evaluation against the exact oracle: match play, value error, visitation
curves, policy-value misalignment, and adversarial state detection.

Evaluation conventions (fixed across the package):

* Match evaluation plays greedily from search visit counts with no root
  noise; policy-only evaluation samples directly from the network policy.
* Value error for a state is the squared difference between the network
  value and the exact game-tree value, both mover-perspective; thresholds
  are strict (an error of exactly 1.0 does not count as "> 1.0").
* Misalignment is KL(pi_p || pi_v) over legal actions after additive
  smoothing of both distributions (pi_p may contain exact zeros).
* Value scans cover non-terminal states: the network is never trained on
  terminal positions and both policies are undefined there.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .games import Game, State
from .mcts import SearchConfig, run_search, search_policy
from .oracle import (
    BudgetExceededError,
    SolvedEntry,
    StateTable,
    endgame_solve,
    oracle_opponent,
)
from .training import value_policy, vis_select

ERROR_THRESHOLDS = (1.0, 3.0, 3.5)
VISIT_BUCKETS = ((0, 0), (1, 10), (11, 100), (101, 1000), (1001, None))


def _bucket_label(lo: int, hi: Optional[int]) -> str:
    if lo == hi:
        return str(lo)
    if hi is None:
        return f">{lo - 1}"
    return f"{lo}-{hi}"


@dataclass
class MatchScores:
    win: int = 0
    draw: int = 0
    loss: int = 0

    @property
    def games(self) -> int:
        return self.win + self.draw + self.loss

    def non_loss_rate(self) -> float:
        return 1.0 - self.loss / self.games

    def add(self, outcome: int) -> None:
        if outcome > 0:
            self.win += 1
        elif outcome < 0:
            self.loss += 1
        else:
            self.draw += 1


def _eval_search_cfg(cfg: SearchConfig) -> SearchConfig:
    return replace(cfg, root_noise=None)


def evaluate_matches(
    game: Game,
    evaluator,
    table: StateTable,
    search_cfg: SearchConfig,
    use_search: bool,
    n_games: int,
    rng: np.random.Generator,
    vis_epsilon: Optional[float] = None,
    vis_softmax_temp: float = 1.0,
    workers: int = 1,
) -> MatchScores:
    """Play against the oracle opponent, alternating seats each game.

    With ``use_search`` the agent plays the greedy search action; without,
    it samples directly from its policy head. ``vis_epsilon`` (normally
    ``None``) switches evaluation-time action selection to the VIS rule.

    ``workers > 1`` splits the games across forked processes (the table
    and parameters are shared read-only); results are deterministic for a
    fixed seed and worker count.
    """
    if workers > 1:
        return _parallel_matches(
            game, evaluator, table, search_cfg, use_search, n_games, rng,
            vis_epsilon, vis_softmax_temp, workers,
        )
    cfg = _eval_search_cfg(search_cfg)
    scores = MatchScores()
    for i in range(n_games):
        agent_player = i % 2
        state = game.initial_state()
        while game.terminal_value(state) is None:
            if state.player == agent_player:
                if use_search:
                    node = run_search(game, state, evaluator, cfg)
                    policy = search_policy(node, None)
                else:
                    policy, _ = evaluator.evaluate(state)
                if vis_epsilon is not None:
                    action, _ = vis_select(
                        game, state, policy, evaluator, vis_epsilon, vis_softmax_temp, rng
                    )
                elif use_search:
                    action = int(np.argmax(policy))
                else:
                    p = np.asarray(policy, dtype=np.float64)
                    action = int(rng.choice(game.action_count, p=p / p.sum()))
            else:
                action = oracle_opponent(game, state, table, rng)
            state = game.apply(state, action)
        z_mover = game.terminal_value(state)
        scores.add(z_mover if state.player == agent_player else -z_mover)
    return scores


def _parallel_matches(
    game, evaluator, table, search_cfg, use_search, n_games, rng,
    vis_epsilon, vis_softmax_temp, workers,
) -> MatchScores:
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(
        int(rng.integers(2**63))
    ).spawn(workers)]
    shares = [n_games // workers + (1 if w < n_games % workers else 0) for w in range(workers)]
    args = [
        (game, evaluator, table, search_cfg, use_search, shares[w], seeds[w],
         vis_epsilon, vis_softmax_temp)
        for w in range(workers)
        if shares[w]
    ]
    with ctx.Pool(len(args)) as pool:
        parts = pool.map(_match_chunk, args)
    total = MatchScores()
    for part in parts:
        total.win += part.win
        total.draw += part.draw
        total.loss += part.loss
    return total


def _match_chunk(packed) -> MatchScores:
    (game, evaluator, table, search_cfg, use_search, n, seed,
     vis_epsilon, vis_softmax_temp) = packed
    return evaluate_matches(
        game, evaluator, table, search_cfg, use_search, n,
        np.random.default_rng(seed), vis_epsilon, vis_softmax_temp, workers=1,
    )


@dataclass
class ValueScan:
    keys: list[int]
    errors: np.ndarray
    signed: np.ndarray
    mean_error: float
    fractions: dict[str, float]
    histogram: dict[str, list]
    signed_histogram: dict[str, list]


def value_error_scan(game: Game, evaluator, states: list[State], table: StateTable) -> ValueScan:
    """Squared value error against the oracle over ``states`` (batched)."""
    keys = [game.key(s) for s in states]
    zs = np.array([table.value_of(k) for k in keys], dtype=np.float64)
    values = np.empty(len(states), dtype=np.float64)
    chunk = 2048
    for lo in range(0, len(states), chunk):
        batch = states[lo : lo + chunk]
        values[lo : lo + len(batch)] = evaluator.value_many(batch)
    signed = values - zs
    errors = signed ** 2
    edges = np.linspace(0.0, 4.0, 17)
    counts, _ = np.histogram(errors, bins=edges)
    signed_edges = np.linspace(-2.0, 2.0, 17)
    signed_counts, _ = np.histogram(signed, bins=signed_edges)
    return ValueScan(
        keys=keys,
        errors=errors,
        signed=signed,
        mean_error=float(errors.mean()),
        fractions={f">{t}": float((errors > t).mean()) for t in ERROR_THRESHOLDS},
        histogram={"edges": edges.tolist(), "counts": counts.tolist()},
        signed_histogram={"edges": signed_edges.tolist(), "counts": signed_counts.tolist()},
    )


def _smooth(dist: np.ndarray, delta: float) -> np.ndarray:
    out = dist + delta
    return out / out.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray, delta: float = 1e-6) -> float:
    """KL(p || q) with additive smoothing on both sides, renormalized."""
    ps = _smooth(np.asarray(p, dtype=np.float64), delta)
    qs = _smooth(np.asarray(q, dtype=np.float64), delta)
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def misalignment(
    game: Game,
    evaluator,
    state: State,
    search_cfg: SearchConfig,
    delta: float = 1e-6,
    use_search: bool = True,
) -> float:
    """Policy-value misalignment KL(pi_p || pi_v) at one state.

    ``pi_p`` comes from a fresh greedy-temperature search (or the raw
    policy head with ``use_search=False``); ``pi_v`` is the one-step value
    lookahead. Restricted to legal actions, smoothed by ``delta``.
    """
    legal = game.legal_actions(state)
    if use_search:
        node = run_search(game, state, evaluator, _eval_search_cfg(search_cfg))
        pi_p = search_policy(node, None)
    else:
        pi_p, _ = evaluator.evaluate(state)
    pi_v = value_policy(game, state, evaluator)
    return kl_divergence(pi_p[legal], pi_v[legal], delta)


def mean_misalignment(
    game: Game,
    evaluator,
    states: list[State],
    search_cfg: SearchConfig,
    delta: float = 1e-6,
    use_search: bool = True,
):
    per_state = np.array(
        [misalignment(game, evaluator, s, search_cfg, delta, use_search) for s in states]
    )
    return float(per_state.mean()), per_state


def generalization_curve(errors_by_key: dict[int, float], visits: dict[int, int]):
    """Mean value error bucketed by training visitation.

    Returns ``(buckets, generalization_error)`` where ``buckets`` is a list
    of dicts (label, lo, hi, count, mean_error) with empty buckets flagged
    by ``count == 0`` and ``mean_error is None``; the generalization error
    is the zero-visit bucket's mean (None when that bucket is empty).
    """
    buckets = []
    zero_mean = None
    for lo, hi in VISIT_BUCKETS:
        errs = [
            e
            for k, e in errors_by_key.items()
            if lo <= visits.get(k, 0) and (hi is None or visits.get(k, 0) <= hi)
        ]
        mean = float(np.mean(errs)) if errs else None
        buckets.append(
            {
                "label": _bucket_label(lo, hi),
                "lo": lo,
                "hi": hi,
                "count": len(errs),
                "mean_error": mean,
            }
        )
        if lo == 0 and hi == 0:
            zero_mean = mean
    return buckets, zero_mean


@dataclass
class DetectedState:
    key: int
    net_value: float
    oracle_value: int
    error: float
    pi_p: list[float]
    pi_v: list[float]
    misalignment: float


@dataclass
class AdversarialStateSet:
    game: str
    threshold: float
    games_played: int
    skipped_budget: int
    states: dict[int, DetectedState] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    def mean_error(self) -> float:
        return float(np.mean([s.error for s in self.states.values()])) if self.states else 0.0

    def mean_misalignment(self) -> float:
        return float(np.mean([s.misalignment for s in self.states.values()])) if self.states else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "game": self.game,
                "threshold": self.threshold,
                "games_played": self.games_played,
                "skipped_budget": self.skipped_budget,
                "states": {str(k): asdict(v) for k, v in self.states.items()},
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "AdversarialStateSet":
        raw = json.loads(text)
        out = cls(
            game=raw["game"],
            threshold=raw["threshold"],
            games_played=raw["games_played"],
            skipped_budget=raw["skipped_budget"],
        )
        out.states = {int(k): DetectedState(**v) for k, v in raw["states"].items()}
        return out


def _min_policy_action(policy: np.ndarray, legal: np.ndarray, rng: np.random.Generator) -> int:
    """The least-probable legal action; ties sampled uniformly."""
    masked = np.where(legal, policy, np.inf)
    lo = masked.min()
    candidates = np.flatnonzero(masked == lo)
    return int(candidates[rng.integers(len(candidates))])


def adversarial_detect(
    game: Game,
    evaluator,
    search_cfg: SearchConfig,
    n_games: int,
    rng: np.random.Generator,
    empties_budget: int = 8,
    threshold: float = 1.0,
    endgame_cache: Optional[dict] = None,
    node_budget: int = 5_000_000,
    workers: int = 1,
) -> AdversarialStateSet:
    """Self-play under the minimum-probability action rule, collecting
    endgame states whose value prediction is badly wrong.

    Every non-terminal state encountered with at most ``empties_budget``
    empty cells is solved exactly; states with squared error strictly above
    ``threshold`` are retained (deduplicated by state key). Positions whose
    subtree blows the solver budget are skipped and counted.

    ``workers > 1`` splits the games across forked processes and merges
    the detected sets (first detection of a key wins).
    """
    if workers > 1:
        return _parallel_detect(
            game, evaluator, search_cfg, n_games, rng, empties_budget,
            threshold, node_budget, workers,
        )
    cfg = _eval_search_cfg(search_cfg)
    cache = endgame_cache if endgame_cache is not None else {}
    out = AdversarialStateSet(game.name, threshold, n_games, 0)
    for _ in range(n_games):
        state = game.initial_state()
        while game.terminal_value(state) is None:
            node = run_search(game, state, evaluator, cfg)
            pi_sample = search_policy(node, 1.0)
            empties = game.cells - state.move_count
            if empties <= empties_budget:
                key = game.key(state)
                if key not in out.states:
                    entry = _checked_entry(game, state, cache, node_budget)
                    if entry is None:
                        out.skipped_budget += 1
                    else:
                        v_net = evaluator.value_of(state)
                        err = (v_net - entry.value) ** 2
                        if err > threshold:
                            legal = game.legal_actions(state)
                            pi_p = search_policy(node, None)
                            pi_v = value_policy(game, state, evaluator)
                            out.states[key] = DetectedState(
                                key=key,
                                net_value=float(v_net),
                                oracle_value=entry.value,
                                error=float(err),
                                pi_p=pi_p.tolist(),
                                pi_v=pi_v.tolist(),
                                misalignment=kl_divergence(pi_p[legal], pi_v[legal]),
                            )
            state = game.apply(state, _min_policy_action(pi_sample, node.legal, rng))
    return out


def _parallel_detect(
    game, evaluator, search_cfg, n_games, rng, empties_budget, threshold,
    node_budget, workers,
) -> AdversarialStateSet:
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(
        int(rng.integers(2**63))
    ).spawn(workers)]
    shares = [n_games // workers + (1 if w < n_games % workers else 0) for w in range(workers)]
    args = [
        (game, evaluator, search_cfg, shares[w], seeds[w], empties_budget,
         threshold, node_budget)
        for w in range(workers)
        if shares[w]
    ]
    with ctx.Pool(len(args)) as pool:
        parts = pool.map(_detect_chunk, args)
    merged = AdversarialStateSet(game.name, threshold, n_games, 0)
    for part in parts:
        merged.skipped_budget += part.skipped_budget
        for key, det in part.states.items():
            merged.states.setdefault(key, det)
    return merged


def _detect_chunk(packed) -> AdversarialStateSet:
    (game, evaluator, search_cfg, n, seed, empties_budget, threshold, node_budget) = packed
    return adversarial_detect(
        game, evaluator, search_cfg, n, np.random.default_rng(seed),
        empties_budget, threshold, None, node_budget, workers=1,
    )


def _checked_entry(game, state, cache, node_budget) -> Optional[SolvedEntry]:
    try:
        return endgame_solve(game, state, cache=cache, node_budget=node_budget)
    except BudgetExceededError:
        return None


def reverify_detections(
    game: Game, detections: AdversarialStateSet, endgame_cache: Optional[dict] = None
) -> bool:
    """Soundness check: every retained state re-verifies against a fresh solve."""
    cache = endgame_cache if endgame_cache is not None else {}
    for key, det in detections.states.items():
        entry = endgame_solve(game, game.state_from_key(key), cache=cache)
        if entry.value != det.oracle_value or not det.error > detections.threshold:
            return False
    return True


@dataclass
class EvalReport:
    """Bundle of every metric the evaluation pipeline produces."""

    game: str
    label: str
    seeds: list[int]
    match_with_search: dict
    match_policy_only: dict
    mean_value_error: float
    error_fractions: dict[str, float]
    value_histogram: dict
    signed_histogram: dict
    misalignment_mean: float
    generalization_buckets: list[dict]
    generalization_error: Optional[float]
    states_scanned: int
    seeds_aggregated: int
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def assemble_report(
    game: Game,
    label: str,
    runs: list[tuple],
    table: StateTable,
    states: list[State],
    search_cfg: SearchConfig,
    match_games: int,
    seed: int = 0,
    workers: int = 1,
) -> EvalReport:
    """Evaluate one or more seed models and aggregate into a report.

    ``runs`` is a list of ``(seed, evaluator, visits)`` triples; match
    counts are summed across seeds, scan and misalignment means averaged,
    and bucket means averaged bucket-wise over the seeds where present.
    """
    if not runs:
        raise ValueError("assemble_report requires at least one run")
    rng = np.random.default_rng(seed)
    with_search = MatchScores()
    policy_only = MatchScores()
    scan_means, scan_fraction_list, miss_means = [], [], []
    hist_acc = None
    signed_acc = None
    bucket_acc: list[list[float]] = [[] for _ in VISIT_BUCKETS]
    zero_means = []
    for run_seed, evaluator, visits in runs:
        ws = evaluate_matches(
            game, evaluator, table, search_cfg, True, match_games, rng, workers=workers
        )
        po = evaluate_matches(
            game, evaluator, table, search_cfg, False, match_games, rng, workers=workers
        )
        for attr in ("win", "draw", "loss"):
            setattr(with_search, attr, getattr(with_search, attr) + getattr(ws, attr))
            setattr(policy_only, attr, getattr(policy_only, attr) + getattr(po, attr))
        scan = value_error_scan(game, evaluator, states, table)
        scan_means.append(scan.mean_error)
        scan_fraction_list.append(scan.fractions)
        if hist_acc is None:
            hist_acc = np.array(scan.histogram["counts"], dtype=np.int64)
            signed_acc = np.array(scan.signed_histogram["counts"], dtype=np.int64)
            hist_edges = scan.histogram["edges"]
            signed_edges = scan.signed_histogram["edges"]
        else:
            hist_acc += scan.histogram["counts"]
            signed_acc += scan.signed_histogram["counts"]
        mis_mean, _ = mean_misalignment(game, evaluator, states, search_cfg)
        miss_means.append(mis_mean)
        buckets, zero_mean = generalization_curve(
            dict(zip(scan.keys, scan.errors)), visits
        )
        for i, b in enumerate(buckets):
            if b["mean_error"] is not None:
                bucket_acc[i].append(b["mean_error"])
        if zero_mean is not None:
            zero_means.append(zero_mean)

    agg_buckets = []
    for (lo, hi), means in zip(VISIT_BUCKETS, bucket_acc):
        agg_buckets.append(
            {
                "label": _bucket_label(lo, hi),
                "lo": lo,
                "hi": hi,
                "count": len(means),
                "mean_error": float(np.mean(means)) if means else None,
            }
        )
    fractions = {
        k: float(np.mean([f[k] for f in scan_fraction_list]))
        for k in scan_fraction_list[0]
    }
    return EvalReport(
        game=game.name,
        label=label,
        seeds=[s for s, _, _ in runs],
        match_with_search=asdict(with_search),
        match_policy_only=asdict(policy_only),
        mean_value_error=float(np.mean(scan_means)),
        error_fractions=fractions,
        value_histogram={"edges": hist_edges, "counts": hist_acc.tolist()},
        signed_histogram={"edges": signed_edges, "counts": signed_acc.tolist()},
        misalignment_mean=float(np.mean(miss_means)),
        generalization_buckets=agg_buckets,
        generalization_error=float(np.mean(zero_means)) if zero_means else None,
        states_scanned=len(states),
        seeds_aggregated=len(runs),
    )


_COMPARED_METRICS = (
    ("misalignment_mean", "lower"),
    ("mean_value_error", "lower"),
    ("generalization_error", "lower"),
)


def compare_reports(reports: list[EvalReport]) -> dict:
    """Per-metric deltas and percentage reductions relative to the first
    report (the baseline)."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    games = {r.game for r in reports}
    if len(games) != 1:
        raise ValueError(f"reports span multiple games: {sorted(games)}")
    base = reports[0]
    rows = []
    for name, _direction in _COMPARED_METRICS:
        base_val = getattr(base, name)
        for other in reports[1:]:
            val = getattr(other, name)
            if base_val is None or val is None:
                continue
            delta = val - base_val
            pct = (100.0 * (base_val - val) / base_val) if base_val else 0.0
            rows.append(
                {
                    "metric": name,
                    "baseline": base.label,
                    "candidate": other.label,
                    "baseline_value": base_val,
                    "candidate_value": val,
                    "delta": delta,
                    "pct_reduction": pct,
                }
            )
    for key, label in (("match_with_search", "non_loss_with_search"),
                       ("match_policy_only", "non_loss_policy_only")):
        base_scores = MatchScores(**getattr(base, key))
        for other in reports[1:]:
            other_scores = MatchScores(**getattr(other, key))
            rows.append(
                {
                    "metric": label,
                    "baseline": base.label,
                    "candidate": other.label,
                    "baseline_value": base_scores.non_loss_rate(),
                    "candidate_value": other_scores.non_loss_rate(),
                    "delta": other_scores.non_loss_rate() - base_scores.non_loss_rate(),
                    "pct_reduction": None,
                }
            )
    return {"game": base.game, "baseline": base.label, "rows": rows}
