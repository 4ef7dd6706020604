"""Acceptance suite: the ten end-to-end criteria, one test each.

Each test prints one ``ACCEPTANCE CRITERION n: PASS/FAIL`` line (visible
with ``pytest -s``) and the full tally is written to
``acceptance_results.txt`` next to this file's repository root.

Training artifacts are expensive (12 ttt3 models and 2 ttt4 models) and
are cached under ``runs/acceptance/`` keyed by a hash of the exact
training config; delete that directory to retrain from scratch. Fresh
builds take roughly two hours on two cores; cached reruns take minutes.
Training subprocesses go through, and therefore exercise, the real CLI.
"""

import hashlib
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import pytest

from azlab.analysis import (
    adversarial_detect,
    evaluate_matches,
    generalization_curve,
    kl_divergence,
    mean_misalignment,
    reverify_detections,
    value_error_scan,
)
from azlab.cli import config_to_text
from azlab.games import make_game
from azlab.mcts import OracleEvaluator, SearchConfig, run_search, search_policy
from azlab.net import (
    NetEvaluator,
    init_params,
    load_checkpoint,
    loss_and_grads,
    net_config_for,
    save_checkpoint,
)
from azlab.oracle import enumerate_states, oracle_opponent
from azlab.training import TrainConfig, desk_config, load_visits, train, visa_augment

pytestmark = pytest.mark.acceptance

REPO_ROOT = Path(__file__).resolve().parent.parent
ACCEPT_ROOT = REPO_ROOT / "runs" / "acceptance"
RESULTS_PATH = REPO_ROOT / "acceptance_results.txt"

SEEDS = (0, 1, 2)
TTT3_MODES = ("alphazero", "visa_vis", "vis_only", "visa_only")

TTT4_DETECTOR_GAMES = 10_000
TTT4_EMPTIES_BUDGET = 8

RESULTS: list[str] = []


def _record(criterion: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE CRITERION {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print("\n" + line)
    assert passed, line


@pytest.fixture(scope="session", autouse=True)
def _write_results():
    yield
    RESULTS_PATH.write_text("\n".join(RESULTS) + "\n")
    print(f"\nacceptance tally written to {RESULTS_PATH}")


def ttt3_recipe(mode: str, seed: int) -> TrainConfig:
    return desk_config("ttt3", mode=mode, seed=seed)


def ttt4_recipe(mode: str, seed: int) -> TrainConfig:
    return desk_config("ttt4", mode=mode, seed=seed)


def _cfg_hash(cfg: TrainConfig) -> str:
    return hashlib.sha1(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:10]


def _run_dir(cfg: TrainConfig) -> Path:
    return ACCEPT_ROOT / f"{cfg.game}-{cfg.mode}-s{cfg.seed}-{_cfg_hash(cfg)}"


def _final_checkpoint(cfg: TrainConfig, out_dir: Path) -> Path:
    return out_dir / f"checkpoint_{cfg.total_games:07d}.ckpt"


def _ensure_runs(cfgs: list[TrainConfig], parallel: int = 2) -> None:
    """Train any missing runs through the CLI, at most ``parallel`` at once."""
    pending = [c for c in cfgs if not _final_checkpoint(c, _run_dir(c)).exists()]
    if not pending:
        return
    env = dict(os.environ)
    env.update(OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    queue = list(pending)
    active: list[tuple[subprocess.Popen, TrainConfig, Path]] = []
    while queue or active:
        while queue and len(active) < parallel:
            cfg = queue.pop(0)
            out = _run_dir(cfg)
            out.mkdir(parents=True, exist_ok=True)
            ini = out / "train_config.ini"
            ini.write_text(config_to_text(cfg))
            log = open(out / "train_stdout.log", "w")
            proc = subprocess.Popen(
                [sys.executable, "-m", "azlab.cli", "train", "--config", str(ini), "--out", str(out)],
                stdout=log,
                stderr=subprocess.STDOUT,
                env=env,
                cwd=REPO_ROOT,
            )
            print(f"training {out.name} (pid {proc.pid})", flush=True)
            active.append((proc, cfg, out))
        time.sleep(5)
        still = []
        for proc, cfg, out in active:
            if proc.poll() is None:
                still.append((proc, cfg, out))
            elif proc.returncode != 0:
                raise RuntimeError(
                    f"training subprocess for {out.name} failed "
                    f"(rc {proc.returncode}); see {out / 'train_stdout.log'}"
                )
            elif not _final_checkpoint(cfg, out).exists():
                raise RuntimeError(f"training finished but checkpoint missing in {out}")
        active = still


class RunHandle:
    def __init__(self, game, cfg: TrainConfig, out_dir: Path):
        self.game = game
        self.cfg = cfg
        self.dir = out_dir
        self._evaluator = None
        self._visits = None

    @property
    def evaluator(self) -> NetEvaluator:
        if self._evaluator is None:
            params, _ = load_checkpoint(_final_checkpoint(self.cfg, self.dir))
            self._evaluator = NetEvaluator(self.game, params)
        return self._evaluator

    @property
    def visits(self) -> dict:
        if self._visits is None:
            self._visits = load_visits(self.dir / "visits.bin")
        return self._visits


@pytest.fixture(scope="session")
def nonterminal(ttt3):
    return [s for s in enumerate_states(ttt3) if ttt3.terminal_value(s) is None]


@pytest.fixture(scope="session")
def ttt3_runs(ttt3) -> dict:
    cfgs = [ttt3_recipe(mode, seed) for mode in TTT3_MODES for seed in SEEDS]
    _ensure_runs(cfgs)
    return {(c.mode, c.seed): RunHandle(ttt3, c, _run_dir(c)) for c in cfgs}


@pytest.fixture(scope="session")
def ttt4_runs(ttt4) -> dict:
    cfgs = [ttt4_recipe(mode, 0) for mode in ("alphazero", "visa_vis")]
    _ensure_runs(cfgs)
    return {c.mode: RunHandle(ttt4, c, _run_dir(c)) for c in cfgs}


def _cached(path: Path, compute):
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    path.write_text(json.dumps(value))
    return value


def _ttt3_eval(handle: RunHandle, table, states, n_games=1000) -> dict:
    """Match scores, misalignment, value scan, zero-visit error (cached)."""

    def compute():
        game = handle.game
        cfg = handle.cfg
        rng = np.random.default_rng(1000 + handle.cfg.seed)
        ws = evaluate_matches(game, handle.evaluator, table, cfg.search, True, n_games, rng)
        po = evaluate_matches(game, handle.evaluator, table, cfg.search, False, n_games, rng)
        scan = value_error_scan(game, handle.evaluator, states, table)
        mis, _ = mean_misalignment(game, handle.evaluator, states, cfg.search)
        buckets, zero_error = generalization_curve(
            dict(zip(scan.keys, scan.errors)), handle.visits
        )
        return {
            "search": {"win": ws.win, "draw": ws.draw, "loss": ws.loss},
            "policy": {"win": po.win, "draw": po.draw, "loss": po.loss},
            "mean_value_error": scan.mean_error,
            "fractions": scan.fractions,
            "misalignment": mis,
            "zero_visit_error": zero_error,
            "buckets": buckets,
        }

    return _cached(handle.dir / "accept_eval.json", compute)


def _mode_evals(ttt3_runs, table, states, mode: str) -> list[dict]:
    return [_ttt3_eval(ttt3_runs[(mode, s)], table, states) for s in SEEDS]


def _pooled_rate(evals: list[dict], key: str) -> tuple[int, int]:
    losses = sum(e[key]["loss"] for e in evals)
    games = sum(e[key]["win"] + e[key]["draw"] + e[key]["loss"] for e in evals)
    return losses, games


class TestCriterion1Oracle:
    def test_oracle_correctness(self, ttt3, ttt3_table):
        t0 = time.time()
        root_value = ttt3_table.entries[ttt3.key(ttt3.initial_state())].value
        rng = np.random.default_rng(0)
        draws = 0
        for _ in range(1000):
            s = ttt3.initial_state()
            while ttt3.terminal_value(s) is None:
                s = ttt3.apply(s, oracle_opponent(ttt3, s, ttt3_table, rng))
            draws += ttt3.terminal_value(s) == 0
        elapsed = time.time() - t0
        ok = root_value == 0 and draws == 1000 and elapsed < 60
        _record(
            1,
            ok,
            f"ttt3 root value {root_value} (draw), oracle-vs-oracle draws "
            f"{draws}/1000, {elapsed:.1f}s (< 60s)",
        )


class TestCriterion2Search:
    def test_search_correctness_isolated_from_learning(self, ttt3, ttt3_table, nonterminal):
        t0 = time.time()
        rng = np.random.default_rng(2)
        stub = OracleEvaluator(ttt3, ttt3_table)
        cfg = SearchConfig(num_simulations=400, c_puct=2.0)
        picks = rng.choice(len(nonterminal), size=500, replace=False)
        hits = 0
        for i in picks:
            state = nonterminal[i]
            node = run_search(ttt3, state, stub, cfg)
            best = int(np.argmax(node.N))
            hits += best in ttt3_table.entries[ttt3.key(state)].optimal_actions
        rate = hits / 500
        elapsed = time.time() - t0
        ok = rate >= 0.99 and elapsed < 300
        _record(
            2,
            ok,
            f"oracle-stub 400-sim search optimal in {hits}/500 positions "
            f"({rate:.1%}), {elapsed:.1f}s (< 300s)",
        )


class TestCriterion3Strength:
    def test_az_with_search_strength(self, ttt3_runs, ttt3_table, nonterminal):
        evals = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "alphazero")
        losses, games = _pooled_rate(evals, "search")
        per_seed = [1 - e["search"]["loss"] / 1000 for e in evals]
        rate = 1 - losses / games
        _record(
            3,
            rate >= 0.99,
            f"AZ with search non-loss {rate:.3f} over {games} games "
            f"(per-seed {['%.3f' % r for r in per_seed]})",
        )


class TestCriterion4SearchWithheld:
    def test_policy_only_loses_strictly_more(self, ttt3_runs, ttt3_table, nonterminal):
        evals = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "alphazero")
        search_losses, games = _pooled_rate(evals, "search")
        policy_losses, _ = _pooled_rate(evals, "policy")
        _record(
            4,
            policy_losses > search_losses,
            f"losses with search {search_losses}/{games} vs policy-only "
            f"{policy_losses}/{games} (strictly more without search)",
        )


class TestCriterion5VisaVisPolicy:
    def test_policy_only_gap(self, ttt3_runs, ttt3_table, nonterminal):
        az = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "alphazero")
        vv = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "visa_vis")
        az_losses, az_games = _pooled_rate(az, "policy")
        vv_losses, vv_games = _pooled_rate(vv, "policy")
        az_rate = 1 - az_losses / az_games
        vv_rate = 1 - vv_losses / vv_games
        gap = vv_rate - az_rate
        _record(
            5,
            gap >= 0.10,
            f"policy-only non-loss: VISA-VIS {vv_rate:.3f} vs AZ {az_rate:.3f} "
            f"(gap {gap * 100:+.1f}pp, need >= +10pp)",
        )


class TestCriterion6Misalignment:
    def test_misalignment_reduction(self, ttt3_runs, ttt3_table, nonterminal):
        az = np.mean([e["misalignment"] for e in _mode_evals(ttt3_runs, ttt3_table, nonterminal, "alphazero")])
        vv = np.mean([e["misalignment"] for e in _mode_evals(ttt3_runs, ttt3_table, nonterminal, "visa_vis")])
        reduction = 1 - vv / az
        _record(
            6,
            reduction >= 0.30,
            f"mean KL(pi_p||pi_v) over all non-terminal states: AZ {az:.3f} vs "
            f"VISA-VIS {vv:.3f} ({reduction:.0%} reduction, need >= 30%)",
        )


class TestCriterion7ValueGeneralization:
    def test_zero_visit_error_and_high_error_fraction(self, ttt3_runs, ttt3_table, nonterminal):
        az = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "alphazero")
        vv = _mode_evals(ttt3_runs, ttt3_table, nonterminal, "visa_vis")
        az_zero = np.mean([e["zero_visit_error"] for e in az])
        vv_zero = np.mean([e["zero_visit_error"] for e in vv])
        az_frac = np.mean([e["fractions"][">3.0"] for e in az])
        vv_frac = np.mean([e["fractions"][">3.0"] for e in vv])
        ok = vv_zero <= 0.7 * az_zero and vv_frac < az_frac
        _record(
            7,
            ok,
            f"zero-visit mean error: VISA-VIS {vv_zero:.3f} vs AZ {az_zero:.3f} "
            f"(ratio {vv_zero / az_zero:.2f}, need <= 0.70); fraction e>3.0: "
            f"{vv_frac:.4f} vs {az_frac:.4f} (strictly lower)",
        )


class TestCriterion8Ablations:
    def test_ablation_ordering(self, ttt3_runs, ttt3_table, nonterminal):
        means = {}
        for mode in TTT3_MODES:
            evals = _mode_evals(ttt3_runs, ttt3_table, nonterminal, mode)
            means[mode] = {
                "verr": float(np.mean([e["mean_value_error"] for e in evals])),
                "mis": float(np.mean([e["misalignment"] for e in evals])),
            }
        visa_helps = means["visa_only"]["verr"] < means["alphazero"]["verr"]
        vis_helps = means["vis_only"]["mis"] < means["alphazero"]["mis"]
        combined_best = (
            means["visa_vis"]["verr"] <= means["visa_only"]["verr"]
            and means["visa_vis"]["verr"] <= means["vis_only"]["verr"]
            and means["visa_vis"]["mis"] <= means["visa_only"]["mis"]
            and means["visa_vis"]["mis"] <= means["vis_only"]["mis"]
        )
        detail = ", ".join(
            f"{m}: verr {v['verr']:.3f} mis {v['mis']:.3f}" for m, v in means.items()
        )
        _record(8, visa_helps and vis_helps and combined_best, detail)


class TestCriterion9Adversarial:
    def test_detector_on_ttt4(self, ttt4, ttt4_runs):
        az = ttt4_runs["alphazero"]
        vv = ttt4_runs["visa_vis"]

        def compute():
            rng = np.random.default_rng(9)
            cache: dict = {}
            found = adversarial_detect(
                ttt4,
                az.evaluator,
                az.cfg.search,
                TTT4_DETECTOR_GAMES,
                rng,
                empties_budget=TTT4_EMPTIES_BUDGET,
                threshold=1.0,
                endgame_cache=cache,
            )
            assert reverify_detections(ttt4, found, endgame_cache=cache)
            states = [ttt4.state_from_key(k) for k in found.states]
            vv_values = vv.evaluator.value_many(states)
            oracle_vals = np.array([d.oracle_value for d in found.states.values()])
            return {
                "unique_states": len(found),
                "skipped": found.skipped_budget,
                "az_mean_error": found.mean_error(),
                "vv_mean_error": float(np.mean((vv_values - oracle_vals) ** 2)),
            }

        result = _cached(az.dir / "accept_detector.json", compute)
        ok = result["unique_states"] >= 100 and result["vv_mean_error"] < result["az_mean_error"]
        _record(
            9,
            ok,
            f"detector found {result['unique_states']} unique ttt4 endgame states "
            f"(e > 1.0) over {TTT4_DETECTOR_GAMES} games; mean error on that set: "
            f"AZ {result['az_mean_error']:.3f} vs VISA-VIS {result['vv_mean_error']:.3f}",
        )


class TestCriterion10Properties:
    """Always-on property bundle (< 5 min total)."""

    def test_property_suites(self, ttt3, ttt3_table, nonterminal, tmp_path):
        t0 = time.time()
        checks = []

        # Gradients vs central finite differences (float64, 1e-4 relative).
        rng = np.random.default_rng(10)
        toy = net_config_for(ttt3, width=6, depth=1, seed=3)
        params = init_params(toy, dtype=np.float64)
        feats = rng.normal(size=(4, toy.input_dim))
        masks = np.ones((4, toy.action_count), dtype=bool)
        pis = rng.dirichlet(np.ones(toy.action_count), size=4)
        zs = rng.choice([-1.0, 0.0, 1.0], size=4)
        _, grads = loss_and_grads(params, feats, pis, zs, masks, 1e-4)
        worst = 0.0
        h = 1e-6
        for name, w in params.items():
            flat = w.reshape(-1) if w.ndim else w.reshape(1)
            g = grads[name].reshape(-1) if grads[name].ndim else grads[name].reshape(1)
            for j in rng.choice(flat.size, size=min(flat.size, 6), replace=False):
                orig = flat[j]
                flat[j] = orig + h
                up = loss_and_grads(params, feats, pis, zs, masks, 1e-4)[0]["loss"]
                flat[j] = orig - h
                dn = loss_and_grads(params, feats, pis, zs, masks, 1e-4)[0]["loss"]
                flat[j] = orig
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(g[j] - fd) / max(abs(fd), abs(g[j]), 1e-8))
        checks.append(("gradient-fd", worst < 1e-4))

        # Masked softmax: exact zeros off-mask, unit mass on-mask.
        from azlab.net import forward

        p64 = init_params(net_config_for(ttt3, width=16, depth=1, seed=4), dtype=np.float64)
        ok = True
        for _ in range(50):
            x = rng.normal(size=27)
            mask = np.zeros(9, dtype=bool)
            mask[rng.choice(9, size=rng.integers(1, 10), replace=False)] = True
            pol, val = forward(p64, x, mask)
            ok &= abs(pol[mask].sum() - 1.0) < 1e-9 and (pol[~mask] == 0).all()
            ok &= -1.0 <= val <= 1.0
        checks.append(("masked-softmax", ok))

        # MCTS visit conservation and Q bounds.
        net = NetEvaluator(ttt3, init_params(net_config_for(ttt3, seed=5)))
        node = run_search(ttt3, ttt3.initial_state(), net, SearchConfig(num_simulations=200))
        q_ok = True
        stack = [node]
        while stack:
            n = stack.pop()
            if not n.expanded:
                continue
            q = n.q_values()
            q_ok &= bool((q >= -1 - 1e-12).all() and (q <= 1 + 1e-12).all())
            q_ok &= int(n.N.sum()) == n.total
            stack.extend(c for c in n.children if c is not None)
        checks.append(("mcts-conservation-q", q_ok and int(node.N.sum()) == 200))

        # Symmetry group closure/involution and action-transform commutativity.
        sym_ok = True
        for game_name in ("ttt3", "ttt4", "connect4"):
            game = make_game(game_name)
            rot_state = None
            for _ in range(333):
                from conftest import random_nonterminal_state

                s = random_nonterminal_state(game, rng)
                mask = game.legal_actions(s)
                a = int(np.flatnonzero(mask)[rng.integers(mask.sum())])
                ops = game.symmetry_ops()
                op = ops[rng.integers(len(ops))]
                lhs = game.apply(game.transform(s, op), game.transform_action(a, op))
                rhs = game.transform(game.apply(s, a), op)
                sym_ok &= lhs == rhs
            inv = game.op("invert")
            s0 = game.initial_state()
            sym_ok &= game.transform(game.transform(s0, inv), inv) == s0
            if game_name != "connect4":
                r = game.op("rot90")
                s = s0
                for _ in range(4):
                    s = game.transform(s, r)
                sym_ok &= s == s0
        checks.append(("symmetry-group", sym_ok))

        # Oracle minimax consistency across sampled entries (>= 10k samples).
        states = enumerate_states(ttt3)
        mini_ok = True
        for i in rng.choice(len(states), size=10_000, replace=True):
            s = states[i]
            entry = ttt3_table.entries[ttt3.key(s)]
            if ttt3.terminal_value(s) is not None:
                mini_ok &= entry.value == ttt3.terminal_value(s) and entry.optimal_actions == ()
                continue
            mask = ttt3.legal_actions(s)
            child_vals = {
                a: -ttt3_table.entries[ttt3.key(ttt3.apply(s, int(a)))].value
                for a in np.flatnonzero(mask)
            }
            best = max(child_vals.values())
            mini_ok &= entry.value == best
            mini_ok &= set(entry.optimal_actions) == {int(a) for a, v in child_vals.items() if v == best}
        checks.append(("oracle-minimax-consistency", mini_ok))

        # VIS epsilon degenerate equivalence (1 -> vanilla; 0 -> value branch).
        tiny = desk_config(
            "ttt3", seed=77, total_games=20, checkpoint_every=20,
            train_steps_per_game=1, buffer_capacity=256,
        )
        tiny = replace(
            tiny,
            net=net_config_for(ttt3, width=8, depth=1),
            search=SearchConfig(num_simulations=4, temperature_drop_ply=3),
        )
        az_res = train(replace(tiny, mode="alphazero"), tmp_path / "az")
        vis_res = train(replace(tiny, mode="vis_only", vis_epsilon=1.0), tmp_path / "vis")
        eq = az_res.checkpoints[-1].read_bytes() == vis_res.checkpoints[-1].read_bytes()
        from azlab.training import play_episode

        vis0 = replace(tiny, mode="vis_only", vis_epsilon=0.0)
        ep = play_episode(ttt3, net, vis0, np.random.default_rng(0))
        checks.append(("vis-degenerate", eq and all(s.branch == "value" for s in ep.steps)))

        # VISA z-inversion bookkeeping.
        state = ttt3.apply(ttt3.apply(ttt3.initial_state(), 0), 3)
        inverted = ttt3.transform(state, ttt3.op("invert"))

        class Forcing:
            def __init__(self, game, target_key):
                self.game, self.target = game, target_key

            def value_of(self, s):
                return -0.9 if self.game.key(s) == self.target else 0.0

            def value_many(self, ss):
                return np.array([self.value_of(s) for s in ss])

        entries, op_name = visa_augment(
            ttt3, state, np.full(9, 1 / 9), 1.0, Forcing(ttt3, ttt3.key(inverted))
        )
        checks.append(
            ("visa-z-inversion", op_name == "invert" and entries[0].target_z == 1.0 and entries[1].target_z == -1.0)
        )

        # Checkpoint round-trip bit-exactness.
        ck_cfg = net_config_for(ttt3, width=12, depth=2, seed=6)
        ck_params = init_params(ck_cfg)
        path = tmp_path / "rt.ckpt"
        save_checkpoint(path, ck_params, ck_cfg)
        loaded, _ = load_checkpoint(path)
        checks.append(
            ("checkpoint-roundtrip", all(loaded[k].tobytes() == ck_params[k].tobytes() for k in ck_params))
        )

        # KL properties.
        kl_ok = True
        for _ in range(200):
            p = rng.dirichlet(np.ones(6))
            q = rng.dirichlet(np.ones(6))
            kl_ok &= kl_divergence(p, q) >= 0
            kl_ok &= kl_divergence(p, p) == 0.0
            if not np.allclose(p, q):
                kl_ok &= kl_divergence(p, q) > 0
        checks.append(("kl-properties", kl_ok))

        elapsed = time.time() - t0
        failed = [name for name, ok in checks if not ok]
        _record(
            10,
            not failed and elapsed < 300,
            f"{len(checks)} property suites in {elapsed:.0f}s (< 300s)"
            + (f"; FAILED: {failed}" if failed else ""),
        )
