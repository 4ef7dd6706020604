"""Evaluation pipeline: matches, error scans, misalignment, detection."""

import numpy as np
import pytest

from azlab.games import State
from azlab.mcts import OracleEvaluator, SearchConfig
from azlab.net import NetEvaluator, init_params, net_config_for
from azlab.oracle import CoverageError, enumerate_states
from azlab.analysis import (
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
    reverify_detections,
    value_error_scan,
)

EVAL_CFG = SearchConfig(num_simulations=25, temperature_drop_ply=5)


class ConstantEvaluator:
    """Uniform priors, constant value everywhere."""

    def __init__(self, game, value):
        self.game = game
        self.value = value

    def evaluate(self, state):
        legal = self.game.legal_actions(state)
        return legal / legal.sum(), self.value

    def value_of(self, state):
        return self.value

    def value_many(self, states):
        return np.full(len(states), self.value)


@pytest.fixture(scope="module")
def nonterminal(ttt3):
    return [s for s in enumerate_states(ttt3) if ttt3.terminal_value(s) is None]


@pytest.fixture(scope="module")
def random_net(ttt3):
    return NetEvaluator(ttt3, init_params(net_config_for(ttt3, seed=33)))


class TestEvaluateMatches:
    def test_oracle_stub_never_loses(self, ttt3, ttt3_table):
        stub = OracleEvaluator(ttt3, ttt3_table)
        scores = evaluate_matches(
            ttt3, stub, ttt3_table, EVAL_CFG, True, 50, np.random.default_rng(0)
        )
        assert scores.games == 50
        assert scores.draw == 50  # solved game: perfect play always draws

    def test_random_policy_mostly_loses(self, ttt3, ttt3_table):
        uniform = ConstantEvaluator(ttt3, 0.0)
        scores = evaluate_matches(
            ttt3, uniform, ttt3_table, EVAL_CFG, False, 500, np.random.default_rng(1)
        )
        assert scores.loss / scores.games > 0.8

    def test_seats_alternate(self, ttt3, ttt3_table):
        # Policy-only evaluation consults the agent exactly on its own
        # turns: even plies as X, odd plies as O. Alternating seats over
        # two games must therefore produce both parities.
        plies = []

        class Spy:
            def __init__(self, game):
                self.game = game

            def evaluate(self, state):
                plies.append(state.move_count)
                legal = self.game.legal_actions(state)
                return legal / legal.sum(), 0.0

        scores = evaluate_matches(
            ttt3, Spy(ttt3), ttt3_table, EVAL_CFG, False, 2, np.random.default_rng(2)
        )
        assert scores.games == 2
        assert {p % 2 for p in plies} == {0, 1}

    def test_deterministic_given_seed(self, ttt3, ttt3_table, random_net):
        a = evaluate_matches(ttt3, random_net, ttt3_table, EVAL_CFG, True, 30, np.random.default_rng(9))
        b = evaluate_matches(ttt3, random_net, ttt3_table, EVAL_CFG, True, 30, np.random.default_rng(9))
        assert (a.win, a.draw, a.loss) == (b.win, b.draw, b.loss)

    def test_vis_selection_at_eval_flag(self, ttt3, ttt3_table, random_net):
        scores = evaluate_matches(
            ttt3, random_net, ttt3_table, EVAL_CFG, True, 10,
            np.random.default_rng(3), vis_epsilon=0.5,
        )
        assert scores.games == 10


class TestValueErrorScan:
    def test_perfect_network_zero_error(self, ttt3, ttt3_table, nonterminal):
        stub = OracleEvaluator(ttt3, ttt3_table)
        scan = value_error_scan(ttt3, stub, nonterminal, ttt3_table)
        assert scan.mean_error == 0.0
        assert all(f == 0.0 for f in scan.fractions.values())

    def test_boundary_error_exactly_one_excluded(self, ttt3, ttt3_table, nonterminal):
        # v = 0 on decisive states gives e = 1.0, excluded by the strict >.
        zero = ConstantEvaluator(ttt3, 0.0)
        scan = value_error_scan(ttt3, zero, nonterminal, ttt3_table)
        assert scan.errors.max() == 1.0
        assert scan.fractions[">1.0"] == 0.0

    def test_confident_wrong_prediction_counts_everywhere(self, ttt3, ttt3_table, nonterminal):
        minus_one = ConstantEvaluator(ttt3, -1.0)
        scan = value_error_scan(ttt3, minus_one, nonterminal, ttt3_table)
        zs = np.array([ttt3_table.value_of(ttt3.key(s)) for s in nonterminal])
        share_won = float((zs == 1).mean())
        for name in (">1.0", ">3.0", ">3.5"):
            assert scan.fractions[name] == pytest.approx(share_won)
        assert scan.errors.max() == 4.0

    def test_histogram_conservation(self, ttt3, ttt3_table, nonterminal, random_net):
        scan = value_error_scan(ttt3, random_net, nonterminal, ttt3_table)
        assert sum(scan.histogram["counts"]) == len(nonterminal)
        assert sum(scan.signed_histogram["counts"]) == len(nonterminal)

    def test_uncovered_state_raises(self, ttt3, ttt3_table, random_net):
        ghost = State(p1=0b111, p2=0, player=0, move_count=3)  # unreachable
        with pytest.raises(CoverageError):
            value_error_scan(ttt3, random_net, [ghost], ttt3_table)


class TestMisalignment:
    def test_kl_identity(self):
        p = np.array([0.2, 0.5, 0.3])
        assert kl_divergence(p, p) == 0.0

    def test_kl_hand_value(self):
        assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(
            np.log(2), abs=1e-4
        )

    def test_kl_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            assert kl_divergence(p, q) >= 0.0
            if not np.allclose(p, q):
                assert kl_divergence(p, q) > 0.0

    def test_pipeline_finite_positive(self, ttt3, nonterminal, random_net):
        rng = np.random.default_rng(5)
        states = [nonterminal[i] for i in rng.choice(len(nonterminal), 20, replace=False)]
        mean, per_state = mean_misalignment(ttt3, random_net, states, EVAL_CFG)
        assert np.isfinite(per_state).all() and (per_state >= 0).all()
        assert mean > 0.0

    def test_raw_policy_variant(self, ttt3, random_net):
        state = ttt3.initial_state()
        m = misalignment(ttt3, random_net, state, EVAL_CFG, use_search=False)
        assert np.isfinite(m) and m >= 0.0


class TestGeneralizationCurve:
    def test_flat_when_errors_equal(self):
        errors = {k: 0.5 for k in range(50)}
        visits = {k: k * 25 for k in range(50)}  # spans several buckets
        buckets, zero_mean = generalization_curve(errors, visits)
        present = [b for b in buckets if b["count"]]
        assert len(present) >= 3
        assert all(b["mean_error"] == pytest.approx(0.5) for b in present)
        assert zero_mean == pytest.approx(0.5)

    def test_empty_zero_bucket_flagged(self):
        errors = {1: 0.3, 2: 0.7}
        visits = {1: 5, 2: 2000}
        buckets, zero_mean = generalization_curve(errors, visits)
        assert buckets[0]["count"] == 0 and buckets[0]["mean_error"] is None
        assert zero_mean is None

    def test_bucket_boundaries(self):
        errors = {k: 1.0 for k in range(8)}
        visits = dict(zip(range(8), [0, 1, 10, 11, 100, 101, 1000, 1001]))
        buckets, _ = generalization_curve(errors, visits)
        assert [b["count"] for b in buckets] == [1, 2, 2, 2, 1]


class TestAdversarialDetect:
    def test_perfect_network_detects_nothing(self, ttt3, ttt3_table):
        stub = OracleEvaluator(ttt3, ttt3_table)
        found = adversarial_detect(
            ttt3, stub, EVAL_CFG, 5, np.random.default_rng(6), empties_budget=9
        )
        assert len(found) == 0

    def test_constant_zero_boundary_not_detected(self, ttt3, ttt3_table):
        # e = z^2 <= 1.0 everywhere, and the threshold is strict.
        zero = ConstantEvaluator(ttt3, 0.0)
        found = adversarial_detect(
            ttt3, zero, EVAL_CFG, 10, np.random.default_rng(7), empties_budget=9
        )
        assert len(found) == 0

    def test_confidently_wrong_network_detected(self, ttt3, ttt3_table):
        minus_one = ConstantEvaluator(ttt3, -1.0)
        found = adversarial_detect(
            ttt3, minus_one, EVAL_CFG, 20, np.random.default_rng(8), empties_budget=9
        )
        assert len(found) > 0
        for det in found.states.values():
            assert det.oracle_value == 1 and det.error == 4.0
        assert reverify_detections(ttt3, found)

    def test_budget_skip_counter(self, connect4, ttt3_table):
        zero = ConstantEvaluator(connect4, 0.0)
        found = adversarial_detect(
            connect4,
            zero,
            SearchConfig(num_simulations=4, temperature_drop_ply=0),
            1,
            np.random.default_rng(9),
            empties_budget=42,
            node_budget=50,
        )
        assert found.skipped_budget > 0

    def test_json_round_trip(self, ttt3, ttt3_table):
        minus_one = ConstantEvaluator(ttt3, -1.0)
        found = adversarial_detect(
            ttt3, minus_one, EVAL_CFG, 5, np.random.default_rng(10), empties_budget=9
        )
        again = AdversarialStateSet.from_json(found.to_json())
        assert again.states.keys() == found.states.keys()
        assert again.mean_error() == found.mean_error()


class TestReports:
    def _tiny_report(self, ttt3, ttt3_table, nonterminal, evaluator, label, seed=0):
        states = nonterminal[:120]
        visits = {ttt3.key(s): (i % 7) * 40 for i, s in enumerate(states)}
        return assemble_report(
            ttt3, label, [(0, evaluator, visits)], ttt3_table, states, EVAL_CFG, 6, seed=seed
        )

    def test_round_trip_and_determinism(self, ttt3, ttt3_table, nonterminal, random_net):
        r1 = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        r2 = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        assert r1.to_json() == r2.to_json()
        back = EvalReport.from_json(r1.to_json())
        assert back.mean_value_error == r1.mean_value_error
        assert back.match_with_search == r1.match_with_search

    def test_match_counts_sum(self, ttt3, ttt3_table, nonterminal, random_net):
        report = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        scores = MatchScores(**report.match_with_search)
        assert scores.games == 6
        assert report.states_scanned == 120

    def test_compare_identical_reports(self, ttt3, ttt3_table, nonterminal, random_net):
        r = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        import copy

        other = copy.deepcopy(r)
        other.label = "twin"
        cmp = compare_reports([r, other])
        for row in cmp["rows"]:
            if row["delta"] is not None:
                assert row["delta"] == pytest.approx(0.0)

    def test_compare_hand_built_misalignment_halved(self, ttt3, ttt3_table, nonterminal, random_net):
        base = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        import copy

        better = copy.deepcopy(base)
        better.label = "visa_vis"
        base.misalignment_mean = 1.0
        better.misalignment_mean = 0.5
        cmp = compare_reports([base, better])
        row = next(r for r in cmp["rows"] if r["metric"] == "misalignment_mean")
        assert row["pct_reduction"] == pytest.approx(50.0)

    def test_compare_rejects_bad_input(self, ttt3, ttt3_table, nonterminal, random_net):
        r = self._tiny_report(ttt3, ttt3_table, nonterminal, random_net, "az")
        with pytest.raises(ValueError):
            compare_reports([r])
        import copy

        other = copy.deepcopy(r)
        other.game = "connect4"
        with pytest.raises(ValueError):
            compare_reports([r, other])
