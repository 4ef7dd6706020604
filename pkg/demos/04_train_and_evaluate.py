"""Short self-play training run plus the full evaluation pipeline.

Trains a deliberately small AlphaZero for 1,500 games on 3x3 tic-tac-toe
(about a minute), then measures everything the analysis stack offers:
match scores against the exact oracle (with and without search), the
value-error scan over every non-terminal state, policy-value
misalignment, and the error-vs-visitation curve. Artifacts (report JSON,
CSVs, SVGs) land in demo_out/.

Run: python demos/04_train_and_evaluate.py
"""

from pathlib import Path

import numpy as np

from azlab import make_game, solve
from azlab.analysis import assemble_report, compare_reports
from azlab.net import NetEvaluator
from azlab.oracle import enumerate_states
from azlab.reports import comparison_text, write_report_csvs, write_report_svgs
from azlab.training import desk_config, train

out = Path("demo_out")
ttt = make_game("ttt3")
table = solve(ttt)
states = [s for s in enumerate_states(ttt) if ttt.terminal_value(s) is None]

reports = []
for mode in ("alphazero", "visa_vis"):
    cfg = desk_config("ttt3", mode=mode, seed=0, total_games=1500, checkpoint_every=500)
    result = train(cfg, out / f"run-{mode}")
    print(f"{mode}: trained {cfg.total_games} games in {result.elapsed:.0f}s, "
          f"{len(result.visits)} unique states visited")
    report = assemble_report(
        ttt,
        mode,
        [(cfg.seed, NetEvaluator(ttt, result.params), result.visits)],
        table,
        states,
        cfg.search,
        match_games=200,
    )
    (out / f"report-{mode}.json").write_text(report.to_json())
    write_report_csvs(report, out / f"report-{mode}")
    write_report_svgs(report, out / f"report-{mode}")
    print(f"  search non-loss: {1 - report.match_with_search['loss'] / 200:.2f}   "
          f"policy-only non-loss: {1 - report.match_policy_only['loss'] / 200:.2f}")
    print(f"  mean value error: {report.mean_value_error:.3f}   "
          f"misalignment: {report.misalignment_mean:.3f}")
    reports.append(report)

print("\n" + comparison_text(compare_reports(reports)))
print(f"\nartifacts in {out}/ (report JSONs, CSVs, SVGs)")
print("note: 1,500 games is a smoke budget; the acceptance suite uses 20,000")
