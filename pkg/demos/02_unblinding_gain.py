"""Blinded vs unblinded demand curves against the simulator's causal ground truth."""

import sys

from promptlab import (
    DgpConfig,
    ExperimentDesign,
    JsonlStore,
    MockBackend,
    demand_curve,
    improvement_pct,
    load_catalog,
    mae,
    run_experiment,
)
from promptlab.analysis import ground_truth_curve, plot_curves

products = tuple(e.product_id for e in load_catalog())
truth = ground_truth_curve(DgpConfig(), products, "interventional")

curves, scores = {}, {}
for strategy in ("blinded_system", "unblinded_system"):
    store = JsonlStore()
    run_experiment(ExperimentDesign("gain", strategy, products, n_draws=50), MockBackend(), store)
    curve = demand_curve(store.records())
    curves[strategy] = curve.aggregate
    scores[strategy] = mae(curve, truth).value

true_agg = {}
for row in truth.rows:
    true_agg.setdefault(row.relative_price, []).append(row.purchase_probability)
curves["causal truth"] = {k: sum(v) / len(v) for k, v in true_agg.items()}

print(f"{'price':>6} {'blinded':>8} {'unblinded':>10} {'truth':>6}")
for rel in sorted(curves["causal truth"]):
    print(f"{rel:+6.1f} {curves['blinded_system'][rel]:8.3f} {curves['unblinded_system'][rel]:10.3f} "
          f"{curves['causal truth'][rel]:6.3f}")
print(f"\nMAE blinded {scores['blinded_system']:.4f}, unblinded {scores['unblinded_system']:.4f}, "
      f"improvement {improvement_pct(scores['blinded_system'], scores['unblinded_system']):.1f}%")

if len(sys.argv) > 1:
    plot_curves(curves, sys.argv[1], "aggregate demand")
    print(f"chart written to {sys.argv[1]}")
