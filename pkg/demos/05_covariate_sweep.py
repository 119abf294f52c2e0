"""Adding covariates stage by stage, with a simulator whose confounder is named at stage 2.

``controlled_by`` tells the simulator that once the spendthrift score appears in
the prompt the back-door path is closed, so stages 2 onward should track the
causal curve more closely than stage 1.
"""

from promptlab import DgpConfig, ExperimentDesign, MockBackend
from promptlab.analysis import REFERENCE_STAGE_TABLE, covariate_sweep, ground_truth_curve, synthetic_panel
from promptlab.prompts import STAGES

products = ("soda_carb", "milk", "cat_food", "potato_chips")
config = DgpConfig(controlled_by=("Tightwad-Spendthrift",))
ref = ground_truth_curve(config, products)
design = ExperimentDesign("sweep", "ask_purchase", products, n_draws=1)
results = covariate_sweep(STAGES, design, MockBackend(config), ref, synthetic_panel(40, seed=0))

print(f"{'stage':>5} {'covariates':>10} {'mock MAE':>9} {'published MAE':>14}")
for r, published in zip(results, REFERENCE_STAGE_TABLE):
    print(f"{r.stage:>5} {r.total_covariates:>10} {r.mae:>9.4f} {published[4]:>14}")
