"""Elicited past prices drift with the shown price unless the prompt reveals the randomization.

Runs the past-price question over the whole catalog twice on the seeded
simulator, once with the plain system prompt and once with the unblinded
one, and prints the price/past-price correlation for each.
"""

from promptlab import ExperimentDesign, JsonlStore, MockBackend, covariate_audit, load_catalog, run_experiment

products = tuple(e.product_id for e in load_catalog())

for label, system in (("blinded", None), ("unblinded", "unblinded_system")):
    store = JsonlStore()
    design = ExperimentDesign("confounding", "past_price", products, n_draws=50, system_strategy_id=system)
    summary = run_experiment(design, MockBackend(), store)
    audit = covariate_audit(store.records())
    print(f"{label:>9}: {summary.records_written} answers, "
          f"corr(relative price, past price) = {audit.price_correlation['past_price']:+.3f}")

print("\nA blinded respondent reads a high price as a sign of a pricey product, so its")
print("recalled past price rises with it; the unblinded prompt removes that dependence.")
