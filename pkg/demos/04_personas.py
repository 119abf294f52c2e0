"""Two-step persona procedure: sample 500 profiles, then ask each one at every price at temperature 0."""

from promptlab import JsonlStore, MockBackend, demand_curve, generate_personas, load_catalog, run_persona_sweep
from promptlab.catalog import RELATIVE_GRID, by_id

coke = by_id(load_catalog())["soda_carb"]
backend = MockBackend(seed=0)
personas = generate_personas(coke, 500, backend, seed=0)
print(f"{len(personas)} personas, e.g. {personas[0].age}-year-old {personas[0].occupation} in {personas[0].state}")

for strategy in ("persona_decide", "persona_competing"):
    store = JsonlStore()
    run_persona_sweep(coke, personas, RELATIVE_GRID, strategy, backend, store)
    curve = demand_curve(store.records()).aggregate
    print(f"\n{strategy}:")
    for rel, p in curve.items():
        print(f"  {rel:+.1f}  {'#' * round(40 * p):<40} {p:.3f}")
