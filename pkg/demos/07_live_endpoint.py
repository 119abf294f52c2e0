"""Small run against a real chat-completions server.

Needs PROMPTLAB_API_KEY; PROMPTLAB_BASE_URL and PROMPTLAB_MODEL override the
defaults below.
"""

import os
import sys

from promptlab import ExperimentDesign, HttpBackend, JsonlStore, demand_curve, run_experiment

if not os.environ.get("PROMPTLAB_API_KEY"):
    sys.exit("set PROMPTLAB_API_KEY to run this demo")

backend = HttpBackend(os.environ.get("PROMPTLAB_BASE_URL", "https://api.openai.com"), max_in_flight=4)
model = os.environ.get("PROMPTLAB_MODEL", "gpt-4o-mini")
store = JsonlStore("live_store.jsonl")
for strategy in ("blinded_system", "unblinded_system"):
    design = ExperimentDesign("live", strategy, ("soda_carb", "milk"), n_draws=10, model_id=model)
    print(run_experiment(design, backend, store).line())
    curve = demand_curve(store.records(design.run_id()))
    print({rel: round(p, 2) for rel, p in curve.aggregate.items()})
