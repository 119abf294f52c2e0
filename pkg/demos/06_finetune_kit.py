"""Fine-tuning kit: folds, blinded/unblinded datasets, observational mixing and the evaluation grid."""

import tempfile
from pathlib import Path

from promptlab import DgpConfig, MockBackend, emit_dataset, eval_matrix, make_folds, mix_observational
from promptlab.analysis import ground_truth_curve
from promptlab.catalog import load_catalog
from promptlab.finetune import format_matrix, load_published_grid

catalog = load_catalog()
plan = make_folds(catalog)
for f in plan.folds:
    print(f"fold {f.index}: hold out {f.validation_group:<14} ({len(f.validation_products)} products)")

ref = ground_truth_curve(DgpConfig(), [e.product_id for e in catalog])
fold = plan.fold("beverages")
out = Path(tempfile.mkdtemp())
for kind in ("blinded", "unblinded"):
    counts = emit_dataset(ref, kind, fold, out / f"{kind}.jsonl", catalog, seed=0, draws_per_cell=10)
    print(f"{kind:>9} dataset: {counts['written']} lines, {counts['excluded']} held-out observations dropped")

source = [{"category": "Home & Kitchen", "product": f"Item {i}", "price": f"{3 + i % 40}.49"} for i in range(500)]
total = mix_observational(out / "unblinded.jsonl", source, 500, out / "unblinded_mixed.jsonl", seed=0)
print(f"mixed dataset: {total} lines in {out}")

models = {"out_of_box": "base", "tuned_blinded": "ft-blinded", "tuned_unblinded": "ft-unblinded"}
print()
print(format_matrix(eval_matrix(models, fold, MockBackend(), ref, n_draws=50)))
print()
print(format_matrix(load_published_grid("survey")))
