"""Fine-tuning datasets, leave-one-group-out folds and the 2x2 evaluation grid."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis import ReferenceData, demand_curve, mae
from .backends.base import Backend, BackendError
from .catalog import GROUPS, ProductEntry, by_id, format_usd, load_catalog, price_point, relative_key
from .parsing import NOT_PURCHASE, PURCHASE, format_field, get_schema
from .prompts import builtin_strategy, product_bindings, render

log = logging.getLogger(__name__)

TUNING_STRATEGIES = {"blinded": "blinded_system", "unblinded": "unblinded_system"}
DEFAULT_DRAWS_PER_CELL = 50


class FinetuneError(ValueError):
    pass


# --------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class Fold:
    index: int
    validation_group: str
    train_groups: Tuple[str, ...]
    validation_products: Tuple[str, ...]
    train_products: Tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: Tuple[Fold, ...]

    def fold(self, key: Union[int, str]) -> Fold:
        for f in self.folds:
            if key == f.index or key == f.validation_group:
                return f
        raise FinetuneError(f"no fold {key!r}; use 0-{len(self.folds) - 1} or one of {list(GROUPS)}")

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "validation_group", "product_id", "role"])
            for f in self.folds:
                for pid in f.validation_products:
                    w.writerow([f.index, f.validation_group, pid, "validation"])
                for pid in f.train_products:
                    w.writerow([f.index, f.validation_group, pid, "train"])


def make_folds(catalog: Optional[Sequence[ProductEntry]] = None) -> FoldPlan:
    catalog = load_catalog() if catalog is None else catalog
    members = {g: tuple(e.product_id for e in catalog if e.group == g) for g in GROUPS}
    empty = [g for g, ps in members.items() if not ps]
    if empty:
        raise FinetuneError(f"group(s) without products: {', '.join(empty)}")
    folds = []
    for i, held_out in enumerate(GROUPS):
        train = tuple(g for g in GROUPS if g != held_out)
        folds.append(Fold(i, held_out, train, members[held_out], tuple(p for g in train for p in members[g])))
    return FoldPlan(tuple(folds))


# --------------------------------------------------------------------------
# dataset emission

def _example(system: str, user: str, assistant: str) -> str:
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages += [{"role": "user", "content": user}, {"role": "assistant", "content": assistant}]
    return json.dumps({"messages": messages}, ensure_ascii=False)


def _label(decision: str) -> str:
    return format_field(decision, get_schema("decision").fields[0])


def _observations(data, draws_per_cell: int, seed: int):
    """Yield (product_id, relative_price, decision) triples."""
    if isinstance(data, ReferenceData):
        rng = np.random.default_rng(seed)
        rows = sorted(data.rows, key=lambda r: (r.product_id, relative_key(r.relative_price)))
        for row in rows:
            n = row.n_obs or draws_per_cell
            for bought in rng.random(n) < row.purchase_probability:
                yield row.product_id, relative_key(row.relative_price), PURCHASE if bought else NOT_PURCHASE
        return
    for row in data:
        decision = row["decision"]
        if decision not in (PURCHASE, NOT_PURCHASE):
            decision = {"purchase": PURCHASE, "not purchase": NOT_PURCHASE}.get(str(decision).strip().lower())
            if decision is None:
                raise FinetuneError(f"bad decision {row['decision']!r}")
        yield row["product_id"], relative_key(float(row["relative_price"])), decision


def emit_dataset(data, strategy: str, fold: Fold, out_path: Union[str, Path],
                 catalog: Optional[Sequence[ProductEntry]] = None, seed: int = 0,
                 draws_per_cell: int = DEFAULT_DRAWS_PER_CELL) -> Dict[str, int]:
    """Write chat-format training lines for the fold's training products.

    ``data`` is a ReferenceData (labels sampled with ``seed``, ``n_obs`` per
    cell, ``draws_per_cell`` when ``n_obs`` is 0) or an iterable of mappings
    with ``product_id``, ``relative_price`` and ``decision``.
    Returns counts of written and excluded lines.
    """
    if strategy not in TUNING_STRATEGIES:
        raise FinetuneError(f"strategy must be one of {list(TUNING_STRATEGIES)}")
    catalog = load_catalog() if catalog is None else catalog
    products = by_id(catalog)
    prompt_strategy = builtin_strategy(TUNING_STRATEGIES[strategy])
    train = set(fold.train_products)
    lines, excluded = [], 0
    for pid, rel, decision in _observations(data, draws_per_cell, seed):
        if pid not in train:
            if pid not in products:
                raise FinetuneError(f"unknown product {pid!r}")
            excluded += 1
            continue
        entry = products[pid]
        prompt = render(prompt_strategy, product_bindings(prompt_strategy, entry, price_point(entry, rel).absolute))
        lines.append(_example(prompt.system, prompt.user, _label(decision)))
    if not lines:
        warnings.warn("no training observations; wrote an empty dataset")
    if excluded:
        log.info("excluded %d validation-group observations", excluded)
    Path(out_path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return {"written": len(lines), "excluded": excluded}


def load_observational(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows, start=2):
        if not all(row.get(k) for k in ("category", "product", "price")):
            raise FinetuneError(f"{path}:{i}: need category, product and price")
    return rows


def mix_observational(dataset_path: Union[str, Path], source: Union[str, Path, Sequence[Mapping[str, str]]],
                      n: int, out_path: Union[str, Path], seed: int = 0) -> int:
    """Append ``n`` online-shopping examples (all labelled purchase) and shuffle.

    ``source`` rows carry ``category``, ``product`` and ``price``; the first
    ``n`` rows of a seeded permutation are used. Returns the line count written.
    """
    rows = load_observational(source) if isinstance(source, (str, Path)) else list(source)
    if n < 0 or n > len(rows):
        raise FinetuneError(f"n={n} but the observational source has {len(rows)} rows")
    existing = [l for l in Path(dataset_path).read_text(encoding="utf-8").splitlines() if l]
    strategy = builtin_strategy("online_purchase")
    rng = np.random.default_rng(seed)
    picked = rng.permutation(len(rows))[:n]
    added = []
    for i in sorted(picked):
        row = rows[i]
        price = format_usd(Decimal(str(row["price"]).lstrip("$").replace(",", "")))
        prompt = render(strategy, {"category": row["category"], "product": row["product"], "price": price})
        added.append(_example(prompt.system, prompt.user, _label(PURCHASE)))
    lines = existing + added
    order = rng.permutation(len(lines))
    Path(out_path).write_text("".join(lines[i] + "\n" for i in order), encoding="utf-8")
    return len(lines)


# --------------------------------------------------------------------------
# evaluation grid

EVAL_COLUMNS = ("Blinded", "Unblinded")
MODEL_ROWS = {
    "out_of_box": "Out-of-box",
    "tuned_blinded": "Fine-tuned (Blinded)",
    "tuned_unblinded": "Fine-tuned (Unblinded)",
}


@dataclass
class EvalMatrix:
    title: str
    rows: List[Tuple[str, Optional[float], Optional[float]]]
    notes: Tuple[str, ...] = ()

    def cell(self, row_label: str, column: str) -> Optional[float]:
        idx = EVAL_COLUMNS.index(column) + 1
        for r in self.rows:
            if r[0] == row_label:
                return r[idx]
        raise KeyError(row_label)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "blinded_eval", "unblinded_eval"])
            for label, b, u in self.rows:
                w.writerow([label, _fmt(b), _fmt(u)])


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def format_matrix(matrix: EvalMatrix) -> str:
    width = max(len("Model"), *(len(r[0]) for r in matrix.rows))
    out = [matrix.title, f"{'Model':<{width}}  {'Blinded':>9}  {'Unblinded':>9}"]
    out.append("-" * len(out[1]))
    for label, b, u in matrix.rows:
        out.append(f"{label:<{width}}  {_fmt(b):>9}  {_fmt(u):>9}")
    out += list(matrix.notes)
    return "\n".join(out)


PUBLISHED_GRIDS = {
    "survey": "MAE of fine-tuned models, survey data",
    "survey_mixed": "MAE of fine-tuned models, survey plus observational data",
}


def load_published_grid(name: str) -> EvalMatrix:
    """Bundled published MAE grid, values exactly as reported."""
    if name not in PUBLISHED_GRIDS:
        raise FinetuneError(f"grid must be one of {list(PUBLISHED_GRIDS)}")
    text = resources.files("promptlab.data").joinpath("published_grids.csv").read_text("utf-8")
    rows = [(r["model"], float(r["blinded_eval"]), float(r["unblinded_eval"]))
            for r in csv.DictReader(text.splitlines()) if r["grid"] == name]
    return EvalMatrix(PUBLISHED_GRIDS[name], rows)


def eval_matrix(models: Mapping[str, str], fold: Fold, backend: Backend, ref: ReferenceData,
                n_draws: int = 50, seed: int = 0, store=None, catalog=None, concurrency: int = 4,
                include_zero_price: bool = True) -> EvalMatrix:
    """Score each supplied model id under blinded and unblinded evaluation prompts.

    ``models`` maps row keys (``out_of_box``, ``tuned_blinded``,
    ``tuned_unblinded`` or any label) to model ids. Only the fold's
    validation products are evaluated; a failing cell is reported as n/a.
    """
    from .runner import ExperimentDesign, JsonlStore, run_experiment

    store = JsonlStore() if store is None else store
    rows, notes = [], []
    for key, model_id in models.items():
        values = []
        for column, strategy_id in zip(EVAL_COLUMNS, ("blinded_system", "unblinded_system")):
            design = ExperimentDesign(f"eval-{key}-{column.lower()}-fold{fold.index}", strategy_id,
                                      fold.validation_products, n_draws=n_draws, seed=seed,
                                      model_id=model_id)
            try:
                summary = run_experiment(design, backend, store, catalog, concurrency)
                if not summary.complete:
                    raise BackendError(f"{summary.cells_total - summary.cells_completed} cells incomplete")
                score = mae(demand_curve(store.records(design.run_id())), ref, include_zero_price)
                values.append(score.value)
            except (BackendError, ValueError) as exc:
                notes.append(f"{MODEL_ROWS.get(key, key)} / {column}: unavailable ({exc})")
                values.append(None)
        rows.append((MODEL_ROWS.get(key, key), values[0], values[1]))
    return EvalMatrix(f"MAE on validation group {fold.validation_group}", rows, tuple(notes))
