"""Demand curves, MAE, confounding audits and the covariate-addition sweep."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .catalog import RELATIVE_GRID, ProductEntry, by_id, load_catalog, price_point, relative_key
from .parsing import PURCHASE, get_schema
from .prompts import STAGES, StageSpec, builtin_strategy, product_bindings, stage_strategy

log = logging.getLogger(__name__)

Key = Tuple[str, float]


class AnalysisError(ValueError):
    pass


def _field(record, name):
    return record[name] if isinstance(record, Mapping) else getattr(record, name)


# --------------------------------------------------------------------------
# demand curves

@dataclass
class CellEstimate:
    probability: Optional[float]
    n_valid: int
    n_failed: int
    n_purchase: int

    @property
    def missing(self) -> bool:
        return self.n_valid == 0

    @property
    def se(self) -> Optional[float]:
        if self.missing:
            return None
        p = self.probability
        return math.sqrt(p * (1 - p) / self.n_valid)


@dataclass
class DemandCurve:
    cells: Dict[Key, CellEstimate]
    strategy_id: Optional[str] = None

    def probabilities(self) -> Dict[Key, float]:
        return {k: c.probability for k, c in self.cells.items() if not c.missing}

    @property
    def aggregate(self) -> Dict[float, float]:
        """Unweighted mean over products at each relative price."""
        by_price: Dict[float, List[float]] = {}
        for (pid, rel), c in sorted(self.cells.items()):
            if not c.missing:
                by_price.setdefault(rel, []).append(c.probability)
        return {rel: math.fsum(ps) / len(ps) for rel, ps in sorted(by_price.items())}

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["product_id", "relative_price", "purchase_probability", "n_valid", "n_failed"])
            for (pid, rel), c in sorted(self.cells.items()):
                prob = "NA" if c.missing else repr(c.probability)
                w.writerow([pid, f"{rel:.1f}", prob, c.n_valid, c.n_failed])

    def write_aggregate_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["relative_price", "mean_purchase_probability"])
            for rel, p in self.aggregate.items():
                w.writerow([f"{rel:.1f}", repr(p)])


def demand_curve(records: Iterable) -> DemandCurve:
    """Purchase share per (product, relative price); parse failures kept out of the denominator."""
    counts: Dict[Key, List[int]] = {}
    strategies = set()
    for r in records:
        strategies.add(_field(r, "strategy_id"))
        key = (_field(r, "product_id"), relative_key(_field(r, "relative_price")))
        valid, failed, bought = counts.setdefault(key, [0, 0, 0])
        parsed = _field(r, "parsed")
        if parsed is None:
            counts[key][1] += 1
            continue
        if "decision" not in parsed:
            raise AnalysisError("records carry no purchase decision")
        counts[key][0] += 1
        counts[key][2] += parsed["decision"] == PURCHASE
    if len(strategies) > 1:
        raise AnalysisError(f"records mix strategies: {sorted(strategies)}")
    cells = {}
    for key, (valid, failed, bought) in counts.items():
        if valid == 0:
            warnings.warn(f"cell {key} has no valid answers; excluded from aggregate")
        cells[key] = CellEstimate(bought / valid if valid else None, valid, failed, bought)
    return DemandCurve(cells, strategies.pop() if strategies else None)


def ground_truth_curve(config, products: Iterable[str], mode: str = "interventional",
                       relative_prices: Sequence[float] = RELATIVE_GRID) -> "ReferenceData":
    """Oracle reference from the simulator's structural equation (same curve for every product)."""
    from .backends.mock import ground_truth_demand

    truth = {relative_key(r): ground_truth_demand(config, r, mode).p for r in relative_prices}
    return ReferenceData([RefRow(pid, rel, p, 0) for pid in products for rel, p in truth.items()])


# --------------------------------------------------------------------------
# reference data and MAE

@dataclass(frozen=True)
class RefRow:
    product_id: str
    relative_price: float
    purchase_probability: float
    n_obs: int


@dataclass
class ReferenceData:
    rows: List[RefRow]

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if not 0.0 <= row.purchase_probability <= 1.0:
                raise AnalysisError(f"probability out of [0,1] for {row.product_id} @ {row.relative_price}")
            key = (row.product_id, relative_key(row.relative_price))
            if key in seen:
                raise AnalysisError(f"duplicate reference key {key}")
            seen.add(key)

    def probabilities(self) -> Dict[Key, float]:
        return {(r.product_id, relative_key(r.relative_price)): r.purchase_probability for r in self.rows}

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["product_id", "relative_price", "purchase_probability", "n_obs"])
            for r in self.rows:
                w.writerow([r.product_id, f"{relative_key(r.relative_price):.1f}", repr(r.purchase_probability), r.n_obs])


def load_reference(path: Union[str, Path]) -> ReferenceData:
    """Read a reference (or a demand CSV written by ``DemandCurve.write_csv``)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            prob = row["purchase_probability"]
            if prob in ("", "NA"):
                continue
            n = row.get("n_obs") or row.get("n_valid") or 0
            rows.append(RefRow(row["product_id"], relative_key(float(row["relative_price"])), float(prob), int(n)))
    return ReferenceData(rows)


def _as_probabilities(x) -> Dict[Key, float]:
    if isinstance(x, (DemandCurve, ReferenceData)):
        return x.probabilities()
    return {(pid, relative_key(rel)): p for (pid, rel), p in dict(x).items()}


class MaeResult(NamedTuple):
    value: float
    coverage: float
    n_cells: int


def mae(pred, ref, include_zero_price: bool = True) -> MaeResult:
    """Mean |p_pred - p_ref| over the (product, relative price) cells both sides share."""
    p, r = _as_probabilities(pred), _as_probabilities(ref)
    if not include_zero_price:
        p = {k: v for k, v in p.items() if k[1] != -1.0}
        r = {k: v for k, v in r.items() if k[1] != -1.0}
    shared = sorted(set(p) & set(r))
    if not shared:
        raise AnalysisError("prediction and reference share no (product, price) cells")
    value = math.fsum(abs(p[k] - r[k]) for k in shared) / len(shared)
    return MaeResult(value, len(shared) / len(r), len(shared))


def improvement_pct(mae_blinded: float, mae_unblinded: float) -> float:
    """Relative MAE reduction from unblinding, in percent of the blinded baseline."""
    if not mae_blinded > 0:
        raise AnalysisError("blinded baseline MAE must be positive")
    return 100.0 * (mae_blinded - mae_unblinded) / mae_blinded


# --------------------------------------------------------------------------
# covariate audit

@dataclass
class CovariateAudit:
    variables: List[str]
    covariance: np.ndarray
    correlation: np.ndarray
    price_correlation: Dict[str, Optional[float]]
    undefined: List[str]
    excluded: List[str]
    n: int

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable_a", "variable_b", "covariance", "correlation"])
            for i, a in enumerate(self.variables):
                for j, b in enumerate(self.variables):
                    corr = self.correlation[i, j]
                    w.writerow([a, b, repr(float(self.covariance[i, j])), "NA" if np.isnan(corr) else repr(float(corr))])


def _schema_for(strategy_id: str):
    base = strategy_id.split("+")[0]
    return get_schema(builtin_strategy(base).expected_answer_schema)


def covariate_audit(records: Sequence, catalog: Optional[Sequence[ProductEntry]] = None,
                    normalize_prices: bool = True) -> CovariateAudit:
    """Sample covariance/correlation of the numeric answer fields and relative price.

    With ``normalize_prices`` the currency answers are divided by the
    product's regular price, so products of very different price levels can
    be pooled.
    """
    valid = [r for r in records if _field(r, "parsed") is not None]
    if len(valid) < 2:
        raise AnalysisError(f"need at least 2 valid records, got {len(valid)}")
    strategies = {_field(r, "strategy_id") for r in valid}
    if len(strategies) > 1:
        raise AnalysisError(f"records mix strategies: {sorted(strategies)}")
    schema = _schema_for(strategies.pop())
    numeric = schema.numeric()
    decimals = {f.name for f in schema.fields if f.kind == "decimal"}
    regular = {e.product_id: float(e.regular_price) for e in (catalog if catalog is not None else load_catalog())}

    variables = ["relative_price"] + numeric
    rows = []
    for r in valid:
        parsed = _field(r, "parsed")
        row = [float(_field(r, "relative_price"))]
        for name in numeric:
            v = float(parsed[name])
            if normalize_prices and name in decimals:
                v /= regular[_field(r, "product_id")]
            row.append(v)
        rows.append(row)
    x = np.asarray(rows, dtype=float)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(len(variables), len(variables))
    cov = (cov + cov.T) / 2
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    constant = sd <= 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    corr[constant, :] = np.nan
    corr[:, constant] = np.nan
    undefined = [v for v, c in zip(variables, constant) if c]
    price_corr = {v: (None if np.isnan(corr[0, i]) else float(corr[0, i])) for i, v in enumerate(variables) if i}
    return CovariateAudit(variables, cov, corr, price_corr, undefined, schema.categorical(), len(valid))


# --------------------------------------------------------------------------
# sequential covariate addition

@dataclass
class StageResult:
    stage: int
    covariates_added: Tuple[str, ...]
    total_covariates: int
    mae: Optional[float] = None
    coverage: Optional[float] = None
    skipped: Optional[str] = None


def stage_totals(stages: Sequence[StageSpec] = STAGES) -> List[int]:
    totals, running = [], 0
    for s in stages:
        running += len(s.covariates)
        totals.append(running)
    return totals


def _load_stage_reference():
    text = resources.files("promptlab.data").joinpath("stage_reference.csv").read_text("utf-8")
    return [
        (int(r["stage"]), int(r["total_covariates"]), int(r["new_covariates"]), r["names"], r["mae"])
        for r in csv.DictReader(text.splitlines())
    ]


REFERENCE_STAGE_TABLE = _load_stage_reference()


def covariate_sweep(stages: Sequence[StageSpec], design, backend, ref, panel: Sequence[Mapping[str, object]],
                    store=None, catalog: Optional[Sequence[ProductEntry]] = None,
                    include_zero_price: bool = True, concurrency: int = 4) -> List[StageResult]:
    """Run the detailed-covariate prompt once per stage and score each stage against ``ref``.

    ``panel`` holds one mapping per respondent with a ``respondent_id`` and
    the covariate fields; ``design`` supplies products, prices, draws,
    temperature, seed and model id.
    """
    from .runner import Cell, JsonlStore, execute_cells

    catalog = load_catalog() if catalog is None else catalog
    design.validate(catalog)
    products = by_id(catalog)
    store = JsonlStore() if store is None else store
    results = []
    required: List[str] = []
    total = 0
    for spec in stages:
        required += [f for f in spec.fields if f not in required]
        total += len(spec.covariates)
        lacking = sorted({f for person in panel for f in required if f not in person})
        if lacking:
            results.append(StageResult(spec.index, spec.covariates, total,
                                       skipped=f"panel lacks field(s): {', '.join(lacking)}"))
            continue
        strategy = stage_strategy(spec.index)
        cells = []
        for person in panel:
            extra = {f: person[f] for f in required}
            for pid in design.products:
                entry = products[pid]
                for rel in design.relative_prices:
                    point = price_point(entry, rel)
                    b = product_bindings(strategy, entry, price=point.absolute, extra=extra)
                    cells.append(Cell(pid, relative_key(rel), point.absolute, tuple(b.items()),
                                      str(person["respondent_id"])))
        run_id = f"{design.design_id}-stage{spec.index:02d}"
        execute_cells(run_id, design.design_id, strategy, cells, backend, store,
                      n_draws=design.n_draws, temperature=design.temperature,
                      model_id=design.model_id, seed=design.seed, concurrency=concurrency)
        curve = demand_curve(store.records(run_id))
        score = mae(curve, ref, include_zero_price)
        results.append(StageResult(spec.index, spec.covariates, total, score.value, score.coverage))
    return results


def write_stage_csv(results: Sequence[StageResult], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "total_covariates", "new_covariates", "names", "mae", "coverage", "skipped"])
        for r in results:
            w.writerow([r.stage, r.total_covariates, len(r.covariates_added), " ".join(r.covariates_added),
                        "NA" if r.mae is None else f"{r.mae:.4f}",
                        "NA" if r.coverage is None else f"{r.coverage:.4f}", r.skipped or ""])


def synthetic_panel(n: int, seed: int = 0) -> List[Dict[str, object]]:
    """Respondents carrying every detailed-covariate field, for dry runs."""
    rng = np.random.default_rng(seed)
    regions = ("Northeast", "Midwest", "South", "West")
    panel = []
    for i in range(n):
        person = {
            "respondent_id": f"r{i:04d}",
            "region": regions[rng.integers(4)],
            "sex": ("female", "male")[rng.integers(2)],
            "age": int(rng.integers(18, 81)),
            "education": ("high school", "some college", "bachelor's degree", "graduate degree")[rng.integers(4)],
            "race": ("White", "Black", "Hispanic", "Asian", "Other")[rng.integers(5)],
            "citizen_status": ("yes", "no")[int(rng.random() < 0.08)],
            "marriage": ("married", "never married", "divorced", "widowed")[rng.integers(4)],
            "religion": ("Protestant", "Catholic", "None", "Other")[rng.integers(4)],
            "religious_attendance": ("never", "yearly", "monthly", "weekly")[rng.integers(4)],
            "political_affiliation": ("Democrat", "Republican", "Independent")[rng.integers(3)],
            "total_family_income": ("$30,000-$50,000", "$50,000-$75,000", "$75,000-$100,000", "$100,000+")[rng.integers(4)],
            "political_views": ("liberal", "moderate", "conservative")[rng.integers(3)],
            "household_size": int(rng.integers(1, 7)),
            "employment_status": ("full-time", "part-time", "unemployed", "retired")[rng.integers(4)],
        }
        scores = {
            "score_ST-TW": int(rng.integers(4, 27)), "score_discount": round(float(rng.uniform(0, 1)), 2),
            "score_presentbias": round(float(rng.uniform(0, 1)), 2),
            "score_riskaversion": round(float(rng.uniform(0, 1)), 2),
            "score_lossaversion": round(float(rng.uniform(1, 3)), 2),
            "score_finliteracy": int(rng.integers(0, 9)), "score_numeracy": int(rng.integers(0, 9)),
            "score_mentalaccounting": int(rng.integers(0, 101)),
            "score_maximization": round(float(rng.uniform(1, 5)), 1),
            "score_minimalism": round(float(rng.uniform(1, 5)), 1), "score_GREEN": round(float(rng.uniform(1, 5)), 1),
            "score_extraversion": round(float(rng.uniform(1, 5)), 1),
            "score_agreeableness": round(float(rng.uniform(1, 5)), 1),
            "wave1_score_conscientiousness": round(float(rng.uniform(1, 5)), 1),
            "score_openness": round(float(rng.uniform(1, 5)), 1),
            "score_neuroticism": round(float(rng.uniform(1, 5)), 1),
        }
        person.update(scores)
        for pct in ("pct_spendthrift", "pct_discount", "pct_presentbias", "pct_riskaversion", "pct_lossaversion",
                    "pct_finliteracy", "pct_numeracy", "pct_mentalaccounting", "pct_maximization",
                    "pct_minimalism", "pct_green", "pct_extraversion", "pct_agreeableness",
                    "pct_conscientiousness", "pct_openness", "pct_neuroticism"):
            person[pct] = int(rng.integers(1, 100))
        panel.append(person)
    return panel


def load_panel(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: v for k, v in row.items() if v != ""} for row in csv.DictReader(fh)]


def plot_curves(curves: Mapping[str, Mapping[float, float]], path: Union[str, Path], title: str = "") -> None:
    """Static line chart of aggregate curves; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        xs = sorted(curve)
        ax.plot(xs, [curve[x] for x in xs], marker="o", label=label)
    ax.set_xlabel("relative price")
    ax.set_ylabel("purchase probability")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
