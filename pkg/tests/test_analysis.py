import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from promptlab.analysis import (
    REFERENCE_STAGE_TABLE,
    AnalysisError,
    RefRow,
    ReferenceData,
    covariate_audit,
    covariate_sweep,
    demand_curve,
    ground_truth_curve,
    improvement_pct,
    load_panel,
    load_reference,
    mae,
    stage_totals,
    synthetic_panel,
    write_stage_csv,
)
from promptlab.backends import DgpConfig, MockBackend, ground_truth_demand
from promptlab.catalog import RELATIVE_GRID
from promptlab.parsing import NOT_PURCHASE, PURCHASE
from promptlab.prompts import STAGES
from promptlab.runner import DrawRecord, ExperimentDesign, JsonlStore, run_experiment


def _rec(pid, rel, i, decision, strategy="ask_purchase"):
    parsed = None if decision is None else {"decision": decision}
    return DrawRecord("r", "d", strategy, pid, rel, "1.00", i, str(decision), parsed)


# ---------------------------------------------------------------- demand

def test_ratio_cell():
    recs = [_rec("a", 0.0, i, PURCHASE if i < 20 else NOT_PURCHASE) for i in range(50)]
    cell = demand_curve(recs).cells[("a", 0.0)]
    assert cell.probability == 0.4 and cell.n_valid == 50 and cell.n_failed == 0


def test_all_purchase_flat():
    recs = [_rec(p, r, i, PURCHASE) for p in "ab" for r in RELATIVE_GRID for i in range(3)]
    assert set(demand_curve(recs).aggregate.values()) == {1.0}


def test_failures_excluded_from_denominator():
    recs = [_rec("a", 0.0, 0, PURCHASE), _rec("a", 0.0, 1, None), _rec("a", 0.0, 2, NOT_PURCHASE)]
    cell = demand_curve(recs).cells[("a", 0.0)]
    assert (cell.probability, cell.n_valid, cell.n_failed) == (0.5, 2, 1)


def test_missing_cell_warns_and_is_excluded():
    recs = [_rec("a", 0.0, 0, None), _rec("b", 0.0, 0, PURCHASE)]
    with pytest.warns(UserWarning):
        curve = demand_curve(recs)
    assert curve.cells[("a", 0.0)].missing
    assert curve.aggregate == {0.0: 1.0}


def test_mixed_strategies_rejected():
    with pytest.raises(AnalysisError):
        demand_curve([_rec("a", 0.0, 0, PURCHASE), _rec("a", 0.0, 1, PURCHASE, "other")])


def test_aggregate_equals_bruteforce():
    rng = random.Random(5)
    recs = [_rec(p, r, i, rng.choice([PURCHASE, NOT_PURCHASE, None]))
            for p in "abcd" for r in RELATIVE_GRID for i in range(9)]
    expected = {}
    for rel in RELATIVE_GRID:
        shares = []
        for p in "abcd":
            vals = [r.parsed["decision"] == PURCHASE for r in recs
                    if r.product_id == p and r.relative_price == rel and r.parsed]
            if vals:
                shares.append(sum(vals) / len(vals))
        expected[rel] = sum(shares) / len(shares)
    got = demand_curve(recs).aggregate
    for rel in RELATIVE_GRID:
        assert got[rel] == pytest.approx(expected[rel], abs=1e-15)


def test_interventional_curve_within_3se_of_truth(product_ids):
    store = JsonlStore()
    run_experiment(ExperimentDesign("gt", "unblinded_system", product_ids, n_draws=50), MockBackend(), store)
    curve = demand_curve(store.records())
    for rel, p in curve.aggregate.items():
        truth = ground_truth_demand(DgpConfig(), rel, "interventional").p
        n = 50 * len(product_ids)
        assert abs(p - truth) <= 3 * math.sqrt(truth * (1 - truth) / n)


def test_demand_csv_roundtrip(tmp_path):
    recs = [_rec("a", r, i, PURCHASE if i % 3 else NOT_PURCHASE) for r in RELATIVE_GRID for i in range(6)]
    curve = demand_curve(recs)
    curve.write_csv(tmp_path / "d.csv")
    ref = load_reference(tmp_path / "d.csv")
    assert mae(curve, ref).value == 0.0


# ------------------------------------------------------------------- MAE

def test_mae_two_cell_oracle():
    pred = {("a", 0.0): 0.5, ("b", 0.0): 0.2}
    ref = {("a", 0.0): 0.4, ("b", 0.0): 0.5}
    res = mae(pred, ref)
    assert res.value == pytest.approx(0.2, abs=1e-15)
    assert res.coverage == 1.0 and res.n_cells == 2


def test_mae_coverage_and_zero_price_flag():
    pred = {("a", -1.0): 1.0, ("a", 0.0): 0.5}
    ref = {("a", -1.0): 0.0, ("a", 0.0): 0.5, ("a", 1.0): 0.1}
    assert mae(pred, ref).value == 0.5
    assert mae(pred, ref).coverage == pytest.approx(2 / 3)
    assert mae(pred, ref, include_zero_price=False).value == 0.0


def test_mae_empty_intersection():
    with pytest.raises(AnalysisError):
        mae({("a", 0.0): 0.1}, {("b", 0.0): 0.1})


_cells = st.dictionaries(st.tuples(st.sampled_from("abcde"), st.sampled_from([-1.0, 0.0, 0.4])),
                         st.floats(0, 1), min_size=1)


@given(_cells, st.randoms())
def test_mae_properties(cells, rnd):
    assert mae(cells, cells).value == 0.0
    other = {k: rnd.random() for k in cells}
    assert mae(cells, other).value == pytest.approx(mae(other, cells).value, abs=1e-15)
    items = list(cells.items())
    rnd.shuffle(items)
    assert mae(dict(items), other).value == mae(cells, other).value


def test_reference_validation():
    with pytest.raises(AnalysisError):
        ReferenceData([RefRow("a", 0.0, 1.2, 1)])
    with pytest.raises(AnalysisError):
        ReferenceData([RefRow("a", 0.0, 0.2, 1), RefRow("a", 0.0, 0.3, 1)])


def test_improvement():
    assert improvement_pct(0.532, 0.397) == pytest.approx(25.4, abs=0.05)
    assert improvement_pct(0.3, 0.3) == 0.0
    assert improvement_pct(0.2, 0.3) == pytest.approx(-50.0)
    with pytest.raises(AnalysisError):
        improvement_pct(0.0, 0.1)


# ----------------------------------------------------------------- audit

def test_audit_mock_modes(product_ids):
    obs, intv = JsonlStore(), JsonlStore()
    run_experiment(ExperimentDesign("a", "past_price", product_ids, n_draws=50), MockBackend(), obs)
    run_experiment(ExperimentDesign("a", "past_price", product_ids, n_draws=50,
                                    system_strategy_id="unblinded_system"), MockBackend(), intv)
    assert covariate_audit(obs.records()).price_correlation["past_price"] > 0.5
    assert abs(covariate_audit(intv.records()).price_correlation["past_price"]) < 0.1


def test_audit_full_record_matrix_properties():
    store = JsonlStore()
    run_experiment(ExperimentDesign("f", "full_record", ("soda_carb", "milk", "cat_food"), n_draws=30),
                   MockBackend(), store)
    audit = covariate_audit(store.records())
    assert audit.variables[0] == "relative_price"
    assert "decision" in audit.excluded and "gender" in audit.excluded
    c, r = audit.covariance, audit.correlation
    assert np.array_equal(c, c.T) and np.array_equal(r, r.T)
    assert np.all(np.diag(r) == 1.0)
    assert np.all((r >= -1) & (r <= 1))
    assert np.linalg.eigvalsh(c).min() > -1e-9 * max(1.0, np.abs(c).max())
    assert audit.n == 3 * 11 * 30


def test_audit_matches_numpy_oracle(catalog):
    store = JsonlStore()
    run_experiment(ExperimentDesign("n", "past_price", ("soda_carb", "dog_food"), n_draws=40), MockBackend(), store)
    regular = {e.product_id: float(e.regular_price) for e in catalog}
    recs = store.records()
    x = np.array([r.relative_price for r in recs])
    y = np.array([float(r.parsed["past_price"]) / regular[r.product_id] for r in recs])
    audit = covariate_audit(recs, catalog)
    assert audit.price_correlation["past_price"] == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    raw = covariate_audit(recs, catalog, normalize_prices=False)
    y_raw = np.array([float(r.parsed["past_price"]) for r in recs])
    assert raw.covariance[0, 1] == pytest.approx(np.cov(x, y_raw)[0, 1], abs=1e-12)


def test_audit_constant_columns_undefined():
    rec = DrawRecord("r", "d", "past_price", "soda_carb", 0.0, "8.26", 0, "8.00", {"past_price": 8.0})
    audit = covariate_audit([rec, rec])
    assert audit.price_correlation["past_price"] is None
    assert set(audit.undefined) == {"relative_price", "past_price"}


def test_audit_needs_two_records():
    rec = DrawRecord("r", "d", "past_price", "soda_carb", 0.0, "8.26", 0, "8.00", {"past_price": 8.0})
    with pytest.raises(AnalysisError):
        covariate_audit([rec])


# ----------------------------------------------------------------- sweep

def test_stage_totals_default():
    assert stage_totals(STAGES) == [14, 15, 17, 18, 19, 20, 21, 22, 23, 24, 25, 30]
    assert [row[1] for row in REFERENCE_STAGE_TABLE] == stage_totals(STAGES)
    assert REFERENCE_STAGE_TABLE[0][4] == "0.2250" and REFERENCE_STAGE_TABLE[1][4] == "0.0971"


def _design(products=("soda_carb", "milk"), draws=1):
    return ExperimentDesign("sw", "ask_purchase", products, n_draws=draws)


def test_single_stage_equals_plain_run_plus_mae():
    ref = ground_truth_curve(DgpConfig(), ["soda_carb", "milk"])
    panel = synthetic_panel(10, seed=1)
    store = JsonlStore()
    (res,) = covariate_sweep(STAGES[:1], _design(), MockBackend(), ref, panel, store)
    direct = mae(demand_curve(store.records()), ref)
    assert res.mae == direct.value and res.total_covariates == 14


def test_missing_field_skips_stage():
    ref = ground_truth_curve(DgpConfig(), ["soda_carb", "milk"])
    panel = [{k: v for k, v in p.items() if k != "score_riskaversion"} for p in synthetic_panel(4)]
    results = covariate_sweep(STAGES[:5], _design(), MockBackend(), ref, panel)
    assert [r.skipped is None for r in results] == [True, True, True, False, False]
    assert "score_riskaversion" in results[3].skipped


def test_confounder_captured_at_stage_two(product_ids):
    cfg = DgpConfig(controlled_by=("Tightwad-Spendthrift",))
    ref = ground_truth_curve(cfg, product_ids)
    results = covariate_sweep(STAGES[:2], _design(product_ids), MockBackend(cfg), ref, synthetic_panel(20))
    assert results[1].mae <= results[0].mae


def test_stage_csv_and_panel_io(tmp_path):
    ref = ground_truth_curve(DgpConfig(), ["soda_carb"])
    results = covariate_sweep(STAGES[:2], _design(("soda_carb",)), MockBackend(), ref, synthetic_panel(3))
    write_stage_csv(results, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("stage,total_covariates") and len(lines) == 3
    import csv
    panel = synthetic_panel(3)
    with open(tmp_path / "p.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(panel[0]))
        w.writeheader()
        w.writerows(panel)
    assert [p["respondent_id"] for p in load_panel(tmp_path / "p.csv")] == ["r0000", "r0001", "r0002"]
