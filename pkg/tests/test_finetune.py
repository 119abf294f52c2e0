import json
import pytest

from promptlab.analysis import RefRow, ReferenceData, ground_truth_curve
from promptlab.backends import DgpConfig, MockBackend
from promptlab.catalog import GROUPS, RELATIVE_GRID, by_id
from promptlab.finetune import (
    FinetuneError,
    emit_dataset,
    eval_matrix,
    format_matrix,
    load_published_grid,
    make_folds,
    mix_observational,
)

BLINDED = ("You, AI, are a customer. Your task is to fill in the blank ___. "
           "Return the completed information without extra text.")


def _lines(path):
    return [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines()]


def _ref(products, p=0.5, n=4):
    return ReferenceData([RefRow(pid, r, p, n) for pid in products for r in RELATIVE_GRID])


def test_folds_partition(catalog):
    plan = make_folds(catalog)
    assert [f.validation_group for f in plan.folds] == list(GROUPS)
    validation = [p for f in plan.folds for p in f.validation_products]
    assert sorted(validation) == sorted(e.product_id for e in catalog)
    bev = plan.fold("beverages")
    assert set(bev.validation_products) == {e.product_id for e in catalog if e.group == "beverages"}
    for f in plan.folds:
        assert not set(f.validation_products) & set(f.train_products)
        assert len(f.train_groups) == 3


def test_folds_missing_group(catalog):
    with pytest.raises(FinetuneError):
        make_folds([e for e in catalog if e.group != "household_pet"])


def test_unblinded_emission_coke_line(tmp_path, catalog):
    fold = make_folds(catalog).fold("household_pet")
    ref = ReferenceData([RefRow("soda_carb", 0.0, 1.0, 1)])
    emit_dataset(ref, "unblinded", fold, tmp_path / "u.jsonl", catalog)
    (line,) = _lines(tmp_path / "u.jsonl")
    system, user, assistant = line["messages"]
    assert [m["role"] for m in line["messages"]] == ["system", "user", "assistant"]
    assert "randomly and uniformly drawn from $0.00 to $16.52" in system["content"]
    assert "currently priced at $8.26" in user["content"]
    assert assistant["content"] == "purchase"


def test_blinded_emission_system_exact(tmp_path, catalog):
    fold = make_folds(catalog).fold(0)
    emit_dataset(_ref(["cat_food"], 0.0, 2), "blinded", fold, tmp_path / "b.jsonl", catalog)
    lines = _lines(tmp_path / "b.jsonl")
    assert len(lines) == 22
    assert all(l["messages"][0]["content"] == BLINDED for l in lines)
    assert {l["messages"][2]["content"] for l in lines} == {"not purchase"}


def test_validation_products_excluded_and_no_leakage(tmp_path, catalog):
    plan = make_folds(catalog)
    ref = _ref([e.product_id for e in catalog], 0.5, 2)
    products = by_id(catalog)
    for fold in plan.folds:
        out = tmp_path / f"f{fold.index}.jsonl"
        counts = emit_dataset(ref, "unblinded", fold, out, catalog, seed=1)
        assert counts["excluded"] == 2 * 11 * len(fold.validation_products)
        assert counts["written"] == 2 * 11 * len(fold.train_products)
        text = out.read_text(encoding="utf-8")
        for pid in fold.validation_products:
            assert products[pid].product not in text


def test_label_sampling_preserves_probability(tmp_path, catalog):
    fold = make_folds(catalog).fold("beverages")
    ref = ReferenceData([RefRow("cat_food", 0.0, 0.3, 20000)])
    emit_dataset(ref, "blinded", fold, tmp_path / "s.jsonl", catalog, seed=4)
    labels = [l["messages"][2]["content"] for l in _lines(tmp_path / "s.jsonl")]
    share = labels.count("purchase") / len(labels)
    assert abs(share - 0.3) < 3 * (0.3 * 0.7 / 20000) ** 0.5


def test_emission_deterministic(tmp_path, catalog):
    fold = make_folds(catalog).fold(1)
    ref = _ref([e.product_id for e in catalog], 0.42, 3)
    emit_dataset(ref, "blinded", fold, tmp_path / "a.jsonl", catalog, seed=9)
    emit_dataset(ref, "blinded", fold, tmp_path / "b.jsonl", catalog, seed=9)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_raw_respondent_rows(tmp_path, catalog):
    fold = make_folds(catalog).fold("beverages")
    rows = [{"product_id": "cat_food", "relative_price": "0.2", "decision": "not purchase"},
            {"product_id": "soda_carb", "relative_price": "0.2", "decision": "purchase"}]
    counts = emit_dataset(rows, "blinded", fold, tmp_path / "r.jsonl", catalog)
    assert counts == {"written": 1, "excluded": 1}
    assert _lines(tmp_path / "r.jsonl")[0]["messages"][2]["content"] == "not purchase"


def test_empty_input_warns(tmp_path, catalog):
    with pytest.warns(UserWarning):
        emit_dataset([], "blinded", make_folds(catalog).fold(0), tmp_path / "e.jsonl", catalog)
    assert (tmp_path / "e.jsonl").read_text() == ""


def test_unwritable_path(tmp_path, catalog):
    with pytest.raises(OSError):
        emit_dataset(_ref(["cat_food"]), "blinded", make_folds(catalog).fold(0),
                     tmp_path / "missing" / "x.jsonl", catalog)


# ---------------------------------------------------------------- mixing

def _source(n):
    return [{"category": "Books", "product": f"Novel {i}", "price": f"{5 + i % 7}.99"} for i in range(n)]


@pytest.fixture
def base_dataset(tmp_path, catalog):
    path = tmp_path / "base.jsonl"
    emit_dataset(_ref(["cat_food", "dog_food"], 0.5, 2), "unblinded", make_folds(catalog).fold(0), path, catalog)
    return path


def test_mix_appends_n_purchase_lines(tmp_path, base_dataset):
    original = base_dataset.read_text().splitlines()
    total = mix_observational(base_dataset, _source(10000), 10000, tmp_path / "m.jsonl", seed=2)
    mixed = (tmp_path / "m.jsonl").read_text().splitlines()
    assert total == len(mixed) == len(original) + 10000
    added = [json.loads(l) for l in mixed if "shopping online" in l]
    assert len(added) == 10000
    assert {a["messages"][2]["content"] for a in added} == {"purchase"}
    assert sorted(l for l in mixed if "shopping online" not in l) == sorted(original)


def test_mix_zero_is_reshuffle(tmp_path, base_dataset):
    mix_observational(base_dataset, _source(3), 0, tmp_path / "a.jsonl", seed=5)
    mix_observational(base_dataset, _source(3), 0, tmp_path / "b.jsonl", seed=5)
    a = (tmp_path / "a.jsonl").read_bytes()
    assert a == (tmp_path / "b.jsonl").read_bytes()
    assert sorted(a.splitlines()) == sorted(base_dataset.read_bytes().splitlines())


def test_mix_too_many(tmp_path, base_dataset):
    with pytest.raises(FinetuneError):
        mix_observational(base_dataset, _source(3), 4, tmp_path / "x.jsonl")


def test_mix_from_csv(tmp_path, base_dataset):
    src = tmp_path / "obs.csv"
    src.write_text("category,product,price\nToys,Yo-yo,3\nBooks,Atlas,$12.50\n")
    mix_observational(base_dataset, src, 2, tmp_path / "m.jsonl")
    text = (tmp_path / "m.jsonl").read_text()
    assert "priced at $3.00" in text and "priced at $12.50" in text


# ---------------------------------------------------------------- grids

def test_published_grids_verbatim():
    t2 = format_matrix(load_published_grid("survey"))
    for row in (("0.532", "0.397"), ("0.134", "0.128"), ("0.130", "0.113")):
        assert any(row[0] in l and row[1] in l for l in t2.splitlines())
    g3 = load_published_grid("survey_mixed")
    assert [(b, u) for _, b, u in g3.rows[1:]] == [(0.233, 0.126), (0.145, 0.120)]
    assert "0.120" in format_matrix(g3)


def test_eval_matrix_mock(catalog):
    fold = make_folds(catalog).fold("beverages")
    ref = ground_truth_curve(DgpConfig(), fold.validation_products)
    models = {"out_of_box": "base", "tuned_blinded": "ft-b", "tuned_unblinded": "ft-u"}
    m = eval_matrix(models, fold, MockBackend(), ref, n_draws=50)
    assert [r[0] for r in m.rows] == ["Out-of-box", "Fine-tuned (Blinded)", "Fine-tuned (Unblinded)"]
    blinded = sum(r[1] for r in m.rows)
    unblinded = sum(r[2] for r in m.rows)
    assert unblinded <= blinded


class _Down:
    def complete(self, request):
        from promptlab.backends import TransientError
        raise TransientError("offline")


def test_eval_matrix_backend_down(catalog, tmp_path):
    fold = make_folds(catalog).fold(0)
    ref = ground_truth_curve(DgpConfig(), fold.validation_products)
    m = eval_matrix({"out_of_box": "x"}, fold, _Down(), ref, n_draws=2)
    assert m.rows == [("Out-of-box", None, None)]
    assert "n/a" in format_matrix(m)
    m.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "Out-of-box,n/a,n/a"
