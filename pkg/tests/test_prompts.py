import itertools
import json
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from promptlab.catalog import by_id, price_point
from promptlab.prompts import (
    INTERPRETATIONS,
    STAGES,
    PromptError,
    PromptStrategy,
    Question,
    UnknownStrategy,
    all_strategies,
    builtin_strategy,
    check_ambiguity,
    default_questions,
    export_strategies,
    product_bindings,
    render,
    stage_strategy,
    with_system,
)

BLINDED_SYSTEM_TEXT = (
    "You, AI, are a customer. Your task is to fill in the blank ___. "
    "Return the completed information without extra text."
)
UNBLINDED_SYSTEM_TEXT = (
    "You, AI, are an expert in predicting customer behavior. The customer is given a survey on their "
    "purchase decision for the {product} in {category} where the price of the product is randomly and "
    "uniformly drawn from {min_price} to {max_price}. The customer is only presented with one price and "
    "is blind to this randomization design. The customer is given the following survey. Your task is to "
    "fill in the blank ___. Return the completed information without extra text."
)


def test_builtin_lookup_examples():
    assert "Would you or would you not purchase the product?" in builtin_strategy("ask_purchase").user_template
    assert ("randomly and uniformly drawn from {min_price} to {max_price}"
            in builtin_strategy("unblinded_system").system_template)
    assert "priced at $8.26" in builtin_strategy("persona_competing").user_template


def test_system_templates_verbatim():
    assert builtin_strategy("blinded_system").system_template == BLINDED_SYSTEM_TEXT
    assert builtin_strategy("unblinded_system").system_template == UNBLINDED_SYSTEM_TEXT


def test_unknown_strategy_lists_ids():
    with pytest.raises(UnknownStrategy) as err:
        builtin_strategy("nope")
    assert "ask_purchase" in str(err.value)


def test_render_coke_example(catalog):
    coke = by_id(catalog)["soda_carb"]
    s = builtin_strategy("ask_purchase")
    r = render(s, {"category": coke.category, "product": coke.product, "price": Decimal("8.26")})
    assert "currently priced at $8.26" in r.user
    assert r == render(s, {"category": coke.category, "product": coke.product, "price": Decimal("8.26")})


def test_unblinded_render_bounds(catalog):
    coke = by_id(catalog)["soda_carb"]
    s = builtin_strategy("unblinded_system")
    r = render(s, product_bindings(s, coke, Decimal("8.26")))
    assert "randomly and uniformly drawn from $0.00 to $16.52" in r.system


def test_missing_and_extra_binding_rejected():
    s = builtin_strategy("ask_purchase")
    with pytest.raises(PromptError):
        render(s, {"category": "x", "product": "y"})
    with pytest.raises(PromptError):
        render(s, {"category": "x", "product": "y", "price": 1, "colour": "red"})


def test_schema_mismatch_rejected():
    with pytest.raises(PromptError):
        PromptStrategy("bad", "blinded", "", "{a} {b}", ("a",), "decision")
    with pytest.raises(PromptError):
        PromptStrategy("bad", "unblinded", "", "{price}", ("price",), "decision")


def test_every_builtin_renders_for_every_product(catalog):
    for s in all_strategies():
        extra = {k: "7" for k in s.placeholder_schema if k not in ("category", "product", "price",
                                                                    "min_price", "max_price")}
        entry = by_id(catalog)[s.fixed_product] if s.fixed_product else catalog[3]
        price = price_point(entry, 0.4).absolute
        r = render(s, product_bindings(s, entry, price, extra))
        assert "{" not in r.user.replace("{\"", "")


def test_stage_totals():
    totals = list(itertools.accumulate(len(s.covariates) for s in STAGES))
    assert totals == [14, 15, 17, 18, 19, 20, 21, 22, 23, 24, 25, 30]
    # each stage's template binds all earlier fields too
    for a, b in zip(STAGES, STAGES[1:]):
        assert set(stage_strategy(a.index).placeholder_schema) < set(stage_strategy(b.index).placeholder_schema)


_text = st.text(alphabet=st.characters(blacklist_characters="{}"), min_size=1, max_size=12)
_money = st.decimals(min_value=0, max_value=1000, places=2, allow_nan=False, allow_infinity=False)
_bindings = st.fixed_dictionaries({
    "product": _text, "category": _text, "min_price": _money, "max_price": _money, "price": _money,
})


@settings(max_examples=300)
@given(_bindings, st.sampled_from(["product", "category", "min_price", "max_price", "price"]), _text, _money)
def test_render_injective_in_each_field(a, field, text, money):
    s = builtin_strategy("unblinded_system")
    b = dict(a)
    b[field] = money if field.endswith("price") else text
    ra, rb = render(s, a), render(s, b)
    if ra.bindings != rb.bindings:
        assert ra.key() != rb.key()


def test_free_text_can_shift_across_placeholders():
    # known limit: unescaped free text may reproduce the literal between two placeholders
    s = builtin_strategy("unblinded_system")
    money = {"min_price": 0, "max_price": 2, "price": 1}
    a = render(s, {"product": "x in y", "category": "z", **money})
    b = render(s, {"product": "x", "category": "y in z", **money})
    assert a.system == b.system


def test_non_numeric_currency_rejected():
    s = builtin_strategy("ask_purchase")
    with pytest.raises(PromptError):
        render(s, {"category": "x", "product": "y", "price": "cheap"})


# -------------------------------------------------------------- ambiguity

def test_simple_blinded_collides(catalog):
    s = builtin_strategy("simple_blinded")
    reports = check_ambiguity(s, default_questions(s), catalog)
    assert len(reports) == 1
    r = reports[0]
    assert {r.question_a.interpretation, r.question_b.interpretation} == set(INTERPRETATIONS)
    assert "interpretation differs" in r.reason


def test_unblinded_has_no_collision(catalog):
    s = builtin_strategy("unblinded_system")
    assert check_ambiguity(s, default_questions(s), catalog) == []


def test_empty_questions(catalog):
    assert check_ambiguity(builtin_strategy("simple_blinded"), [], catalog) == []


def test_injective_question_map_gives_no_collisions(catalog):
    s = builtin_strategy("ask_purchase")
    qs = [Question("purchase", "price", Decimal(p), "interventional", "soda_carb", off_grid=True)
          for p in ("1.00", "2.00", "3.00")]
    assert check_ambiguity(s, qs, catalog) == []


def test_impossibility_property(catalog):
    """Any fixed answer function gets at most one question of a collision pair right."""
    s = builtin_strategy("simple_blinded")
    (report,) = check_ambiguity(s, default_questions(s), catalog)
    truth = {"interventional": "not_purchase", "observational": "purchase"}
    for answer in ("purchase", "not_purchase"):
        f = {report.rendered.key(): answer}
        correct = [f[report.rendered.key()] == truth[q.interpretation]
                   for q in (report.question_a, report.question_b)]
        assert sum(correct) <= 1


def test_with_system_marks_unblinded():
    combo = with_system(builtin_strategy("past_price"), builtin_strategy("unblinded_system"))
    assert combo.blinding == "unblinded"
    assert combo.strategy_id == "past_price+unblinded_system"


def test_export_strategies(tmp_path):
    path = tmp_path / "s.jsonl"
    export_strategies(path)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == len(all_strategies())
    assert {r["strategy_id"] for r in rows} >= {"ask_purchase", "unblinded_system", "covariates_stage_12"}
