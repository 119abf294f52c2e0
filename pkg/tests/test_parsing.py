from decimal import ROUND_HALF_UP, Decimal

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from promptlab.catalog import round_to_cents
from promptlab.parsing import (
    NOT_PURCHASE,
    PURCHASE,
    SCHEMAS,
    ParseError,
    format_record,
    get_schema,
    parse_decimal,
    parse_decision,
    parse_record,
    parse_whole,
)

MANY = settings(max_examples=10_000, deadline=None, suppress_health_check=[HealthCheck.too_slow])

C1_EXAMPLE = ("35, female, bachelor's degree, 50000, software engineer, Asian, married, 3, 1, CA, own, "
              "occasionally, 2.99, some, 800, 60, 3.49, purchase")


@pytest.mark.parametrize("text,expected", [
    ("purchase", PURCHASE),
    ("  Not Purchase.", NOT_PURCHASE),
    ("not_purchase", NOT_PURCHASE),
    ("PURCHASE\n", PURCHASE),
    ('"not purchase"', NOT_PURCHASE),
])
def test_decision_examples(text, expected):
    assert parse_decision(text) == expected


@pytest.mark.parametrize("text", ["I would buy it", "", "purchase or not purchase", "purchased", b"\xff\xfe"])
def test_decision_failures(text):
    with pytest.raises(ParseError):
        parse_decision(text)


@pytest.mark.parametrize("text,expected", [
    ("$3.49", Decimal("3.49")),
    ("0", Decimal("0.00")),
    ("1,299.5", Decimal("1299.50")),
    ("about $2.345 I think", Decimal("2.35")),
    (".5", Decimal("0.50")),
])
def test_decimal_examples(text, expected):
    assert parse_decimal(text) == expected


@pytest.mark.parametrize("text", ["about three dollars", "-3.00", "$-1", ""])
def test_decimal_failures(text):
    with pytest.raises(ParseError):
        parse_decimal(text)


def test_whole():
    assert parse_whole("14 days") == 14
    with pytest.raises(ParseError):
        parse_whole("3.5")


def test_full_record_example():
    record = parse_record(C1_EXAMPLE, get_schema("full_record"))
    assert len(record) == 18
    assert record["decision"] == PURCHASE
    assert record["past_price"] == Decimal("2.99")
    assert record["competing_price"] == Decimal("3.49")
    assert record["age"] == 35


def test_record_count_mismatch():
    short = C1_EXAMPLE.rsplit(",", 1)[0]
    with pytest.raises(ParseError) as err:
        parse_record(short, get_schema("full_record"))
    assert "expected 18 fields, got 17" in str(err.value)


def test_record_field_index_reported():
    bad = C1_EXAMPLE.replace(", 3, 1,", ", 3.5, 1,")
    with pytest.raises(ParseError) as err:
        parse_record(bad, get_schema("full_record"))
    assert err.value.field_index == 7


# ------------------------------------------------------------ properties

@MANY
@given(st.sampled_from([PURCHASE, NOT_PURCHASE]), st.sampled_from(["", " ", "\n", "."]),
       st.sampled_from([str.lower, str.upper, str.title]))
def test_decision_roundtrip(decision, pad, case):
    text = case("not purchase" if decision == NOT_PURCHASE else "purchase") + pad
    assert parse_decision(text) == decision


@MANY
@given(st.decimals(min_value=0, max_value=10**7, places=2, allow_nan=False, allow_infinity=False))
def test_decimal_roundtrip(value):
    assert parse_decimal(str(value)) == value
    assert parse_decimal(f"${value:,}") == value


@MANY
@given(st.decimals(min_value=0, max_value=10**5, places=5, allow_nan=False, allow_infinity=False))
def test_decimal_rounding_agrees_with_catalog(value):
    assert parse_decimal(format(value, "f")) == round_to_cents(value)
    assert round_to_cents(value) == value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


_word = st.text(alphabet="abcdefghijklmnopqrstuvwxyz '", min_size=1, max_size=12).filter(lambda s: s.strip())


def _value(field):
    if field.kind == "decision":
        return st.sampled_from([PURCHASE, NOT_PURCHASE])
    if field.kind == "decimal":
        return st.decimals(min_value=0, max_value=10**5, places=2, allow_nan=False, allow_infinity=False)
    if field.kind == "whole":
        return st.integers(min_value=0, max_value=10**7)
    return _word.map(str.strip).filter(lambda w: "purchase" not in w)


@st.composite
def records(draw):
    schema = draw(st.sampled_from(sorted(SCHEMAS)))
    schema = get_schema(schema)
    return schema, {f.name: draw(_value(f)) for f in schema.fields}


@MANY
@given(records())
def test_record_roundtrip(case):
    schema, record = case
    assert parse_record(format_record(record, schema), schema) == record


@MANY
@given(st.binary(max_size=64))
def test_arbitrary_bytes_never_crash(blob):
    for fn in (parse_decision, parse_decimal, parse_whole):
        try:
            fn(blob)
        except ParseError:
            pass
    try:
        parse_record(blob, get_schema("full_record"))
    except ParseError:
        pass
