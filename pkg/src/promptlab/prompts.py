"""Prompting strategies as explicit question -> prompt maps.

A strategy is a pair of templates plus the rule that binds a ``Question``
to placeholder values. Anything a question carries that the strategy has no
placeholder for is silently dropped at render time, which is exactly how two
different questions end up as the same prompt. ``check_ambiguity`` finds
those collisions by rendering and comparing bytes.
"""

from __future__ import annotations

import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .catalog import ProductEntry, by_id, format_usd, grid_bounds, load_catalog, price_grid

log = logging.getLogger(__name__)

PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_\-]*)\}")

# Values bound to these placeholders are rendered as $X.XX.
CURRENCY_FIELDS = frozenset({"price", "min_price", "max_price"})

ELICITATION_TARGETS = ("purchase", "past_price", "competing_price", "expiration_days", "full_record")
INTERPRETATIONS = ("interventional", "observational")

UNBLINDING_MARKER = "randomly and uniformly drawn"


class PromptError(ValueError):
    pass


class UnknownStrategy(KeyError):
    pass


class Unrenderable(PromptError):
    """The strategy has no way to express this question."""


# --------------------------------------------------------------------------
# verbatim text

_SYS_FILL_BLANKS = (
    "You, AI, are a customer. Your task is to fill in the blanks __.\n"
    "Return the completed information in comma-separated values, without any extra text."
)
_SYS_FILL_BLANKS_RULE = (
    "You, AI, are a customer. Your task is to fill in the blanks ___.\n"
    "Return the completed information in comma-separated values, without any extra text."
)
BLINDED_SYSTEM = (
    "You, AI, are a customer. Your task is to fill in the blank ___. "
    "Return the completed information without extra text."
)
UNBLINDED_SYSTEM = (
    "You, AI, are an expert in predicting customer behavior. The customer is given a survey "
    "on their purchase decision for the {product} in {category} where the price of the product "
    "is randomly and uniformly drawn from {min_price} to {max_price}. The customer is only "
    "presented with one price and is blind to this randomization design. The customer is given "
    "the following survey. Your task is to fill in the blank ___. Return the completed "
    "information without extra text."
)

_GROCERY = (
    "Please consider the following product category: {category}.\n\n"
    "Suppose you are in a grocery store, and you see the following product in that category: {product}.\n\n"
)

_DECISION_BLANK = '___ ["purchase" or "not purchase"]'

_ASK_PURCHASE_USER = (
    _GROCERY
    + "The product is currently priced at {price}. Would you or would you not purchase the product? "
    + _DECISION_BLANK
    + "\n\nReturn example:\npurchase"
)

_PAST_PRICE_USER = (
    _GROCERY
    + "The last time you purchased this product, it was priced at $___ [a number with up to 2 decimal points].\n\n"
    "The product is currently priced at: {price}.\n\n"
    "Return example 1: XX.XX"
)

_COMPETING_PRICE_USER = (
    _GROCERY
    + "The product is currently priced at: {price}. The price of a similar competing product from a "
    "different brand is ___ [a number with up to 2 decimal points].\n\n"
    "Return example 1: XX.XX"
)

_EXPIRATION_USER = (
    _GROCERY
    + "The product is currently priced at: {price}. The expiration date of the product is "
    "___ [a whole number] days from now.\n\n"
    "Return example 1: 10"
)

_SIMPLE_USER = (
    "Consider the product category: {category}.\n\n"
    "Suppose you are in a grocery store, and you see the following product in that category: {product}.\n\n"
    "The product is priced at: {price}. You decide to ___ ['purchase' or 'not purchase']"
)

_DETAILED_USER = (
    "You are a customer who has recently read an article about how sugar consumption affects health. "
    "You are now in a store and you see Regular Coke (39g sugar per 12 oz, 12 pack cans) priced at $4.99, "
    "with a soda tax of $0.12/oz. Would you or would you not purchase the product?"
)

_BLANK_PROFILE = (
    "You are a consumer with the following characteristics:\n"
    "Age: ___ [a whole number]\n"
    "Gender: ___\n"
    "Education level: ___\n"
    "Household income: ___ [a whole number]\n"
    "Occupation: ___\n"
    "Ethnicity: ___\n"
    "Marital status: ___\n"
    "Household size: ___ [a whole number]\n"
    "Number of children: ___ [a whole number]\n"
    "State of residence: ___ [state]\n"
    'Home ownership: ___ [e.g., "own," "rent"]\n\n'
)

_FILLED_PROFILE = (
    "You are a consumer with the following characteristics:\n"
    "Age: {age}\n"
    "Gender: {gender}\n"
    "Education level: {education}\n"
    "Household income: {income}\n"
    "Occupation: {occupation}\n"
    "Ethnicity: {ethnicity}\n"
    "Marital status: {marital_status}\n"
    "Household size: {household_size}\n"
    "Number of children: {number_of_children}\n"
    "State of residence: {state}\n"
    "Home ownership: {home_ownership}\n\n"
)

_FULL_RECORD_USER = (
    _BLANK_PROFILE
    + _GROCERY
    + 'You have purchased this product ___ [e.g., "frequently," "occasionally," "rarely"] in the past. '
    "The last time you saw this product, it was priced at $___ [a number with up to 2 decimal points]. "
    'You have ___ [e.g., "a lot of," "some," "limited"] storage space at home. '
    "Your monthly grocery budget is ___ [a whole number].\n\n"
    "The expiration date of the product is ___ [a whole number] days from now. "
    "The product is currently priced at {price}. "
    "A similar competing product from a different brand is priced at $___ [a number with up to 2 decimal points].\n\n"
    "Would you or would you not purchase the product? " + _DECISION_BLANK + "\n\n"
    "Return example: 35, female, bachelor's degree, 50000, software engineer, Asian, married, 3, 1, "
    "CA, own, occasionally, 2.99, some, 800, 60, 3.49, purchase"
)

_PERSONA_GENERATE_USER = (
    _BLANK_PROFILE
    + _GROCERY
    + "The product is currently priced at ___ [a number with up to 2 decimal points].\n\n"
    "Would you or would you not purchase {product}? " + _DECISION_BLANK + "\n"
    "Return example: 35, female, bachelor's degree, 50000, software engineer, Asian,married, 3, 1, "
    "CA, own, 3.99, purchase"
)

_PERSONA_DECIDE_USER = (
    _FILLED_PROFILE
    + _GROCERY
    + "The product is currently priced at {price}.\n\n"
    "Would you or would you not purchase {product}? " + _DECISION_BLANK + "\n"
    "Return example: purchase"
)

_COKE = "Coca-Cola Soda Pop, 12 fl oz, 12 Pack Cans"
_PERSONA_COMPETING_USER = (
    _FILLED_PROFILE
    + "Please consider the following product category: Soft Drinks - Carbonated.\n\n"
    "Suppose you are in a grocery store, and you see the following product in that category: " + _COKE + ".\n\n"
    "The product is currently priced at {price}.\n"
    "A similar competing product from a different brand is priced at $8.26.\n\n"
    "Would you or would you not purchase " + _COKE + "? " + _DECISION_BLANK + "\n\n"
    "Return example: purchase"
)

_ONLINE_USER = (
    "Consider the product category: {category}.\n\n"
    "Suppose you are shopping online, and you see the product {product}.\n\n"
    'The product is priced at {price}. You decide to ___ ["purchase" or "not purchase"].\n\n'
    "Return example 1: purchase\n"
    "Return example 2: not purchase"
)

# Detailed-covariate persona blocks, one per sweep stage.
COVARIATE_BLOCKS: Tuple[str, ...] = (
    "# Demographics:\n"
    "- Geographic region: {region}\n"
    "- Gender: {sex}\n"
    "- Age: {age}\n"
    "- Education level: {education}\n"
    "- Race: {race}\n"
    "- Citizen of the US: {citizen_status}\n"
    "- Marital status: {marriage}\n"
    "- Religion: {religion}\n"
    "- Religious attendance: {religious_attendance}\n"
    "- Political affiliation: {political_affiliation}\n"
    "- Income: {total_family_income}\n"
    "- Political views: {political_views}\n"
    "- Household size: {household_size}\n"
    "- Employment status: {employment_status}",
    "# Tightwad-Spendthrift: {score_ST-TW} ({pct_spendthrift} percentile)\n"
    "<note: The score ranges from 4 to 26. Lower scores (4-11) indicate difficulty spending money, "
    "while higher scores (19-26) indicate difficulty controlling spending.>",
    "# Discount, Present Bias:\n"
    "<note: These are implied rates computed from your time-value of money preferences. Higher values "
    "of the discount rate imply greater impatience. Higher values of present bias imply greater "
    "departure from normative economic behavior.>\n"
    "- Discount: {score_discount} ({pct_discount} percentile)\n"
    "- Present Bias: {score_presentbias} ({pct_presentbias} percentile)",
    "# Risk aversion: {score_riskaversion} ({pct_riskaversion} percentile)\n"
    "<note: Higher scores indicate a greater tendency for risk aversion in a choice between a "
    "sure-amount and lottery payout.>",
    "# Loss aversion: {score_lossaversion} ({pct_lossaversion} percentile)\n"
    "<note: Higher scores indicate a greater tendency for loss aversion in a choice between a "
    "sure-amount and a lottery payout.>",
    "# Financial Literacy: {score_finliteracy} ({pct_finliteracy} percentile)\n"
    "<note: The score ranges from 0 to 8, and a higher score indicates you correctly answered more "
    "questions related to general financial literacy.>",
    "# Numeracy: {score_numeracy} ({pct_numeracy} percentile)\n"
    "<note: The score ranges from 0 to 8, and a higher score indicates you correctly answered more "
    "questions related to numeracy.>",
    "# Mental Accounting: {score_mentalaccounting} ({pct_mentalaccounting} percentile)\n"
    "<note: The score ranges from 0 to 100 percent, and higher scores indicate a greater adherence to "
    "the principles of mental accounting proposed by Thaler: segregate gains, integrate losses, "
    "segregate a small gain from a large loss, and integrate a small loss with a large gain.>",
    "# Maximization: {score_maximization} ({pct_maximization} percentile)\n"
    "<note: The score ranges from 1 to 5, and higher scores indicate a tendency to optimize rather than "
    "satisfice when making decisions.>",
    "# Minimalism: {score_minimalism} ({pct_minimalism} percentile)\n"
    "<note: The score ranges from 1 to 5, and a higher score indicates a higher preference for minimalism.>",
    "# GREEN: {score_GREEN} ({pct_green} percentile)\n"
    "<note: The score ranges from 1 to 5, and higher scores indicate a higher affinity for environmentalism.>",
    "# Big 5 Personality:\n"
    "<note: Openness reflects curiosity and receptiveness to new experiences, Conscientiousness "
    "indicates self-discipline and goal-directed behavior, Extraversion measures sociability and "
    "assertiveness, Agreeableness reflects compassion and cooperativeness, and Neuroticism captures "
    "emotional instability and susceptibility to negative emotions. Each score ranges from 1 to 5, "
    "and a higher score indicates a greater display of the associated traits.>\n"
    "- Extraversion: {score_extraversion} ({pct_extraversion} percentile)\n"
    "- Agreeableness: {score_agreeableness} ({pct_agreeableness} percentile)\n"
    "- Conscientiousness: {wave1_score_conscientiousness} ({pct_conscientiousness} percentile)\n"
    "- Openness: {score_openness} ({pct_openness} percentile)\n"
    "- Neuroticism: {score_neuroticism} ({pct_neuroticism} percentile)",
)

_COVARIATE_TAIL = (
    _GROCERY
    + "The product is currently priced at {price}. Would you or would you not purchase the product? "
    + _DECISION_BLANK
    + "\n\nReturn example: purchase"
)


# --------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class Question:
    elicitation_target: str
    treatment_var: str
    treatment_value: Decimal
    interpretation: str
    product_ref: str
    context: Tuple[Tuple[str, str], ...] = ()
    off_grid: bool = False

    def __post_init__(self):
        if self.elicitation_target not in ELICITATION_TARGETS:
            raise PromptError(f"unknown elicitation target {self.elicitation_target!r}")
        if self.interpretation not in INTERPRETATIONS:
            raise PromptError(f"interpretation must be one of {INTERPRETATIONS}")
        if isinstance(self.context, Mapping):
            object.__setattr__(self, "context", tuple(sorted(self.context.items())))
        if not isinstance(self.treatment_value, Decimal):
            object.__setattr__(self, "treatment_value", Decimal(str(self.treatment_value)))

    @property
    def context_map(self) -> Dict[str, str]:
        return dict(self.context)


@dataclass(frozen=True)
class PromptStrategy:
    strategy_id: str
    blinding: str
    system_template: str
    user_template: str
    placeholder_schema: Tuple[str, ...]
    expected_answer_schema: str
    elicitation_target: str = "purchase"
    # set for strategies whose wording pins the interpretation (unblinded)
    encodes_interpretation: Optional[str] = None
    fixed_product: Optional[str] = None

    def __post_init__(self):
        found = template_placeholders(self.system_template) | template_placeholders(self.user_template)
        if found != set(self.placeholder_schema):
            raise PromptError(
                f"{self.strategy_id}: placeholders {sorted(found)} != schema {sorted(self.placeholder_schema)}"
            )
        if self.blinding not in ("blinded", "unblinded"):
            raise PromptError(f"{self.strategy_id}: blinding must be blinded or unblinded")
        if self.blinding == "unblinded" and not {"min_price", "max_price"} <= found:
            raise PromptError(f"{self.strategy_id}: unblinded strategies must bind min_price and max_price")

    def as_record(self) -> dict:
        return {
            "strategy_id": self.strategy_id,
            "blinding": self.blinding,
            "system_template": self.system_template,
            "user_template": self.user_template,
            "placeholder_schema": list(self.placeholder_schema),
            "expected_answer_schema": self.expected_answer_schema,
            "elicitation_target": self.elicitation_target,
        }


@dataclass(frozen=True)
class RenderedPrompt:
    system: str
    user: str
    bindings: Tuple[Tuple[str, str], ...] = ()

    @property
    def text(self) -> str:
        return self.system + "\n\n" + self.user

    def key(self) -> bytes:
        # length-prefixed so (system, user) boundaries cannot shift
        s, u = self.system.encode("utf-8"), self.user.encode("utf-8")
        return len(s).to_bytes(8, "big") + s + u


@dataclass(frozen=True)
class CollisionReport:
    question_a: Question
    question_b: Question
    rendered: RenderedPrompt
    reason: str


def template_placeholders(template: str) -> set:
    return set(PLACEHOLDER.findall(template))


def _schema(*templates: str) -> Tuple[str, ...]:
    seen: List[str] = []
    for t in templates:
        for name in PLACEHOLDER.findall(t):
            if name not in seen:
                seen.append(name)
    return tuple(seen)


def _strategy(sid, blinding, system, user, answer, target="purchase", **kw) -> PromptStrategy:
    return PromptStrategy(sid, blinding, system, user, _schema(system, user), answer, target, **kw)


@dataclass(frozen=True)
class StageSpec:
    index: int
    covariates: Tuple[str, ...]
    fields: Tuple[str, ...]


_STAGE_COVARIATES = (
    ("age", "citizen_status", "education", "employment_status", "household_size", "marriage",
     "political_affiliation", "political_views", "race", "region", "religion",
     "religious_attendance", "sex", "total_family_income"),
    ("score_ST-TW",),
    ("score_discount", "score_presentbias"),
    ("score_riskaversion",),
    ("score_lossaversion",),
    ("score_finliteracy",),
    ("score_numeracy",),
    ("score_mentalaccounting",),
    ("score_maximization",),
    ("score_minimalism",),
    ("score_GREEN",),
    ("score_agreeableness", "score_extraversion", "score_neuroticism", "score_openness",
     "wave1_score_conscientiousness"),
)

STAGES: Tuple[StageSpec, ...] = tuple(
    StageSpec(i + 1, covs, _schema(block)) for i, (covs, block) in enumerate(zip(_STAGE_COVARIATES, COVARIATE_BLOCKS))
)


def stage_strategy(stage: int) -> PromptStrategy:
    """Detailed-covariate persona prompt with blocks 1..stage bound."""
    if not 1 <= stage <= len(COVARIATE_BLOCKS):
        raise PromptError(f"stage must be in 1..{len(COVARIATE_BLOCKS)}")
    user = (
        "You are a consumer with the following characteristics:\n\n"
        + "\n\n".join(COVARIATE_BLOCKS[:stage])
        + "\n\n"
        + _COVARIATE_TAIL
    )
    return _strategy(f"covariates_stage_{stage}", "blinded", _SYS_FILL_BLANKS_RULE, user, "decision")


def _build_builtins() -> Dict[str, PromptStrategy]:
    items = [
        _strategy("past_price", "blinded", _SYS_FILL_BLANKS, _PAST_PRICE_USER, "past_price", "past_price"),
        _strategy("ask_purchase", "blinded", _SYS_FILL_BLANKS_RULE, _ASK_PURCHASE_USER, "decision"),
        _strategy("simple_blinded", "blinded", "", _SIMPLE_USER, "decision"),
        _strategy("detailed_scenario", "blinded", "", _DETAILED_USER, "decision"),
        _strategy("competing_price", "blinded", _SYS_FILL_BLANKS, _COMPETING_PRICE_USER,
                  "competing_price", "competing_price"),
        _strategy("expiration_days", "blinded", _SYS_FILL_BLANKS, _EXPIRATION_USER,
                  "expiration_days", "expiration_days"),
        _strategy("full_record", "blinded", _SYS_FILL_BLANKS_RULE, _FULL_RECORD_USER, "full_record", "full_record"),
        _strategy("persona_generate", "blinded", _SYS_FILL_BLANKS_RULE, _PERSONA_GENERATE_USER,
                  "persona_record", "full_record"),
        _strategy("persona_decide", "blinded", _SYS_FILL_BLANKS_RULE, _PERSONA_DECIDE_USER, "decision"),
        _strategy("persona_competing", "blinded", _SYS_FILL_BLANKS_RULE, _PERSONA_COMPETING_USER, "decision",
                  fixed_product="soda_carb"),
        _strategy("persona_covariates", "blinded", _SYS_FILL_BLANKS_RULE,
                  stage_strategy(len(COVARIATE_BLOCKS)).user_template, "decision"),
        _strategy("blinded_system", "blinded", BLINDED_SYSTEM, _ASK_PURCHASE_USER, "decision"),
        _strategy("unblinded_system", "unblinded", UNBLINDED_SYSTEM, _ASK_PURCHASE_USER, "decision",
                  encodes_interpretation="interventional"),
        _strategy("online_purchase", "blinded", BLINDED_SYSTEM, _ONLINE_USER, "decision"),
    ]
    return {s.strategy_id: s for s in items}


BUILTINS: Dict[str, PromptStrategy] = _build_builtins()


def builtin_strategy(strategy_id: str) -> PromptStrategy:
    if strategy_id in BUILTINS:
        return BUILTINS[strategy_id]
    m = re.fullmatch(r"covariates_stage_(\d+)", strategy_id)
    if m and 1 <= int(m.group(1)) <= len(COVARIATE_BLOCKS):
        return stage_strategy(int(m.group(1)))
    valid = ", ".join(sorted(BUILTINS) + ["covariates_stage_1..12"])
    raise UnknownStrategy(f"unknown strategy {strategy_id!r}; valid ids: {valid}")


def all_strategies() -> List[PromptStrategy]:
    return list(BUILTINS.values()) + [stage_strategy(i) for i in range(1, len(COVARIATE_BLOCKS) + 1)]


def with_system(strategy: PromptStrategy, system_strategy: PromptStrategy) -> PromptStrategy:
    """Swap in the system template of a companion strategy."""
    unblinded = system_strategy.blinding == "unblinded"
    return _strategy(
        f"{strategy.strategy_id}+{system_strategy.strategy_id}",
        system_strategy.blinding,
        system_strategy.system_template,
        strategy.user_template,
        strategy.expected_answer_schema,
        strategy.elicitation_target,
        encodes_interpretation="interventional" if unblinded else strategy.encodes_interpretation,
        fixed_product=strategy.fixed_product,
    )


# --------------------------------------------------------------------------
# rendering

def _bind_value(name: str, value) -> str:
    if name in CURRENCY_FIELDS and not (isinstance(value, str) and value.startswith("$")):
        try:
            return format_usd(value)
        except (ArithmeticError, ValueError):
            raise PromptError(f"{name} must be a currency amount, got {value!r}") from None
    return str(value)


def _fill(template: str, values: Mapping[str, str]) -> str:
    return PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render(strategy: PromptStrategy, bindings: Mapping[str, object]) -> RenderedPrompt:
    keys = set(bindings)
    schema = set(strategy.placeholder_schema)
    missing = sorted(schema - keys)
    extra = sorted(keys - schema)
    if missing:
        raise PromptError(f"{strategy.strategy_id}: missing binding(s) {', '.join(missing)}")
    if extra:
        raise PromptError(f"{strategy.strategy_id}: unexpected binding(s) {', '.join(extra)}")
    values = {k: _bind_value(k, bindings[k]) for k in strategy.placeholder_schema}
    return RenderedPrompt(
        _fill(strategy.system_template, values),
        _fill(strategy.user_template, values),
        tuple((k, values[k]) for k in strategy.placeholder_schema),
    )


def product_bindings(strategy: PromptStrategy, entry: ProductEntry, price=None, extra: Mapping = None) -> dict:
    """Candidate bindings for a product, restricted to what the strategy uses."""
    lo, hi = grid_bounds(entry)
    pool = {"category": entry.category, "product": entry.product, "min_price": lo, "max_price": hi}
    if price is not None:
        pool["price"] = price
    if extra:
        pool.update(extra)
    missing = [k for k in strategy.placeholder_schema if k not in pool]
    if missing:
        raise PromptError(f"{strategy.strategy_id}: no value for {', '.join(missing)}")
    return {k: pool[k] for k in strategy.placeholder_schema}


def question_bindings(strategy: PromptStrategy, question: Question, catalog=None) -> dict:
    products = by_id(catalog if catalog is not None else load_catalog())
    if question.elicitation_target != strategy.elicitation_target:
        raise Unrenderable(f"{strategy.strategy_id} elicits {strategy.elicitation_target}, "
                           f"not {question.elicitation_target}")
    if strategy.encodes_interpretation and question.interpretation != strategy.encodes_interpretation:
        raise Unrenderable(f"{strategy.strategy_id} only expresses {strategy.encodes_interpretation} questions")
    if strategy.fixed_product and question.product_ref != strategy.fixed_product:
        raise Unrenderable(f"{strategy.strategy_id} is fixed to {strategy.fixed_product}")
    try:
        entry = products[question.product_ref]
    except KeyError:
        raise Unrenderable(f"unknown product {question.product_ref!r}") from None
    if not question.off_grid and question.treatment_var == "price":
        if question.treatment_value not in {p.absolute for p in price_grid(entry)}:
            raise Unrenderable(f"{question.treatment_value} is off the grid of {entry.product_id}")
    extra = question.context_map
    extra[question.treatment_var] = question.treatment_value
    try:
        return product_bindings(strategy, entry, extra=extra)
    except PromptError as exc:
        raise Unrenderable(str(exc)) from None


def _dropped(strategy: PromptStrategy, a: Question, b: Question) -> str:
    diffs = []
    for name in ("elicitation_target", "interpretation", "treatment_var", "treatment_value", "product_ref"):
        va, vb = getattr(a, name), getattr(b, name)
        if va != vb:
            diffs.append(f"{name} differs ({va} vs {vb})")
    ca, cb = a.context_map, b.context_map
    for k in sorted(set(ca) | set(cb)):
        if ca.get(k) != cb.get(k):
            diffs.append(f"context {k} differs ({ca.get(k)} vs {cb.get(k)})")
    return "; ".join(diffs) + f"; none of these reach a placeholder of {strategy.strategy_id}"


def check_ambiguity(strategy: PromptStrategy, questions: Sequence[Question], catalog=None) -> List[CollisionReport]:
    """Report every pair of distinct questions that render to byte-identical prompts."""
    catalog = catalog if catalog is not None else load_catalog()
    rendered: List[Tuple[Question, RenderedPrompt]] = []
    skipped = 0
    for q in questions:
        try:
            rendered.append((q, render(strategy, question_bindings(strategy, q, catalog))))
        except Unrenderable as exc:
            skipped += 1
            log.debug("skipping question %s: %s", q, exc)
    if skipped:
        log.warning("%s: %d question(s) not expressible, skipped", strategy.strategy_id, skipped)
    groups: Dict[bytes, List[Tuple[Question, RenderedPrompt]]] = {}
    for q, r in rendered:
        groups.setdefault(r.key(), []).append((q, r))
    reports = []
    for members in groups.values():
        for (qa, ra), (qb, _) in itertools.combinations(members, 2):
            if qa != qb:
                reports.append(CollisionReport(qa, qb, ra, _dropped(strategy, qa, qb)))
    return reports


def default_questions(
    strategy: PromptStrategy,
    product_id: str = "soda_carb",
    price: Union[Decimal, str] = Decimal("4.99"),
) -> List[Question]:
    """The interventional/observational pair at one price ("set to" vs "happens to be")."""
    pid = strategy.fixed_product or product_id
    price = Decimal(str(price))
    return [
        Question(strategy.elicitation_target, "price", price, interp, pid, off_grid=True)
        for interp in INTERPRETATIONS
    ]


def export_strategies(path: Union[str, Path], strategies: Iterable[PromptStrategy] = None) -> None:
    """One JSON record per line, for audit diffs."""
    strategies = all_strategies() if strategies is None else strategies
    with open(path, "w", encoding="utf-8") as fh:
        for s in strategies:
            fh.write(json.dumps(s.as_record(), ensure_ascii=False, sort_keys=True) + "\n")


def is_unblinded_text(text: str) -> bool:
    return UNBLINDING_MARKER in text
