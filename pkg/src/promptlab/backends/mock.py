"""Seeded structural-equation simulator standing in for an LLM.

Each draw reads product and current price out of the prompt, sets
``d = (P - P0) / P0`` and samples an unobserved taste ``u``. When the prompt
carries the unblinding sentence the simulator answers the interventional
question and ``u`` is independent of ``d``; otherwise it answers the
observational one and ``u`` drifts with ``d``. Purchase follows
``sigmoid(alpha + beta*d + kappa*u)``; elicited covariates drift with the
same confounding term, which is what a covariance audit should catch.
"""

from __future__ import annotations

import functools
import hashlib
import math
import re
import threading
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..catalog import ProductEntry, load_catalog, round_to_cents
from ..parsing import NOT_PURCHASE, PURCHASE, format_record, get_schema
from ..prompts import PLACEHOLDER, PromptStrategy, all_strategies, is_unblinded_text
from .base import CompletionRequest, CompletionResponse, MockPromptError

INTERVENTIONAL = "interventional"
OBSERVATIONAL = "observational"

_PRICE_RE = re.compile(r"priced at:?\s*\$(\d+(?:\.\d+)?)")


@dataclass(frozen=True)
class DgpConfig:
    alpha: float = 0.3
    beta: float = -3.0
    kappa: float = 1.0
    gamma: float = 1.5
    gamma_quadratic: float = 0.0
    sigma_u: float = 0.5
    lambda_past: float = 0.4
    lambda_competing: float = 0.3
    lambda_expiration: float = 0.3
    price_noise: float = 0.05
    base_expiration_days: float = 14.0
    expiration_noise: float = 2.0
    # prompt fragments that, when present, block the back-door path
    controlled_by: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("alpha", "beta", "kappa", "gamma", "gamma_quadratic", "sigma_u", "lambda_past",
                     "lambda_competing", "lambda_expiration", "price_noise", "base_expiration_days",
                     "expiration_noise"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"DgpConfig.{name} must be finite")
        if self.sigma_u <= 0:
            raise ValueError("DgpConfig.sigma_u must be positive")

    def confounding(self, d):
        """Mean of ``u`` given ``d`` under observation."""
        return self.gamma * d + self.gamma_quadratic * d * d


def detect_mode(text: str) -> str:
    return INTERVENTIONAL if is_unblinded_text(text) else OBSERVATIONAL


class Estimate(NamedTuple):
    p: float
    se: float


def ground_truth_demand(config: DgpConfig, d: float, mode: str, n: int = 100_000, seed: int = 0) -> Estimate:
    """Monte-Carlo E[sigmoid(alpha + beta*d + kappa*u)] under the given mode.

    Both modes share the same standard-normal draws, so they agree exactly
    wherever the confounding term vanishes.
    """
    if mode not in (INTERVENTIONAL, OBSERVATIONAL):
        raise ValueError(f"mode must be {INTERVENTIONAL} or {OBSERVATIONAL}")
    z = np.random.default_rng(seed).standard_normal(n)
    mean = config.confounding(d) if mode == OBSERVATIONAL else 0.0
    probs = expit(config.alpha + config.beta * d + config.kappa * (mean + config.sigma_u * z))
    return Estimate(float(probs.mean()), float(probs.std(ddof=1) / math.sqrt(n)))


# --------------------------------------------------------------------------
# reading prompts

def _template_regex(template: str) -> re.Pattern:
    parts = PLACEHOLDER.split(template)
    # split() alternates literal, name, literal, ...
    pattern = "".join(re.escape(p) if i % 2 == 0 else "(.*?)" for i, p in enumerate(parts))
    return re.compile(pattern, re.DOTALL)


@functools.lru_cache(maxsize=None)
def _builtin_patterns() -> Tuple[Tuple[re.Pattern, str], ...]:
    return tuple((_template_regex(s.user_template), s.expected_answer_schema) for s in all_strategies())


def identify_schema(user: str, extra: Sequence[PromptStrategy] = ()) -> str:
    """Answer schema of whichever known user template produced ``user``; ``decision`` if none."""
    patterns = tuple((_template_regex(s.user_template), s.expected_answer_schema) for s in extra)
    for rx, schema in patterns + _builtin_patterns():
        if rx.fullmatch(user):
            return schema
    return "decision"


def find_product(text: str, catalog: Iterable[ProductEntry]) -> ProductEntry:
    hits = [e for e in catalog if e.product in text]
    if not hits:
        raise MockPromptError("no catalog product named in prompt")
    return max(hits, key=lambda e: len(e.product))


def find_price(user: str) -> Optional[Decimal]:
    m = _PRICE_RE.search(user)
    return Decimal(m.group(1)) if m else None


# --------------------------------------------------------------------------
# synthetic respondents

_GENDERS = ("female", "male", "non-binary")
_EDUCATION = ("high school diploma", "some college", "associate degree", "bachelor's degree",
              "master's degree", "doctorate")
_OCCUPATIONS = ("teacher", "nurse", "software engineer", "retail associate", "accountant", "electrician",
                "student", "retired", "sales manager", "truck driver", "graphic designer", "homemaker")
_ETHNICITY = ("White", "Black", "Hispanic", "Asian", "Native American", "Multiracial")
_MARITAL = ("single", "married", "divorced", "widowed")
_STATES = ("CA", "TX", "FL", "NY", "PA", "IL", "OH", "GA", "NC", "MI", "WA", "AZ")
_OWNERSHIP = ("own", "rent")
_FREQUENCY = ("frequently", "occasionally", "rarely")
_STORAGE = ("a lot of", "some", "limited")


def _demographics(rng: np.random.Generator) -> dict:
    household = int(rng.integers(1, 7))
    return {
        "age": int(rng.integers(18, 81)),
        "gender": _GENDERS[rng.choice(3, p=[0.49, 0.49, 0.02])],
        "education": _EDUCATION[rng.integers(len(_EDUCATION))],
        "income": int(round(float(rng.lognormal(math.log(60000), 0.5)), -3)),
        "occupation": _OCCUPATIONS[rng.integers(len(_OCCUPATIONS))],
        "ethnicity": _ETHNICITY[rng.integers(len(_ETHNICITY))],
        "marital_status": _MARITAL[rng.integers(len(_MARITAL))],
        "household_size": household,
        "number_of_children": int(rng.integers(0, household)),
        "state": _STATES[rng.integers(len(_STATES))],
        "home_ownership": _OWNERSHIP[rng.integers(2)],
    }


# --------------------------------------------------------------------------
# the simulator

def _digest_words(*parts: str) -> List[int]:
    h = hashlib.sha256("\x00".join(parts).encode("utf-8")).digest()
    return [int.from_bytes(h[i:i + 4], "big") for i in range(0, 16, 4)]


class _Draw:
    """Everything one simulated respondent answers, computed from one rng."""

    def __init__(self, rng, config: DgpConfig, entry: ProductEntry, d: float, confounded: bool, greedy: bool):
        p0 = float(entry.regular_price)
        shift = config.confounding(d) if confounded else 0.0
        u = shift + config.sigma_u * rng.standard_normal()
        logit = config.alpha + config.beta * d + config.kappa * u
        if greedy:
            self.purchase = logit > 0
        else:
            self.purchase = bool(rng.random() < expit(logit))
        self.past_price = _price(p0 * (1 + config.lambda_past * shift) + rng.normal(0, config.price_noise * p0))
        self.competing_price = _price(
            p0 * (1 + config.lambda_competing * shift) + rng.normal(0, config.price_noise * p0)
        )
        self.expiration_days = max(0, int(round(
            config.base_expiration_days * (1 + config.lambda_expiration * shift)
            + rng.normal(0, config.expiration_noise)
        )))
        self.rng = rng
        self.p0 = p0

    @property
    def decision(self) -> str:
        return PURCHASE if self.purchase else NOT_PURCHASE


def _price(x: float) -> Decimal:
    return round_to_cents(max(0.0, x))


def mock_complete(
    request: CompletionRequest,
    config: DgpConfig = DgpConfig(),
    seed: int = 0,
    catalog: Optional[Sequence[ProductEntry]] = None,
    strategies: Sequence[PromptStrategy] = (),
) -> CompletionResponse:
    catalog = load_catalog() if catalog is None else catalog
    text = request.system + "\n" + request.user
    try:
        entry = find_product(request.user, catalog)
    except MockPromptError:
        entry = find_product(text, catalog)
    schema_id = identify_schema(request.user, strategies)
    schema = get_schema(schema_id)
    price = find_price(request.user)
    if price is None and schema_id != "persona_record":
        raise MockPromptError("no '$X.XX' current price in prompt")
    mode = detect_mode(text)
    confounded = mode == OBSERVATIONAL and not any(m in text for m in config.controlled_by)
    greedy = request.temperature == 0

    if greedy:
        # identity of the respondent = the prompt with the price masked out
        masked = _PRICE_RE.sub("priced at $?", request.user, count=1)
        base = _digest_words(request.system, masked, request.model_id)
    else:
        base = _digest_words(request.system, request.user, request.model_id)
    request_seed = 0 if request.seed is None else int(request.seed) & 0xFFFFFFFF

    texts = []
    for i in range(request.n_draws):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, request_seed, *base, 0 if greedy else i])
        if schema_id == "persona_record":
            wtp = _price(float(entry.regular_price) * (1 + 0.15 * rng.standard_normal()))
            d = float((wtp - entry.regular_price) / entry.regular_price)
        else:
            d = float((price - entry.regular_price) / entry.regular_price)
        draw = _Draw(rng, config, entry, d, confounded, greedy)
        texts.append(_format(schema_id, schema, draw, rng, wtp if schema_id == "persona_record" else None))
    return CompletionResponse(
        texts,
        {"backend": "mock", "retries": 0, "mode": mode, "confounded": confounded,
         "schema": schema_id, "product_id": entry.product_id},
    )


def _format(schema_id, schema, draw: _Draw, rng, wtp) -> str:
    if schema_id == "decision":
        return "purchase" if draw.purchase else "not purchase"
    if schema_id == "past_price":
        return str(draw.past_price)
    if schema_id == "competing_price":
        return str(draw.competing_price)
    if schema_id == "expiration_days":
        return str(draw.expiration_days)
    record = _demographics(rng)
    if schema_id == "persona_record":
        record.update(price=wtp, decision=draw.decision)
        return format_record(record, schema)
    budget = int(round(200 + 0.006 * record["income"] + 40 * record["household_size"] + rng.normal(0, 60)))
    record.update(
        purchase_frequency=_FREQUENCY[rng.integers(3)],
        past_price=draw.past_price,
        storage_space=_STORAGE[rng.integers(3)],
        grocery_budget=max(0, budget),
        expiration_days=draw.expiration_days,
        competing_price=draw.competing_price,
        decision=draw.decision,
    )
    return format_record(record, schema)


class MockBackend:
    """Backend facade over ``mock_complete``."""

    def __init__(self, config: DgpConfig = DgpConfig(), seed: int = 0,
                 catalog: Optional[Sequence[ProductEntry]] = None,
                 strategies: Sequence[PromptStrategy] = ()):
        self.config = config
        self.seed = seed
        self.catalog = load_catalog() if catalog is None else list(catalog)
        self.strategies = tuple(strategies)
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls += 1
        return mock_complete(request, self.config, self.seed, self.catalog, self.strategies)
