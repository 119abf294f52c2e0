"""Execute experiment designs against a backend, with an append-only JSONL store."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .backends.base import Backend, BackendError, CompletionRequest
from .catalog import RELATIVE_GRID, ProductEntry, by_id, load_catalog, price_point, relative_key
from .parsing import DEMOGRAPHIC_FIELDS, ParseError, get_schema, parse_record
from .prompts import PromptStrategy, builtin_strategy, product_bindings, render, with_system

log = logging.getLogger(__name__)


class DesignError(ValueError):
    pass


class StoreWriteError(RuntimeError):
    def __init__(self, message: str, last_durable_key=None):
        super().__init__(f"{message} (last durable key: {last_durable_key})")
        self.last_durable_key = last_durable_key


class DuplicateKeyError(ValueError):
    pass


class PersonaGenerationError(RuntimeError):
    def __init__(self, message: str, exemplars: Sequence[str] = ()):
        super().__init__(message)
        self.exemplars = list(exemplars)


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible stores
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc)
    )
    return when.isoformat(timespec="seconds")


@dataclass(frozen=True)
class ExperimentDesign:
    design_id: str
    strategy_id: str
    products: Tuple[str, ...]
    relative_prices: Tuple[float, ...] = RELATIVE_GRID
    n_draws: int = 50
    temperature: float = 1.0
    seed: int = 0
    system_strategy_id: Optional[str] = None
    model_id: str = "mock"
    backend: str = "mock"

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "relative_prices", tuple(relative_key(r) for r in self.relative_prices))
        if self.n_draws < 1:
            raise DesignError("n_draws must be >= 1")

    def strategy(self) -> PromptStrategy:
        strategy = builtin_strategy(self.strategy_id)
        if self.system_strategy_id:
            strategy = with_system(strategy, builtin_strategy(self.system_strategy_id))
        return strategy

    def run_id(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return f"{self.design_id}-{hashlib.sha256(blob.encode()).hexdigest()[:10]}"

    def validate(self, catalog: Sequence[ProductEntry]) -> None:
        products = by_id(catalog)
        for pid in self.products:
            if pid not in products:
                raise DesignError(f"unknown product {pid!r}")
        grid = {relative_key(r) for r in RELATIVE_GRID}
        for r in self.relative_prices:
            if r not in grid:
                raise DesignError(f"relative price {r} is not on the grid")


@dataclass
class DrawRecord:
    run_id: str
    design_id: str
    strategy_id: str
    product_id: str
    relative_price: float
    absolute_price: str
    draw_index: int
    raw_text: str
    parsed: Optional[dict]
    parse_error: Optional[str] = None
    persona_id: Optional[str] = None
    bindings: Dict[str, str] = field(default_factory=dict)
    prompt_sha256: str = ""
    timestamp: str = ""

    @property
    def key(self) -> tuple:
        return (self.run_id, self.strategy_id, self.product_id, relative_key(self.relative_price),
                self.draw_index, self.persona_id)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DrawRecord":
        return cls(**d)


@dataclass(frozen=True)
class Persona:
    persona_id: str
    product_id: str
    age: int
    gender: str
    education: str
    income: int
    occupation: str
    ethnicity: str
    marital_status: str
    household_size: int
    number_of_children: int
    state: str
    home_ownership: str
    scores: Tuple[Tuple[str, str], ...] = ()

    def bindings(self) -> Dict[str, str]:
        out = {name: str(getattr(self, name)) for name in DEMOGRAPHIC_FIELDS}
        out.update(self.scores)
        return out

    @classmethod
    def from_record(cls, persona_id: str, product_id: str, record: dict, scores=None) -> "Persona":
        values = {name: record[name] for name in DEMOGRAPHIC_FIELDS}
        for name in ("age", "income", "household_size", "number_of_children"):
            if not isinstance(values[name], int):
                values[name] = int(values[name])
        return cls(persona_id, product_id, scores=tuple(sorted((scores or {}).items())), **values)


PERSONA_COLUMNS = ("persona_id", "product_id") + DEMOGRAPHIC_FIELDS


def write_personas(personas: Iterable[Persona], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERSONA_COLUMNS)
        for p in personas:
            w.writerow([getattr(p, c) for c in PERSONA_COLUMNS])


def load_personas(path: Union[str, Path]) -> List[Persona]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            Persona.from_record(row["persona_id"], row["product_id"], row,
                                {k: v for k, v in row.items() if k not in PERSONA_COLUMNS})
            for row in csv.DictReader(fh)
        ]


# --------------------------------------------------------------------------
# store

class JsonlStore:
    """Append-only JSONL of DrawRecords; ``path=None`` keeps records in memory.

    Keys are checked at write time under a lock, so concurrent producers
    cannot create duplicates.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: List[DrawRecord] = []
        self._keys = set()
        self.last_durable_key = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = DrawRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, TypeError):
                    # a torn final line from an interrupted write
                    log.warning("%s:%d: skipping unreadable line", self.path, lineno)
                    continue
                self._records.append(rec)
                self._keys.add(rec.key)
                self.last_durable_key = rec.key

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[DrawRecord]:
        return iter(list(self._records))

    def has(self, key) -> bool:
        return key in self._keys

    def records(self, run_id: Optional[str] = None) -> List[DrawRecord]:
        with self._lock:
            return [r for r in self._records if run_id is None or r.run_id == run_id]

    def append_many(self, records: Sequence[DrawRecord]) -> None:
        with self._lock:
            batch = set()
            for r in records:
                if r.key in self._keys or r.key in batch:
                    raise DuplicateKeyError(f"duplicate record key {r.key}")
                batch.add(r.key)
            if self.path is not None and records:
                try:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    needs_newline = self.path.exists() and self.path.stat().st_size > 0 and not _ends_with_newline(self.path)
                    with open(self.path, "a", encoding="utf-8") as fh:
                        if needs_newline:
                            fh.write("\n")
                        fh.write("".join(r.to_json() + "\n" for r in records))
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StoreWriteError(f"cannot write {self.path}: {exc}", self.last_durable_key) from exc
            self._records.extend(records)
            self._keys.update(batch)
            if records:
                self.last_durable_key = records[-1].key

    def append(self, record: DrawRecord) -> None:
        self.append_many([record])


def _ends_with_newline(path: Path) -> bool:
    with open(path, "rb") as fh:
        fh.seek(-1, os.SEEK_END)
        return fh.read(1) == b"\n"


def load_records(path: Union[str, Path]) -> List[DrawRecord]:
    return JsonlStore(path).records()


def write_manifest(store: JsonlStore, run_id: str, payload: dict) -> Optional[Path]:
    if store.path is None:
        return None
    manifest = store.path.with_suffix(".manifest.json")
    data = {}
    if manifest.exists():
        data = json.loads(manifest.read_text(encoding="utf-8"))
    data.setdefault("runs", {})[run_id] = payload
    manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def strategy_hash(strategy: PromptStrategy) -> str:
    return hashlib.sha256(json.dumps(strategy.as_record(), sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class Cell:
    product_id: str
    relative_price: float
    absolute_price: Decimal
    bindings: Tuple[Tuple[str, object], ...]
    persona_id: Optional[str] = None


@dataclass
class RunSummary:
    run_id: str
    cells_total: int = 0
    cells_completed: int = 0
    cells_skipped: int = 0
    records_written: int = 0
    parse_failures: int = 0
    retries: int = 0
    backend_calls: int = 0
    incomplete_cells: List[dict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.incomplete_cells

    def line(self) -> str:
        state = "complete" if self.complete else f"{len(self.incomplete_cells)} incomplete cells"
        return (f"run {self.run_id}: {self.cells_completed}/{self.cells_total} cells, "
                f"{self.records_written} new records, {self.parse_failures} parse failures, "
                f"{self.retries} retries, {self.backend_calls} backend calls ({state})")


def _parse(text: str, schema_id: str):
    try:
        return _jsonable(parse_record(text, get_schema(schema_id))), None
    except ParseError as exc:
        return None, str(exc)


def _jsonable(record: dict) -> dict:
    return {k: float(v) if isinstance(v, Decimal) else v for k, v in record.items()}


def execute_cells(
    run_id: str,
    design_id: str,
    strategy: PromptStrategy,
    cells: Sequence[Cell],
    backend: Backend,
    store: JsonlStore,
    *,
    n_draws: int,
    temperature: float,
    model_id: str,
    seed: Optional[int] = 0,
    concurrency: int = 4,
) -> RunSummary:
    """Run every cell for ``n_draws`` draws, skipping keys already stored.

    Cells run concurrently; records are written in cell order, so the
    store's byte content does not depend on scheduling.
    """
    summary = RunSummary(run_id, cells_total=len(cells))

    def pending(cell: Cell) -> List[int]:
        return [
            i for i in range(n_draws)
            if not store.has((run_id, strategy.strategy_id, cell.product_id, cell.relative_price, i, cell.persona_id))
        ]

    def work(cell: Cell):
        missing = pending(cell)
        if not missing:
            return cell, missing, None, None, None
        prompt = render(strategy, dict(cell.bindings))
        request = CompletionRequest(model_id, prompt.system, prompt.user, temperature, len(missing), seed)
        try:
            return cell, missing, prompt, backend.complete(request), None
        except BackendError as exc:
            return cell, missing, prompt, None, exc

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        for cell, missing, prompt, response, error in pool.map(work, cells):
            if not missing:
                summary.cells_skipped += 1
                summary.cells_completed += 1
                continue
            summary.backend_calls += 1
            if error is not None:
                log.warning("cell %s @ %s failed: %s", cell.product_id, cell.relative_price, error)
                summary.incomplete_cells.append({
                    "product_id": cell.product_id, "relative_price": cell.relative_price,
                    "persona_id": cell.persona_id, "error": str(error),
                })
                continue
            summary.retries += response.retries
            digest = hashlib.sha256(prompt.key()).hexdigest()
            stamp = _timestamp()
            batch = []
            for index, text in zip(missing, response.texts):
                parsed, err = _parse(text, strategy.expected_answer_schema)
                summary.parse_failures += parsed is None
                batch.append(DrawRecord(
                    run_id, design_id, strategy.strategy_id, cell.product_id, cell.relative_price,
                    str(cell.absolute_price), index, text, parsed, err, cell.persona_id,
                    dict(prompt.bindings), digest, stamp,
                ))
            try:
                store.append_many(batch)
            except StoreWriteError:
                pool.shutdown(wait=False, cancel_futures=True)
                raise
            summary.records_written += len(batch)
            summary.cells_completed += 1
    return summary


def product_cells(strategy: PromptStrategy, design: ExperimentDesign, catalog) -> List[Cell]:
    products = by_id(catalog)
    cells = []
    for pid in design.products:
        entry = products[pid]
        if strategy.fixed_product and pid != strategy.fixed_product:
            raise DesignError(f"{strategy.strategy_id} only applies to {strategy.fixed_product}")
        for rel in design.relative_prices:
            point = price_point(entry, rel)
            b = product_bindings(strategy, entry, price=point.absolute)
            cells.append(Cell(pid, relative_key(rel), point.absolute, tuple(b.items())))
    return cells


def run_experiment(
    design: ExperimentDesign,
    backend: Backend,
    store: JsonlStore,
    catalog: Optional[Sequence[ProductEntry]] = None,
    concurrency: int = 4,
) -> RunSummary:
    catalog = load_catalog() if catalog is None else catalog
    design.validate(catalog)
    strategy = design.strategy()
    cells = product_cells(strategy, design, catalog)
    run_id = design.run_id()
    write_manifest(store, run_id, {
        "design": asdict(design),
        "strategy_sha256": strategy_hash(strategy),
        "seed": design.seed,
    })
    summary = execute_cells(
        run_id, design.design_id, strategy, cells, backend, store,
        n_draws=design.n_draws, temperature=design.temperature, model_id=design.model_id,
        seed=design.seed, concurrency=concurrency,
    )
    log.info(summary.line())
    return summary


# --------------------------------------------------------------------------
# two-step persona procedure

def generate_personas(
    product: ProductEntry,
    n: int,
    backend: Backend,
    seed: int = 0,
    model_id: str = "mock",
    retry_budget: int = 3,
) -> List[Persona]:
    """Draw ``n`` personas from the blank-demographics prompt at temperature 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    strategy = builtin_strategy("persona_generate")
    prompt = render(strategy, product_bindings(strategy, product))
    schema = get_schema(strategy.expected_answer_schema)
    personas: List[Persona] = []
    failures: List[str] = []
    for attempt in range(retry_budget + 1):
        need = n - len(personas)
        if need == 0:
            break
        request = CompletionRequest(model_id, prompt.system, prompt.user, 1.0, need, seed + attempt)
        for text in backend.complete(request).texts:
            try:
                record = parse_record(text, schema)
            except ParseError:
                failures.append(text)
                continue
            if len(personas) < n:
                pid = f"{product.product_id}-p{len(personas):04d}"
                personas.append(Persona.from_record(pid, product.product_id, record))
    if len(personas) < n:
        raise PersonaGenerationError(
            f"only {len(personas)}/{n} personas parsed after {retry_budget} redraws", failures[:5]
        )
    return personas


def run_persona_sweep(
    product: ProductEntry,
    personas: Sequence[Persona],
    relative_prices: Sequence[float],
    strategy_id: str,
    backend: Backend,
    store: JsonlStore,
    model_id: str = "mock",
    design_id: str = "persona_sweep",
    seed: int = 0,
    concurrency: int = 4,
) -> RunSummary:
    """One temperature-0 decision per (persona, price)."""
    if not personas:
        raise ValueError("personas must be non-empty")
    strategy = builtin_strategy(strategy_id)
    if strategy.fixed_product and product.product_id != strategy.fixed_product:
        raise DesignError(f"{strategy_id} only applies to {strategy.fixed_product}")
    cells = []
    for persona in personas:
        for rel in relative_prices:
            point = price_point(product, rel)
            b = product_bindings(strategy, product, price=point.absolute, extra=persona.bindings())
            cells.append(Cell(product.product_id, relative_key(rel), point.absolute, tuple(b.items()),
                              persona.persona_id))
    blob = json.dumps([design_id, strategy_id, product.product_id, [p.persona_id for p in personas],
                       [relative_key(r) for r in relative_prices], model_id, seed])
    run_id = f"{design_id}-{hashlib.sha256(blob.encode()).hexdigest()[:10]}"
    write_manifest(store, run_id, {
        "design": {"design_id": design_id, "strategy_id": strategy_id, "product_id": product.product_id,
                   "n_personas": len(personas), "relative_prices": [relative_key(r) for r in relative_prices],
                   "model_id": model_id, "temperature": 0.0},
        "strategy_sha256": strategy_hash(strategy),
        "seed": seed,
    })
    return execute_cells(
        run_id, design_id, strategy, cells, backend, store,
        n_draws=1, temperature=0.0, model_id=model_id, seed=seed, concurrency=concurrency,
    )
