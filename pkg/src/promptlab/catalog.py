"""Product catalog and the 11-point randomized price grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Optional, Union

GROUPS = ("beverages", "refrigerated", "snacks_bakery", "household_pet")

# -1.0, -0.8, ..., +1.0 as exact decimals; the float twins are the nearest doubles.
RELATIVE_STEPS = tuple(Decimal(i) / Decimal(5) - 1 for i in range(11))
RELATIVE_GRID = tuple(float(r) for r in RELATIVE_STEPS)

CATALOG_HEADER = ("product_id", "category", "product", "regular_price", "group")

_CENT = Decimal("0.01")


class CatalogError(ValueError):
    pass


def round_to_cents(value: Union[Decimal, float, int, str]) -> Decimal:
    """Round half-up to two fraction digits on exact decimal arithmetic.

    Floats are routed through ``repr`` so that ``9.912`` means the decimal
    9.912 and not its binary approximation.
    """
    if isinstance(value, float):
        value = repr(value)
    return Decimal(value).quantize(_CENT, rounding=ROUND_HALF_UP)


def format_usd(value: Union[Decimal, float, str]) -> str:
    return f"${round_to_cents(value)}"


def relative_key(rel: float) -> float:
    """Canonical float for a relative price so dict keys line up across sources."""
    return round(float(rel), 6) + 0.0


@dataclass(frozen=True)
class ProductEntry:
    product_id: str
    category: str
    product: str
    regular_price: Decimal
    group: str

    def __post_init__(self):
        if self.regular_price <= 0:
            raise CatalogError(f"{self.product_id}: regular_price must be positive")
        if self.group not in GROUPS:
            raise CatalogError(f"{self.product_id}: unknown group {self.group!r}")


@dataclass(frozen=True)
class PricePoint:
    relative: float
    absolute: Decimal

    @property
    def usd(self) -> str:
        return format_usd(self.absolute)


def price_grid(entry: ProductEntry) -> List[PricePoint]:
    return [
        PricePoint(float(step), round_to_cents(entry.regular_price * (1 + step)))
        for step in RELATIVE_STEPS
    ]


def price_point(entry: ProductEntry, relative: float) -> PricePoint:
    key = relative_key(relative)
    for point in price_grid(entry):
        if relative_key(point.relative) == key:
            return point
    raise CatalogError(f"{relative!r} is not on the price grid of {entry.product_id}")


def grid_bounds(entry: ProductEntry):
    grid = price_grid(entry)
    return grid[0].absolute, grid[-1].absolute


def _split_row(row: List[str]) -> List[str]:
    # Unquoted commas inside the product name are tolerated: the product
    # field absorbs everything between category and price.
    if len(row) > 5:
        row = [row[0], row[1], ",".join(row[2:-2]), row[-2], row[-1]]
    return row


def parse_catalog(lines: Iterable[str], source: str = "<catalog>") -> List[ProductEntry]:
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        return []
    if tuple(h.strip() for h in header) != CATALOG_HEADER:
        raise CatalogError(f"{source}: bad header {header!r}, expected {','.join(CATALOG_HEADER)}")
    entries: List[ProductEntry] = []
    seen = {}
    for row in reader:
        lineno = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        row = _split_row(row)
        if len(row) != 5:
            raise CatalogError(f"{source}:{lineno}: expected 5 fields, got {len(row)}")
        pid, category, product, price, group = (cell.strip() for cell in row)
        if not pid:
            raise CatalogError(f"{source}:{lineno}: missing product_id")
        if pid in seen:
            raise CatalogError(
                f"{source}: duplicate product_id {pid!r} on lines {seen[pid]} and {lineno}"
            )
        try:
            amount = Decimal(price)
        except InvalidOperation:
            raise CatalogError(f"{source}:{lineno}: unparseable price {price!r}") from None
        if not amount.is_finite() or amount <= 0:
            raise CatalogError(f"{source}:{lineno}: non-positive price {price!r} for {pid}")
        if group not in GROUPS:
            raise CatalogError(f"{source}:{lineno}: unknown group {group!r} for {pid}")
        seen[pid] = lineno
        entries.append(ProductEntry(pid, category, product, round_to_cents(amount), group))
    return entries


def load_catalog(path: Optional[Union[str, Path]] = None) -> List[ProductEntry]:
    """Load a catalog CSV; with no path, the bundled 40-product catalog."""
    if path is None:
        text = resources.files("promptlab.data").joinpath("catalog.csv").read_text("utf-8")
        return parse_catalog(text.splitlines(), "catalog.csv")
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_catalog(fh, str(path))


def write_catalog(entries: Iterable[ProductEntry], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(CATALOG_HEADER)
        for e in entries:
            writer.writerow([e.product_id, e.category, e.product, str(e.regular_price), e.group])


def by_id(entries: Iterable[ProductEntry]) -> dict:
    return {e.product_id: e for e in entries}
