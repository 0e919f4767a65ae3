"""Spatial event ingestion: CSV events -> weekly area counts -> GeoJSON.

Areas are the top-A cells of an nx x ny grid over the event extent,
ranked by total event count. Weeks are fixed 7-day blocks counted from
January 1 of the configured year; days 365/366 fold into week 52, so a
year is always exactly 52 weeks. Every dropped record is tallied so the
count matrix reconciles exactly against the raw file.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ValidationError
from .model import CountMatrix
from .posterior import EdgeSet

WEEKS_PER_YEAR = 52

_DATE_FORMATS = (
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y",
)


@dataclass
class EventRecord:
    timestamp: datetime
    x: float
    y: float
    category: str | None = None


@dataclass
class ColumnMap:
    """Names of the CSV columns holding each field; category is optional."""

    timestamp: str
    x: str
    y: str
    category: str | None = None


@dataclass
class SelectedCell:
    cell_id: int
    centroid: tuple[float, float]
    count: int


@dataclass
class AreaGrid:
    """Grid over the event extent with the retained (ranked) cells."""

    bbox: tuple[float, float, float, float]
    nx: int
    ny: int
    selected: list[SelectedCell] = field(default_factory=list)

    @property
    def A(self) -> int:
        return len(self.selected)

    def cell_of(self, x: float, y: float) -> int:
        """Row-major cell id (iy * nx + ix); edge points go to the last cell."""
        min_x, min_y, max_x, max_y = self.bbox
        w = max_x - min_x
        h = max_y - min_y
        ix = 0 if w == 0 else min(int((x - min_x) / w * self.nx), self.nx - 1)
        iy = 0 if h == 0 else min(int((y - min_y) / h * self.ny), self.ny - 1)
        return iy * self.nx + ix


@dataclass
class ParseResult:
    records: list[EventRecord]
    skipped: int


@dataclass
class AggregateTallies:
    """Event bookkeeping; together with the parse skip count these must
    reconcile exactly with the count-matrix total."""

    events_in: int
    out_of_year: int
    outside_areas: int
    counted: int


def _parse_timestamp(raw: str) -> datetime:
    raw = raw.strip()
    try:
        return datetime.fromisoformat(raw)
    except ValueError:
        pass
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {raw!r}")


def parse_events(path, column_map: ColumnMap) -> ParseResult:
    """Read events from a CSV file; malformed rows are counted and skipped."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"events file not found: {path}")
    records: list[EventRecord] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [column_map.timestamp, column_map.x, column_map.y]
        if column_map.category is not None:
            needed.append(column_map.category)
        for name in needed:
            if name not in header:
                raise ConfigError(f"mapped column {name!r} not present in {path.name} "
                                  f"(columns: {header})")
        for row in reader:
            try:
                ts = _parse_timestamp(row[column_map.timestamp])
                x = float(row[column_map.x])
                y = float(row[column_map.y])
                if not (np.isfinite(x) and np.isfinite(y)):
                    raise ValueError("non-finite coordinate")
            except (ValueError, TypeError):
                skipped += 1
                continue
            cat = row[column_map.category].strip() if column_map.category else None
            records.append(EventRecord(timestamp=ts, x=x, y=y, category=cat))
    if not records:
        raise DataError(f"no valid event rows in {path}")
    return ParseResult(records=records, skipped=skipped)


def write_events(path, records: list[EventRecord], column_map: ColumnMap) -> None:
    """Inverse of parse_events for round-trip checks and fixtures."""
    with open(path, "w", newline="") as fh:
        names = [column_map.timestamp, column_map.x, column_map.y]
        if column_map.category:
            names.append(column_map.category)
        w = csv.writer(fh)
        w.writerow(names)
        for r in records:
            row = [r.timestamp.isoformat(sep=" "), repr(r.x), repr(r.y)]
            if column_map.category:
                row.append(r.category or "")
            w.writerow(row)


def build_grid(events: list[EventRecord], nx: int, ny: int, A: int) -> AreaGrid:
    """Rank grid cells by event count and retain the top A (ties by cell id)."""
    if not events:
        raise DataError("cannot build a grid from zero events")
    if A < 1 or A > nx * ny:
        raise ValidationError(f"need 1 <= A <= nx*ny, got A={A}, nx*ny={nx * ny}")
    xs = np.array([e.x for e in events])
    ys = np.array([e.y for e in events])
    bbox = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    grid = AreaGrid(bbox=bbox, nx=nx, ny=ny)
    counts: dict[int, int] = {}
    for e in events:
        cid = grid.cell_of(e.x, e.y)
        counts[cid] = counts.get(cid, 0) + 1
    if len(counts) < A:
        raise DataError(
            f"only {len(counts)} nonempty cells for {len(events)} events; "
            f"reduce the number of areas below {A} or coarsen the grid"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:A]
    min_x, min_y, max_x, max_y = bbox
    cw = (max_x - min_x) / nx if max_x > min_x else 1.0
    ch = (max_y - min_y) / ny if max_y > min_y else 1.0
    for cid, cnt in ranked:
        iy, ix = divmod(cid, nx)
        cx = min_x + (ix + 0.5) * cw
        cy = min_y + (iy + 0.5) * ch
        grid.selected.append(SelectedCell(cell_id=cid, centroid=(cx, cy), count=cnt))
    return grid


def week_of(ts: datetime | date) -> int:
    """Zero-based 7-day block from Jan 1; the remainder folds into week 51."""
    day_of_year = ts.timetuple().tm_yday
    return min((day_of_year - 1) // 7, WEEKS_PER_YEAR - 1)


def aggregate_weekly(events: list[EventRecord], grid: AreaGrid, year: int):
    """Count events per (week, retained area) for one calendar year.

    Returns ``(CountMatrix, AggregateTallies)``; events outside the year
    or outside every retained cell are dropped and tallied.
    """
    if grid.A < 1:
        raise ValidationError("grid has no selected areas")
    area_of_cell = {c.cell_id: k for k, c in enumerate(grid.selected)}
    y = np.zeros((WEEKS_PER_YEAR, grid.A), dtype=np.int64)
    out_of_year = 0
    outside = 0
    for e in events:
        if e.timestamp.year != year:
            out_of_year += 1
            continue
        area = area_of_cell.get(grid.cell_of(e.x, e.y))
        if area is None:
            outside += 1
            continue
        y[week_of(e.timestamp), area] += 1
    counted = int(y.sum())
    tallies = AggregateTallies(
        events_in=len(events),
        out_of_year=out_of_year,
        outside_areas=outside,
        counted=counted,
    )
    return CountMatrix(y), tallies


def export_geojson(edges: EdgeSet, grid: AreaGrid, path) -> None:
    """Write a FeatureCollection: one Point per retained area and one
    LineString per edge connecting the two area centroids."""
    features = []
    for k, cell in enumerate(grid.selected):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [cell.centroid[0], cell.centroid[1]]},
            "properties": {"area_id": k, "total_count": cell.count},
        })
    for i, j, w in edges.edges:
        if i >= grid.A or j >= grid.A:
            raise ValidationError(
                f"edge ({i}, {j}) has no centroid: grid holds {grid.A} areas"
            )
        ci = grid.selected[i].centroid
        cj = grid.selected[j].centroid
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [[ci[0], ci[1]], [cj[0], cj[1]]]},
            "properties": {"i": i, "j": j, "weight": w, "abs_weight": abs(w)},
        })
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2)
        fh.write("\n")


def grid_to_json(grid: AreaGrid, tallies: AggregateTallies | None, skipped: int, path) -> None:
    """Persist the grid, centroids and reconciliation tallies as areas.json."""
    doc = {
        "bbox": list(grid.bbox),
        "nx": grid.nx,
        "ny": grid.ny,
        "selected": [
            {"cell_id": c.cell_id, "centroid": list(c.centroid), "count": c.count}
            for c in grid.selected
        ],
        "tallies": None if tallies is None else {
            "rows_skipped": skipped,
            "events_in": tallies.events_in,
            "out_of_year": tallies.out_of_year,
            "outside_areas": tallies.outside_areas,
            "counted": tallies.counted,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def grid_from_json(path) -> AreaGrid:
    with open(path) as fh:
        doc = json.load(fh)
    grid = AreaGrid(bbox=tuple(doc["bbox"]), nx=int(doc["nx"]), ny=int(doc["ny"]))
    for c in doc["selected"]:
        grid.selected.append(SelectedCell(
            cell_id=int(c["cell_id"]),
            centroid=(float(c["centroid"][0]), float(c["centroid"][1])),
            count=int(c["count"]),
        ))
    return grid
