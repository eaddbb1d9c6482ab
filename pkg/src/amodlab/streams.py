"""Request streams: synthetic generation and historical trip-record ingestion.

A RequestStream is an ordered multiset of (placement_step, origin_zone,
destination_zone) triples plus provenance metadata. Streams come either
from a calibrated Poisson generator or from delimited trip-record tables
(pickup/dropoff coordinates mapped to nearest zone centers).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .hexgrid import ZoneGrid

STREAM_SCHEMA = "amodlab-stream/v1"

# Reference point (lat, lon) that geo-located trip records are projected
# against; it maps to the planar origin of the zone grid.
DEFAULT_ANCHOR = (40.72, -74.00)

_EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class StreamEntry:
    request_id: int
    placement_step: int
    origin_zone: int
    destination_zone: int


@dataclass
class RequestStream:
    """Requests of one episode, ordered by placement time."""

    entries: list[StreamEntry]
    metadata: dict = field(default_factory=dict)
    _by_step: dict[int, list[StreamEntry]] = field(default=None, repr=False)

    def __post_init__(self):
        for e in self.entries:
            if e.origin_zone == e.destination_zone:
                raise ValueError(f"request {e.request_id}: origin equals destination")
        self._by_step = {}
        for e in self.entries:
            self._by_step.setdefault(e.placement_step, []).append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def placed_at(self, step: int) -> list[StreamEntry]:
        return self._by_step.get(step, [])

    @property
    def max_per_step(self) -> int:
        return max((len(v) for v in self._by_step.values()), default=0)

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"# {STREAM_SCHEMA}\n")
            for key in sorted(self.metadata):
                fh.write(f"# {key}: {self.metadata[key]}\n")
            fh.write("# columns: placement_step origin_zone destination_zone\n")
            for e in self.entries:
                fh.write(f"{e.placement_step} {e.origin_zone} {e.destination_zone}\n")

    @classmethod
    def load(cls, path) -> "RequestStream":
        path = Path(path)
        metadata: dict = {}
        rows: list[tuple[int, int, int]] = []
        with path.open() as fh:
            first = fh.readline().strip()
            if first != f"# {STREAM_SCHEMA}":
                raise ValueError(f"{path}: not a {STREAM_SCHEMA} file")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if ":" in body and not body.startswith("columns"):
                        key, value = body.split(":", 1)
                        metadata[key.strip()] = value.strip()
                    continue
                step, origin, dest = line.split()
                rows.append((int(step), int(origin), int(dest)))
        entries = [
            StreamEntry(i, step, origin, dest) for i, (step, origin, dest) in enumerate(rows)
        ]
        return cls(entries=entries, metadata=metadata)


def _make_entries(rows: list[tuple[int, int, int]]) -> list[StreamEntry]:
    rows = sorted(rows, key=lambda r: r[0])
    return [StreamEntry(i, s, o, d) for i, (s, o, d) in enumerate(rows)]


def synth_stream(
    grid: ZoneGrid,
    rate_per_step,
    seed: int,
    episode_length: int = 60,
    label: str = "",
    dest_weights: np.ndarray | None = None,
) -> RequestStream:
    """Draw a Poisson request stream.

    `rate_per_step` is either a scalar (same mean arrival count for every
    origin zone) or a mapping/array of per-zone means. Destinations are
    drawn uniformly over the other zones unless `dest_weights` supplies an
    (n_zones, n_zones) row-stochastic-able preference matrix; the origin
    column is always excluded and rows renormalized.
    """
    n = grid.n_zones
    if np.isscalar(rate_per_step):
        rates = np.full(n, float(rate_per_step))
    elif isinstance(rate_per_step, dict):
        rates = np.zeros(n)
        for zone, r in rate_per_step.items():
            rates[int(zone)] = float(r)
    else:
        rates = np.asarray(rate_per_step, dtype=float)
        if rates.shape != (n,):
            raise ValueError(f"rate vector must have shape ({n},)")
    if (rates < 0).any():
        raise ValueError("arrival rates must be nonnegative")

    rng = np.random.default_rng(seed)
    rows: list[tuple[int, int, int]] = []
    for step in range(episode_length):
        counts = rng.poisson(rates)
        for origin in range(n):
            for _ in range(int(counts[origin])):
                if dest_weights is None:
                    weights = np.ones(n)
                else:
                    weights = np.asarray(dest_weights[origin], dtype=float).copy()
                weights[origin] = 0.0
                total = weights.sum()
                if total <= 0:
                    raise ValueError(f"zone {origin}: no admissible destination")
                dest = int(rng.choice(n, p=weights / total))
                rows.append((step, origin, dest))
    entries = _make_entries(rows)
    stream = RequestStream(
        entries=entries,
        metadata={
            "source": "synthetic",
            "label": label or f"synthetic-seed{seed}",
            "seed": seed,
            "episode_length": episode_length,
        },
    )
    stream.metadata["max_per_step"] = stream.max_per_step
    return stream


def validate_stream(stream: RequestStream, max_per_step_cap: int) -> list[int]:
    """Return the steps whose request count exceeds the configured cap."""
    return sorted(
        step for step, entries in stream._by_step.items() if len(entries) > max_per_step_cap
    )


# -- historical ingestion ---------------------------------------------------

TRIP_COLUMNS = (
    "pickup_datetime",
    "pickup_latitude",
    "pickup_longitude",
    "dropoff_latitude",
    "dropoff_longitude",
)


def _project_m(lat: float, lon: float, anchor: tuple[float, float]) -> tuple[float, float]:
    """Equirectangular projection to meters relative to the anchor."""
    lat0, lon0 = anchor
    x = math.radians(lon - lon0) * _EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = math.radians(lat - lat0) * _EARTH_RADIUS_M
    return x, y


def _nearest_zone(grid: ZoneGrid, x: float, y: float) -> int | None:
    """Nearest zone center, or None when the point falls outside the hull."""
    d2 = (grid.centers_m[:, 0] - x) ** 2 + (grid.centers_m[:, 1] - y) ** 2
    idx = int(np.argmin(d2))
    circumradius = grid.neighbor_distance_m / math.sqrt(3.0)
    if d2[idx] > (circumradius * 1.0001) ** 2:
        return None
    return idx


def _parse_dt(raw: str) -> datetime:
    raw = raw.strip()
    try:
        return datetime.fromisoformat(raw)
    except ValueError:
        return datetime.strptime(raw, "%m/%d/%Y %H:%M:%S")


def ingest_trips(
    file,
    grid: ZoneGrid,
    window: tuple[date, int],
    subsample_every: int = 1,
    anchor: tuple[float, float] = DEFAULT_ANCHOR,
    holidays: tuple[date, ...] = (),
    dialect: str = "excel",
) -> RequestStream:
    """Build a stream from a delimited trip-record table.

    `window` selects (day, hour-of-day); a one-hour window becomes one
    episode at one-minute steps. Weekend and holiday dates yield an empty
    stream. Records outside the zone hull, intra-zone trips, and
    unparseable rows are dropped; after all filters, every
    `subsample_every`-th record is kept.
    """
    if subsample_every < 1:
        raise ValueError("subsample_every must be >= 1")
    day, hour = window
    skipped_unparseable = 0
    kept: list[tuple[int, int, int]] = []
    in_area_index = 0

    path = Path(file)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, dialect=dialect)
        missing = [c for c in TRIP_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing trip columns {missing}")
        if day.weekday() >= 5 or day in holidays:
            warnings.warn(f"{day} is a weekend/holiday; stream is empty")
            return RequestStream(entries=[], metadata=_trip_meta(path, day, hour, 0, 0))
        for row in reader:
            try:
                ts = _parse_dt(row["pickup_datetime"])
                plat = float(row["pickup_latitude"])
                plon = float(row["pickup_longitude"])
                dlat = float(row["dropoff_latitude"])
                dlon = float(row["dropoff_longitude"])
            except (ValueError, TypeError, KeyError):
                skipped_unparseable += 1
                continue
            if not all(map(math.isfinite, (plat, plon, dlat, dlon))):
                skipped_unparseable += 1
                continue
            if ts.date() != day or ts.hour != hour:
                continue
            origin = _nearest_zone(grid, *_project_m(plat, plon, anchor))
            dest = _nearest_zone(grid, *_project_m(dlat, dlon, anchor))
            if origin is None or dest is None or origin == dest:
                continue
            if in_area_index % subsample_every == 0:
                kept.append((ts.minute, origin, dest))
            in_area_index += 1

    if not kept:
        warnings.warn(f"{path}: no requests in window {day} {hour:02d}:00")
    entries = _make_entries(kept)
    stream = RequestStream(
        entries=entries,
        metadata=_trip_meta(path, day, hour, skipped_unparseable, subsample_every),
    )
    stream.metadata["max_per_step"] = stream.max_per_step
    return stream


def _trip_meta(path: Path, day: date, hour: int, skipped: int, subsample: int) -> dict:
    return {
        "source": "historical",
        "label": f"{day.isoformat()}-h{hour:02d}",
        "file": str(path),
        "date": day.isoformat(),
        "hour": hour,
        "skipped_unparseable": skipped,
        "subsample_every": subsample,
    }
