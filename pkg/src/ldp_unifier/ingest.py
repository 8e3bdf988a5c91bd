"""Gowalla check-ins: parsing, binning to a planar grid and a small cell-count cache.

The check-in file is the public ``totalCheckins`` layout, one check-in per
line with five tab-separated fields::

    user_id  timestamp  latitude  longitude  location_id
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ldp_unifier.alphabet import PlanarGrid
from ldp_unifier.distributions import SampleSet
from ldp_unifier.errors import DomainError, IngestError
from ldp_unifier.guardrails import Checkin

logger = logging.getLogger('ldp_unifier.ingest')

MALFORMED_LIMIT = 0.5
CACHE_COLUMNS = ['cell_index', 'count']


@dataclass(frozen=True, eq=False)
class ParsedCheckins:
    """Column-oriented check-ins; iterating yields :class:`Checkin` records."""

    user_id: np.ndarray
    timestamp: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    location_id: np.ndarray
    malformed: int = 0
    lines: int = 0

    @classmethod
    def from_records(cls, checkins: Sequence[Checkin]) -> 'ParsedCheckins':
        return cls(
            np.array([c.user_id for c in checkins], dtype=np.int64),
            np.array([c.timestamp for c in checkins], dtype=str),
            np.array([c.lat for c in checkins], dtype=float),
            np.array([c.lon for c in checkins], dtype=float),
            np.array([c.location_id for c in checkins], dtype=np.int64),
            lines=len(checkins),
        )

    def __len__(self) -> int:
        return self.user_id.size

    def __getitem__(self, i: int) -> Checkin:
        return Checkin(
            user_id=int(self.user_id[i]),
            timestamp=str(self.timestamp[i]),
            lat=float(self.lat[i]),
            lon=float(self.lon[i]),
            location_id=int(self.location_id[i]),
        )

    def __iter__(self) -> Iterator[Checkin]:
        for i in range(len(self)):
            yield self[i]


def _parse_line(line: str) -> Optional[tuple]:
    fields = line.rstrip('\r\n').split('\t')
    if len(fields) != 5:
        return None
    try:
        user, lat, lon, loc = int(fields[0]), float(fields[2]), float(fields[3]), int(fields[4])
    except ValueError:
        return None
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        return None
    return user, fields[1], lat, lon, loc


def parse_gowalla(path: Union[str, Path]) -> ParsedCheckins:
    rows: List[tuple] = []
    lines = malformed = 0
    try:
        with open(path, 'r', encoding='utf-8', errors='replace') as f:
            for line in f:
                lines += 1
                parsed = _parse_line(line)
                if parsed is None:
                    malformed += 1
                else:
                    rows.append(parsed)
    except OSError as e:
        raise IngestError(f"cannot read check-in file {path}: {e}")

    if lines == 0:
        logger.warning(f"check-in file {path} is empty")
    elif malformed > MALFORMED_LIMIT * lines:
        raise IngestError(f"{malformed} of {lines} lines in {path} are malformed; is this a Gowalla check-in file?")
    elif malformed:
        logger.warning(f"skipped {malformed} malformed lines of {lines} in {path}")

    users, stamps, lats, lons, locs = zip(*rows) if rows else ((), (), (), (), ())
    logger.info(f"parsed {len(rows)} check-ins from {path}")
    return ParsedCheckins(
        np.array(users, dtype=np.int64),
        np.array(stamps, dtype=str),
        np.array(lats, dtype=float),
        np.array(lons, dtype=float),
        np.array(locs, dtype=np.int64),
        malformed=malformed,
        lines=lines,
    )


def _first_per_user(checkins: ParsedCheckins) -> np.ndarray:
    """Positions of each user's earliest check-in, in file order."""
    n = len(checkins)
    order = np.lexsort((np.arange(n), checkins.timestamp, checkins.user_id))
    users = checkins.user_id[order]
    first = np.r_[True, users[1:] != users[:-1]] if n else np.zeros(0, dtype=bool)
    return np.sort(order[first])


def bin_to_grid(
    checkins: Union[ParsedCheckins, Sequence[Checkin]],
    g: PlanarGrid,
    one_per_user: bool = False,
) -> SampleSet:
    """Flat cell index of every check-in inside the grid's bbox; the rest are dropped."""
    if g.bbox is None:
        raise DomainError("binning needs a grid with a bounding box")
    if not isinstance(checkins, ParsedCheckins):
        checkins = ParsedCheckins.from_records(list(checkins))
    keep = _first_per_user(checkins) if one_per_user else np.arange(len(checkins))
    lat, lon = checkins.lat[keep], checkins.lon[keep]

    lat_min, lat_max, lon_min, lon_max = g.bbox
    inside = (lat >= lat_min) & (lat < lat_max) & (lon >= lon_min) & (lon < lon_max)
    col = ((lon[inside] - lon_min) / (lon_max - lon_min) * g.cols).astype(np.int64)
    row = ((lat[inside] - lat_min) / (lat_max - lat_min) * g.rows).astype(np.int64)
    cells = np.minimum(row, g.rows - 1) * g.cols + np.minimum(col, g.cols - 1)

    dropped = int(keep.size - cells.size)
    deduplicated = len(checkins) - int(keep.size)
    logger.info(
        f"binned {cells.size} check-ins to a {g.cols}x{g.rows} grid, dropped {dropped} outside the bbox"
        f" and {deduplicated} repeat check-ins of the same user"
    )
    return SampleSet(cells, seed=0, dropped=dropped, deduplicated=deduplicated)


def write_cell_counts(samples: SampleSet, path: Union[str, Path], size: int) -> None:
    samples.check_alphabet(size)
    counts = np.bincount(samples.values, minlength=size)
    nonzero = np.flatnonzero(counts)
    frame = pd.DataFrame({'cell_index': nonzero, 'count': counts[nonzero]})
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator='\n')
    except OSError as e:
        raise IngestError(f"cannot write cell counts to {path}: {e}")
    logger.info(f"cached {samples.values.size} binned samples in {path}")


def read_cell_counts(path: Union[str, Path], size: Optional[int] = None) -> SampleSet:
    """Samples (sorted by cell) rebuilt from a 'cell_index,count' CSV."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot read cell counts from {path}: {e}")
    if list(frame.columns) != CACHE_COLUMNS:
        raise IngestError(f"{path} must have the header {','.join(CACHE_COLUMNS)}")
    cells = frame['cell_index'].to_numpy(dtype=np.int64)
    counts = frame['count'].to_numpy(dtype=np.int64)
    if np.any(cells < 0) or np.any(counts < 0) or (size is not None and np.any(cells >= size)):
        raise IngestError(f"{path} holds cell indices or counts out of range")
    return SampleSet(np.repeat(cells, counts), seed=0)


def load_samples(
    g: PlanarGrid,
    path: Optional[Path] = None,
    cache: Optional[Path] = None,
    one_per_user: bool = False,
) -> SampleSet:
    """Binned check-ins, served from ``cache`` when it exists and written to it otherwise."""
    if cache is not None and Path(cache).exists():
        logger.info(f"reading binned check-ins from {cache}")
        return read_cell_counts(cache, g.size)
    if path is None:
        raise IngestError(f"cell-count cache {cache} does not exist and no check-in file was given")
    samples = bin_to_grid(parse_gowalla(path), g, one_per_user=one_per_user)
    if cache is not None:
        write_cell_counts(samples, cache, g.size)
    return samples
