"""Secret/observable alphabets and the metric they carry.

Two shapes are supported: a linear range of equally spaced values and a
planar grid of square cells (optionally pinned to a lat/lon bounding box).
Both are frozen pydantic models so they can be embedded directly in the
experiment configuration.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ldp_unifier.errors import DomainError

logger = logging.getLogger('ldp_unifier.alphabet')

KM_PER_DEGREE = 111.32
EXTENT_TOLERANCE = 0.10

BBox = Tuple[float, float, float, float]


class LinearAlphabet(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['linear'] = 'linear'
    size: int = Field(..., ge=1, description="Number of elements k")
    spacing: float = Field(1.0, gt=0, description="Distance between successive elements")
    origin: float = Field(0.0, description="Coordinate of element 0")

    def coordinate(self, i: int) -> float:
        _check_index(self, i)
        return self.origin + i * self.spacing

    def dist(self, i: int, j: int) -> float:
        _check_index(self, i)
        _check_index(self, j)
        return abs(i - j) * self.spacing

    def distance_matrix(self) -> np.ndarray:
        return _distance_matrix(self)

    def __len__(self) -> int:
        return self.size


class PlanarGrid(BaseModel):
    """Grid of ``cols`` x ``rows`` square cells of side ``cell_size`` km.

    Cells are flattened row-major with the column (longitude axis) varying
    fastest: ``index = row * cols + col``.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal['planar'] = 'planar'
    cols: int = Field(..., ge=1, description="Cells along the longitude axis")
    rows: int = Field(..., ge=1, description="Cells along the latitude axis")
    cell_size: float = Field(..., gt=0, description="Cell side length in km")
    bbox: Optional[BBox] = Field(None, description="(lat_min, lat_max, lon_min, lon_max) in degrees")

    @model_validator(mode='after')
    def _check_bbox(self) -> 'PlanarGrid':
        if self.bbox is None:
            return self
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (-90.0 <= lat_min < lat_max <= 90.0):
            raise ValueError(f"invalid latitude range {lat_min}..{lat_max}")
        if not (-180.0 <= lon_min < lon_max <= 180.0):
            raise ValueError(f"invalid longitude range {lon_min}..{lon_max}")
        width_km, height_km = self.extent_km()
        expected_w, expected_h = self.cols * self.cell_size, self.rows * self.cell_size
        if (abs(width_km - expected_w) > EXTENT_TOLERANCE * expected_w
                or abs(height_km - expected_h) > EXTENT_TOLERANCE * expected_h):
            logger.warning(
                f"bbox spans {width_km:.2f} x {height_km:.2f} km but the grid covers "
                f"{expected_w:.2f} x {expected_h:.2f} km"
            )
        return self

    @property
    def size(self) -> int:
        return self.cols * self.rows

    def __len__(self) -> int:
        return self.size

    def extent_km(self) -> Tuple[float, float]:
        """(width, height) of the bbox in km, flat-earth approximation."""
        if self.bbox is None:
            raise DomainError("grid has no bounding box")
        lat_min, lat_max, lon_min, lon_max = self.bbox
        mid_lat = math.radians((lat_min + lat_max) / 2.0)
        width = (lon_max - lon_min) * KM_PER_DEGREE * math.cos(mid_lat)
        height = (lat_max - lat_min) * KM_PER_DEGREE
        return width, height

    def coords(self, index: int) -> Tuple[int, int]:
        _check_index(self, index)
        return index % self.cols, index // self.cols

    def index(self, col: int, row: int) -> int:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise DomainError(f"cell ({col}, {row}) outside {self.cols}x{self.rows} grid")
        return row * self.cols + col

    def dist(self, i: int, j: int) -> float:
        ci, ri = self.coords(i)
        cj, rj = self.coords(j)
        return self.cell_size * math.hypot(ci - cj, ri - rj)

    def distance_matrix(self) -> np.ndarray:
        return _distance_matrix(self)


Alphabet = Annotated[Union[LinearAlphabet, PlanarGrid], Field(discriminator='kind')]

SF_GRID = PlanarGrid(
    cols=24,
    rows=16,
    cell_size=0.5,
    bbox=(37.7228, 37.7946, -122.5153, -122.3789),
)


def _check_index(a: Union[LinearAlphabet, PlanarGrid], i: int) -> None:
    if not 0 <= i < a.size:
        raise DomainError(f"index {i} out of range for alphabet of size {a.size}")


@lru_cache(maxsize=32)
def _distance_matrix(a: Union[LinearAlphabet, PlanarGrid]) -> np.ndarray:
    if isinstance(a, LinearAlphabet):
        idx = np.arange(a.size, dtype=float)
        d = np.abs(idx[:, None] - idx[None, :]) * a.spacing
    else:
        idx = np.arange(a.size)
        c, r = idx % a.cols, idx // a.cols
        d = a.cell_size * np.hypot(c[:, None] - c[None, :], r[:, None] - r[None, :])
    d.setflags(write=False)
    return d


def dist(a: Union[LinearAlphabet, PlanarGrid], i: int, j: int) -> float:
    return a.dist(i, j)


def cell_of(g: PlanarGrid, lat: float, lon: float) -> Optional[int]:
    """Flat index of the cell enclosing (lat, lon), or None outside the bbox.

    Cells are half-open: points on lat_max or lon_max fall outside.
    """
    if g.bbox is None:
        raise DomainError("cell_of needs a grid with a bounding box")
    lat_min, lat_max, lon_min, lon_max = g.bbox
    if not (lat_min <= lat < lat_max and lon_min <= lon < lon_max):
        return None
    col = int((lon - lon_min) / (lon_max - lon_min) * g.cols)
    row = int((lat - lat_min) / (lat_max - lat_min) * g.rows)
    # float rounding right below the max edge
    col = min(col, g.cols - 1)
    row = min(row, g.rows - 1)
    return row * g.cols + col


def cell_center(g: PlanarGrid, index: int) -> Tuple[float, float]:
    """(lat, lon) of the center of a cell."""
    if g.bbox is None:
        raise DomainError("cell_center needs a grid with a bounding box")
    col, row = g.coords(index)
    lat_min, lat_max, lon_min, lon_max = g.bbox
    lat = lat_min + (row + 0.5) * (lat_max - lat_min) / g.rows
    lon = lon_min + (col + 0.5) * (lon_max - lon_min) / g.cols
    return lat, lon


def coarsen(g: PlanarGrid, factor: int) -> PlanarGrid:
    """Merge ``factor`` x ``factor`` blocks of cells into one cell."""
    if factor < 1 or g.cols % factor or g.rows % factor:
        raise DomainError(f"cannot coarsen a {g.cols}x{g.rows} grid by {factor}")
    return PlanarGrid(
        cols=g.cols // factor,
        rows=g.rows // factor,
        cell_size=g.cell_size * factor,
        bbox=g.bbox,
    )


def coarsen_distribution(p: np.ndarray, g: PlanarGrid, factor: int) -> np.ndarray:
    coarse = coarsen(g, factor)
    p = np.asarray(p, dtype=float)
    if p.shape != (g.size,):
        raise DomainError(f"vector of length {p.shape} does not match grid size {g.size}")
    idx = np.arange(g.size)
    target = (idx // g.cols // factor) * coarse.cols + (idx % g.cols) // factor
    return np.bincount(target, weights=p, minlength=coarse.size)
