"""Study region, point patterns, two-resolution block partition and counts.

The partition carries two nested regular grids: M coarse blocks used to build
the count summary vector, and a fine sub-grid of representative points inside
each block used for moment quadrature and for the grid-approximated
likelihood. Fine points are stored grouped by block so that per-block
reductions are contiguous slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DimensionMismatch, EmptyDomain, OutOfDomain

__all__ = [
    "Domain",
    "PointPattern",
    "BlockPartition",
    "CountSummary",
    "CovariateRaster",
    "build_partition",
    "count_points",
    "fine_count_matrix",
    "covariate_at",
    "design_matrix",
]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle, optionally masked by an inside-indicator raster.

    The mask, when present, is a boolean array of shape (rows, cols) at the
    fine-grid resolution, row 0 at the bottom of the rectangle.
    """

    bounds: tuple[float, float, float, float]
    mask: np.ndarray | None = None

    def __post_init__(self):
        x0, x1, y0, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ConfigError(f"degenerate bounds {self.bounds}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.ndim != 2:
                raise ConfigError("mask must be a 2-D boolean raster")
            if not mask.any():
                raise EmptyDomain("mask excludes every cell")
            object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> float:
        return self.bounds[1] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[2]

    @property
    def area(self) -> float:
        """Area of the bounding rectangle (masked area is partition-level)."""
        return self.width * self.height

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x0, x1, y0, y1 = self.bounds
        return (
            (pts[:, 0] >= x0)
            & (pts[:, 0] <= x1)
            & (pts[:, 1] >= y0)
            & (pts[:, 1] <= y1)
        )


@dataclass(frozen=True)
class PointPattern:
    """Observed event locations with 1-based component labels."""

    points: np.ndarray
    labels: np.ndarray
    L: int = 1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if len(labels) != len(pts):
            raise DimensionMismatch("labels and points length differ")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if len(labels) and (labels.min() < 1 or labels.max() > self.L):
            raise ConfigError("labels out of range 1..L")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def single(cls, points: np.ndarray) -> "PointPattern":
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(points, np.ones(len(points), dtype=int), L=1)

    @property
    def n(self) -> int:
        return len(self.labels)

    def validate_in(self, domain: Domain) -> None:
        if not domain.contains(self.points).all():
            raise OutOfDomain("pattern has points outside the domain bounds")


@dataclass
class BlockPartition:
    """M disjoint blocks, each carrying a sub-grid of representative points."""

    domain: Domain
    coarse_dims: tuple[int, int]
    fine_dims: tuple[int, int]
    M: int
    block_bounds: np.ndarray  # (M, 4) x0,x1,y0,y1
    block_area: np.ndarray  # (M,)
    fine_points: np.ndarray  # (K, 2), grouped by block
    fine_area: np.ndarray  # (K,) cell area per representative point
    fine_block: np.ndarray  # (K,) owning block index
    block_start: np.ndarray  # (M+1,) slice offsets into fine arrays
    _coarse_lookup: np.ndarray  # raster index of coarse cell -> block id or -1
    _fine_lookup: np.ndarray  # raster index of fine cell -> fine index or -1
    _dist: np.ndarray | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.fine_points)

    @property
    def area(self) -> float:
        return float(self.block_area.sum())

    def fine_distances(self) -> np.ndarray:
        """Pairwise distances between representative points, cached."""
        if self._dist is None:
            self._dist = cdist(self.fine_points, self.fine_points)
        return self._dist

    def _cell_indices(self, points, nx, ny):
        x0, x1, y0, y1 = self.domain.bounds
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        # half-open cells, left/bottom inclusive; top/right domain edge
        # folded into the last cell
        ix = np.floor((pts[:, 0] - x0) / (x1 - x0) * nx).astype(int)
        iy = np.floor((pts[:, 1] - y0) / (y1 - y0) * ny).astype(int)
        ix = np.clip(ix, 0, nx - 1)
        iy = np.clip(iy, 0, ny - 1)
        return iy * nx + ix

    def locate_block(self, points: np.ndarray) -> np.ndarray:
        """Block index per point, -1 for points in dropped (masked) blocks."""
        rows, cols = self.coarse_dims
        return self._coarse_lookup[self._cell_indices(points, cols, rows)]

    def locate_fine(self, points: np.ndarray) -> np.ndarray:
        """Fine-grid index per point, -1 for masked-out cells."""
        rows, cols = self.coarse_dims
        fr, fc = self.fine_dims
        return self._fine_lookup[
            self._cell_indices(points, cols * fc, rows * fr)
        ]


@dataclass(frozen=True)
class CountSummary:
    """Block counts T, component-major: counts[l * M + m]."""

    counts: np.ndarray
    M: int
    L: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=int).reshape(-1)
        if len(counts) != self.M * self.L:
            raise DimensionMismatch("counts length != M * L")
        if (counts < 0).any():
            raise ConfigError("negative counts")
        object.__setattr__(self, "counts", counts)


def build_partition(
    domain: Domain,
    coarse_dims: tuple[int, int],
    fine_dims: tuple[int, int],
) -> BlockPartition:
    """Tile the domain with coarse blocks and per-block fine sub-grids.

    Blocks are ordered row-major from the bottom-left. With a mask, blocks
    whose every fine cell is outside are dropped and the remaining block
    areas count inside cells only.
    """
    rows, cols = int(coarse_dims[0]), int(coarse_dims[1])
    fr, fc = int(fine_dims[0]), int(fine_dims[1])
    if min(rows, cols, fr, fc) < 1:
        raise ConfigError("partition dims must be positive")
    x0, x1, y0, y1 = domain.bounds
    nx, ny = cols * fc, rows * fr
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    cell_area = dx * dy

    mask = domain.mask
    if mask is not None and mask.shape != (ny, nx):
        raise ConfigError(
            f"mask shape {mask.shape} != fine grid dims {(ny, nx)}"
        )

    xc = x0 + (np.arange(nx) + 0.5) * dx
    yc = y0 + (np.arange(ny) + 0.5) * dy

    blocks, pts, owners = [], [], []
    coarse_lookup = np.full(rows * cols, -1, dtype=int)
    fine_lookup = np.full(ny * nx, -1, dtype=int)
    k = 0
    m = 0
    for br in range(rows):
        for bc in range(cols):
            iys = np.arange(br * fr, (br + 1) * fr)
            ixs = np.arange(bc * fc, (bc + 1) * fc)
            gy, gx = np.meshgrid(iys, ixs, indexing="ij")
            gy, gx = gy.ravel(), gx.ravel()
            if mask is not None:
                keep = mask[gy, gx]
                gy, gx = gy[keep], gx[keep]
            if len(gy) == 0:
                continue
            coarse_lookup[br * cols + bc] = m
            fine_lookup[gy * nx + gx] = k + np.arange(len(gy))
            pts.append(np.column_stack([xc[gx], yc[gy]]))
            owners.append(np.full(len(gy), m))
            blocks.append(
                (
                    x0 + bc * fc * dx,
                    x0 + (bc + 1) * fc * dx,
                    y0 + br * fr * dy,
                    y0 + (br + 1) * fr * dy,
                    len(gy),
                )
            )
            k += len(gy)
            m += 1

    if m == 0:
        raise EmptyDomain("no coarse cell survives masking")

    fine_points = np.concatenate(pts)
    fine_block = np.concatenate(owners)
    n_inside = np.array([b[4] for b in blocks])
    block_start = np.concatenate([[0], np.cumsum(n_inside)])
    return BlockPartition(
        domain=domain,
        coarse_dims=(rows, cols),
        fine_dims=(fr, fc),
        M=m,
        block_bounds=np.array([b[:4] for b in blocks]),
        block_area=n_inside * cell_area,
        fine_points=fine_points,
        fine_area=np.full(k, cell_area),
        fine_block=fine_block,
        block_start=block_start,
        _coarse_lookup=coarse_lookup,
        _fine_lookup=fine_lookup,
    )


def count_points(
    pattern: PointPattern, partition: BlockPartition
) -> CountSummary:
    """Block counts per component; boundary points go left/bottom-closed."""
    pattern.validate_in(partition.domain)
    M, L = partition.M, pattern.L
    counts = np.zeros(M * L, dtype=int)
    if pattern.n:
        blocks = partition.locate_block(pattern.points)
        if (blocks < 0).any() or (
            partition.locate_fine(pattern.points) < 0
        ).any():
            raise OutOfDomain("pattern has points in masked-out cells")
        np.add.at(counts, (pattern.labels - 1) * M + blocks, 1)
    return CountSummary(counts, M=M, L=L)


def fine_count_matrix(
    pattern: PointPattern, partition: BlockPartition
) -> np.ndarray:
    """Per-fine-cell counts, shape (L, K); used by the grid likelihood."""
    pattern.validate_in(partition.domain)
    out = np.zeros((pattern.L, partition.K), dtype=int)
    if pattern.n:
        fine = partition.locate_fine(pattern.points)
        if (fine < 0).any():
            raise OutOfDomain("pattern has points in masked-out cells")
        np.add.at(out, (pattern.labels - 1, fine), 1)
    return out


@dataclass(frozen=True)
class CovariateRaster:
    """Regular-grid covariate surface with nearest-neighbor lookup."""

    x0: float
    y0: float
    dx: float
    dy: float
    values: np.ndarray  # (ny, nx), row 0 at the bottom

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ny, nx = self.values.shape
        ix = np.rint((x - self.x0) / self.dx).astype(int)
        iy = np.rint((y - self.y0) / self.dy).astype(int)
        bad = (ix < 0) | (ix > nx - 1) | (iy < 0) | (iy > ny - 1)
        if np.any(bad):
            raise OutOfDomain("location outside the covariate raster")
        return self.values[iy, ix]


def covariate_at(raster: CovariateRaster, s) -> float:
    """Covariate value at a single location (nearest raster cell center)."""
    s = np.asarray(s, dtype=float).reshape(2)
    return float(raster(s[0], s[1]))


def design_matrix(covariates, points: np.ndarray) -> np.ndarray:
    """Design matrix [1, X_1(s), ..., X_p(s)] at the given locations.

    Each covariate is either a CovariateRaster or a callable f(x, y).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cols = [np.ones(len(pts))]
    for cov in covariates:
        cols.append(np.asarray(cov(pts[:, 0], pts[:, 1]), dtype=float))
    return np.column_stack(cols)
