"""
Bird's-eye-view rasters and the masked alignment between the two views.

Both clouds are binned on the same ego-frame grid into four channels:

    0  log(1 + point count)
    1  max height
    2  mean height
    3  occupancy

Cells whose channel mean falls below gamma in the ego raster are invisible
and excluded from the alignment loss

    L = 1/Z * sum_{i,j,c} M_ij (F_e - F_m)^2 ,   Z = sum_ij M_ij

which is 0 with a zero gradient when no cell is visible.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from packages.config.settings import GridSettings
from packages.errors import ArtifactIOError, InvalidInputError
from packages.geometry.boxes import Box3D, PointCloud
from packages.geometry.transforms import to_box_frame

CHANNELS = ("log_count", "max_height", "mean_height", "occupancy")
NUM_CHANNELS = len(CHANNELS)


@dataclass(frozen=True)
class GridSpec:
    cell_size: float = 0.5
    half_extent: float = 70.0

    def __post_init__(self):
        if self.cell_size <= 0 or self.half_extent <= 0:
            raise InvalidInputError(f"invalid grid: cell_size={self.cell_size} half_extent={self.half_extent}")
        if self.shape[0] < 1:
            raise InvalidInputError("grid must have at least one cell")

    @classmethod
    def from_settings(cls, settings: GridSettings) -> "GridSpec":
        return cls(settings.cell_size, settings.half_extent)

    @property
    def shape(self) -> Tuple[int, int]:
        n = int(round(2.0 * self.half_extent / self.cell_size))
        return n, n

    @property
    def origin(self) -> Tuple[float, float]:
        """Ego-frame coordinates of the low corner of cell (0, 0)"""
        return -self.half_extent, -self.half_extent

    def cell_indices(self, xy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row (x) and column (y) index of every point, plus the in-extent mask"""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        i = np.floor((xy[:, 0] - self.origin[0]) / self.cell_size).astype(int)
        j = np.floor((xy[:, 1] - self.origin[1]) / self.cell_size).astype(int)
        h, w = self.shape
        inside = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        return i, j, inside

    def cell_centers(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        x = self.origin[0] + (np.asarray(i) + 0.5) * self.cell_size
        y = self.origin[1] + (np.asarray(j) + 0.5) * self.cell_size
        return np.column_stack([x, y])


@dataclass(frozen=True)
class BevGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.spec.shape + (NUM_CHANNELS,):
            raise InvalidInputError(f"grid values must be {self.spec.shape + (NUM_CHANNELS,)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("grid contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class VisibilityMask:
    values: np.ndarray
    gamma: float

    @property
    def visible_cells(self) -> int:
        return int(self.values.sum())


def bev_rasterize(cloud: PointCloud, spec: GridSpec) -> BevGrid:
    h, w = spec.shape
    values = np.zeros((h, w, NUM_CHANNELS))
    pts = cloud.points
    if len(pts) == 0:
        return BevGrid(spec, values)
    i, j, inside = spec.cell_indices(pts[:, :2])
    if not np.any(inside):
        return BevGrid(spec, values)
    flat = i[inside] * w + j[inside]
    z = pts[inside, 2]

    count = np.bincount(flat, minlength=h * w).astype(float)
    z_sum = np.bincount(flat, weights=z, minlength=h * w)
    z_max = np.full(h * w, -np.inf)
    np.maximum.at(z_max, flat, z)
    occupied = count > 0

    values = values.reshape(h * w, NUM_CHANNELS)
    values[:, 0] = np.log1p(count)
    values[occupied, 1] = z_max[occupied]
    values[occupied, 2] = z_sum[occupied] / count[occupied]
    values[:, 3] = occupied
    return BevGrid(spec, values.reshape(h, w, NUM_CHANNELS))


def _grid_values(grid) -> np.ndarray:
    return grid.values if isinstance(grid, BevGrid) else np.asarray(grid, dtype=float)


def visibility_mask(ego_grid, gamma: float = 1e-3) -> VisibilityMask:
    if gamma < 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    values = _grid_values(ego_grid)
    return VisibilityMask(values.mean(axis=2) >= gamma, float(gamma))


def bev_alignment_loss(ego_grid, multi_grid, mask) -> Tuple[float, np.ndarray]:
    """Masked mean squared difference and its gradient with respect to the ego grid"""
    fe, fm = _grid_values(ego_grid), _grid_values(multi_grid)
    m = mask.values if isinstance(mask, VisibilityMask) else np.asarray(mask)
    if fe.shape != fm.shape or fe.ndim != 3:
        raise InvalidInputError(f"grid shapes differ: {fe.shape} vs {fm.shape}")
    if m.shape != fe.shape[:2]:
        raise InvalidInputError(f"mask shape {m.shape} does not match grid {fe.shape[:2]}")
    m = m.astype(float)
    z = float(m.sum())
    if z == 0:
        return 0.0, np.zeros_like(fe)
    diff = (fe - fm) * m[:, :, None]
    return float(np.sum(diff * diff) / z), 2.0 * diff / z


def ccl_guidance(ego_grid, multi_grid, gamma: float = 1e-3, mu3: float = 1.5) -> np.ndarray:
    """mu3-scaled alignment gradient under the ego visibility mask"""
    _, grad = bev_alignment_loss(ego_grid, multi_grid, visibility_mask(ego_grid, gamma))
    return mu3 * grad


@dataclass(frozen=True)
class BevGuidance:
    """
    Alignment signal of one frame, read per box footprint.

    The ego detector has no BEV encoder to backpropagate into, so the signal
    reaches it as an auxiliary scorer input: the mu3-scaled mean absolute
    masked difference inside each candidate's footprint.
    """
    spec: GridSpec
    difference: np.ndarray
    mask: VisibilityMask
    mu3: float
    loss: float

    @property
    def gradient(self) -> np.ndarray:
        z = self.mask.visible_cells
        if z == 0:
            return np.zeros_like(self.difference)
        return self.mu3 * 2.0 * self.difference / z

    def footprint_cells(self, box: Box3D) -> Tuple[np.ndarray, np.ndarray]:
        corners = box.bev_corners()
        lo_i, lo_j, _ = self.spec.cell_indices(corners.min(axis=0)[None, :])
        hi_i, hi_j, _ = self.spec.cell_indices(corners.max(axis=0)[None, :])
        h, w = self.spec.shape
        ii, jj = np.meshgrid(np.arange(max(lo_i[0], 0), min(hi_i[0], h - 1) + 1),
                             np.arange(max(lo_j[0], 0), min(hi_j[0], w - 1) + 1), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        if ii.size:
            centers = self.spec.cell_centers(ii, jj)
            local = to_box_frame(np.column_stack([centers, np.full(len(centers), box.cz)]), box)
            inside = (np.abs(local[:, 0]) <= 0.5 * box.l) & (np.abs(local[:, 1]) <= 0.5 * box.w)
            if np.any(inside):
                return ii[inside], jj[inside]
        ci, cj, ok = self.spec.cell_indices(np.array([[box.cx, box.cy]]))
        return (ci, cj) if ok[0] else (np.zeros(0, dtype=int), np.zeros(0, dtype=int))

    def footprint_discrepancy(self, box: Box3D) -> float:
        ii, jj = self.footprint_cells(box)
        if ii.size == 0:
            return 0.0
        return float(self.mu3 * np.mean(np.abs(self.difference[ii, jj])))

    def footprint_discrepancies(self, boxes: Sequence[Box3D]) -> np.ndarray:
        return np.array([self.footprint_discrepancy(b) for b in boxes], dtype=float)


def build_guidance(ego_cloud: PointCloud, multi_cloud: PointCloud, spec: GridSpec,
                   gamma: float = 1e-3, mu3: float = 1.5) -> BevGuidance:
    fe = bev_rasterize(ego_cloud, spec)
    fm = bev_rasterize(multi_cloud, spec)
    mask = visibility_mask(fe, gamma)
    loss, _ = bev_alignment_loss(fe, fm, mask)
    difference = (fe.values - fm.values) * mask.values[:, :, None]
    return BevGuidance(spec, difference, mask, float(mu3), loss)


def save_grid(grid: BevGrid, path: Union[str, Path]) -> Path:
    """One header line (H W C cell_size origin_x origin_y) and one row of C values per cell"""
    path = Path(path)
    h, w = grid.spec.shape
    ox, oy = grid.spec.origin
    header = f"{h} {w} {NUM_CHANNELS} {grid.spec.cell_size!r} {ox!r} {oy!r}"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, grid.values.reshape(-1, NUM_CHANNELS), fmt="%.17g", header=header)
    except OSError as e:
        raise ArtifactIOError(path, f"cannot write BEV grid: {e}") from e
    return path


def load_grid(path: Union[str, Path]) -> BevGrid:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            header = f.readline().lstrip("#").split()
        flat = np.loadtxt(path, ndmin=2)
        h, w, c = (int(v) for v in header[:3])
        cell_size, ox = float(header[3]), float(header[4])
    except (OSError, ValueError, IndexError) as e:
        raise ArtifactIOError(path, f"cannot read BEV grid: {e}") from e
    return BevGrid(GridSpec(cell_size, -ox), flat.reshape(h, w, c))
