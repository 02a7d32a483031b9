"""Feature-stability histograms and their spatial rendering.

Counts how often each voxel enters the top-N candidate set across re-run
selection folds, superimposes those counts across participants onto the
voxel grid, smooths with a Gaussian kernel specified by its full width at
half maximum, keeps the highest-valued voxels, and drops small connected
clusters. The surviving map is exportable as a raw volume plus a cluster
table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import BrainMask, DatasetBundle, VolumeGrid, split_block_level
from .evaluation import PipelineConfig, _map_ordered
from .relieff import score_features, select_top

GAUSS_FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))  # FWHM = factor * sigma

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True)
class VoxelHistogram:
    """How many folds selected each feature."""

    counts: np.ndarray  # int64, length P
    n_folds: int
    participant_id: int | None = None

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if np.any(c < 0) or np.any(c > self.n_folds):
            raise ValueError("counts must lie in [0, n_folds]")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class ScalarMap:
    grid: VolumeGrid
    values: np.ndarray  # float64 per grid voxel, linear x-fastest order

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_voxels,):
            raise ValueError("map values must cover the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("map values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def as_volume(self) -> np.ndarray:
        """(nx, ny, nz) view consistent with x-fastest linear indexing."""
        return self.values.reshape(self.grid.dims, order="F")


@dataclass(frozen=True)
class ClusterMask:
    grid: VolumeGrid
    member: np.ndarray  # bool per grid voxel
    clusters: tuple[np.ndarray, ...]  # linear voxel indices per connected component
    connectivity: int = 6

    def __post_init__(self):
        m = np.asarray(self.member, dtype=bool)
        m.flags.writeable = False
        object.__setattr__(self, "member", m)
        object.__setattr__(self, "clusters", tuple(np.asarray(c, dtype=np.int64)
                                                   for c in self.clusters))


def selection_histogram(bundle: DatasetBundle, participant_id: int,
                        n_folds: int = 100, cfg: PipelineConfig = None,
                        n_threads: int = 1) -> VoxelHistogram:
    """Count top-N selections over fresh block-level splits of one participant.

    Fold f splits with seed cfg.seed + f and scores ReliefF with the same
    derived seed on the train side only.
    """
    if cfg is None:
        cfg = PipelineConfig()
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")
    p = bundle.n_features
    n_top = min(cfg.relieff.top_n, p)

    def one_fold(f: int) -> np.ndarray:
        seed = cfg.seed + f
        train, _ = split_block_level(bundle, participant_id, cfg.train_fraction, seed)
        scores = score_features(train, dc_replace(cfg.relieff, seed=seed))
        return select_top(scores, n_top).indices

    counts = np.zeros(p, dtype=np.int64)
    for idx in _map_ordered(one_fold, list(range(n_folds)), n_threads):
        counts[idx] += 1
    return VoxelHistogram(counts=counts, n_folds=n_folds, participant_id=participant_id)


def superimpose(histograms: list[VoxelHistogram], mask: BrainMask) -> ScalarMap:
    """Per-voxel sum of histogram counts placed on the grid; voxels outside
    the mask are zero."""
    if not histograms:
        raise ValueError("need at least one histogram")
    p = mask.n_features
    total = np.zeros(p, dtype=np.int64)
    for h in histograms:
        if h.counts.size != p:
            raise ValueError(f"histogram length {h.counts.size} does not match mask P={p}")
        total += h.counts
    values = np.zeros(mask.grid.n_voxels, dtype=np.float64)
    values[mask.feature_to_voxel] = total
    return ScalarMap(grid=mask.grid, values=values)


def fwhm_to_sigma_voxels(fwhm_mm: float, voxel_size_mm) -> tuple[float, float, float]:
    """Per-axis Gaussian sigma in voxel units for a given FWHM in mm."""
    return tuple((fwhm_mm / s) / GAUSS_FWHM_FACTOR for s in voxel_size_mm)


def smooth_map(scalar_map: ScalarMap, fwhm_mm: float = 6.0) -> ScalarMap:
    """Separable Gaussian smoothing with zero-padded boundaries.

    The kernel is truncated at 4 sigma and renormalized to unit sum, so mass
    is preserved away from the boundaries.
    """
    if fwhm_mm <= 0:
        raise ValueError("fwhm_mm must be > 0")
    sigma = fwhm_to_sigma_voxels(fwhm_mm, scalar_map.grid.voxel_size_mm)
    smoothed = ndimage.gaussian_filter(scalar_map.as_volume(), sigma=sigma,
                                       mode="constant", cval=0.0, truncate=4.0)
    return ScalarMap(grid=scalar_map.grid, values=smoothed.ravel(order="F"))


def _components(grid: VolumeGrid, member_flat: np.ndarray, connectivity: int
                ) -> tuple[np.ndarray, ...]:
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be one of {sorted(_STRUCTURES)}")
    volume = member_flat.reshape(grid.dims, order="F")
    labeled, n = ndimage.label(volume, structure=_STRUCTURES[connectivity])
    flat = labeled.ravel(order="F")
    idx = np.flatnonzero(flat)
    labs = flat[idx]
    order = np.lexsort((idx, labs))
    idx, labs = idx[order], labs[order]
    bounds = np.searchsorted(labs, np.arange(1, n + 1))
    return tuple(np.split(idx, bounds[1:])) if n else ()


def threshold_top(scalar_map: ScalarMap, top_n: int = 2500,
                  connectivity: int = 6) -> ClusterMask:
    """Keep the top_n highest-valued nonzero voxels (ties at the cut are
    included, so the count may exceed top_n) and label their connected
    components."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    values = scalar_map.values
    nonzero = values > 0
    n_nonzero = int(nonzero.sum())
    member = nonzero.copy()
    if 0 < top_n < n_nonzero:
        cutoff = np.sort(values[nonzero])[::-1][top_n - 1]
        member = values >= cutoff
    clusters = _components(scalar_map.grid, member, connectivity)
    return ClusterMask(grid=scalar_map.grid, member=member, clusters=clusters,
                       connectivity=connectivity)


def remove_small_clusters(mask: ClusterMask, min_size: int = 5) -> ClusterMask:
    """Drop connected clusters smaller than min_size voxels. Idempotent."""
    keep = tuple(c for c in mask.clusters if c.size >= min_size)
    member = np.zeros(mask.grid.n_voxels, dtype=bool)
    for c in keep:
        member[c] = True
    return ClusterMask(grid=mask.grid, member=member, clusters=keep,
                       connectivity=mask.connectivity)


# ---------------------------------------------------------------------------
# Export: raw little-endian float32 volume + sidecar JSON + cluster table
# ---------------------------------------------------------------------------


def write_volume(scalar_map: ScalarMap, base_path) -> tuple[Path, Path]:
    """Write <base>.vol (raw <f4, x-fastest order) and <base>.json sidecar."""
    base = Path(base_path)
    vol_path = base.with_suffix(".vol")
    vol_path.write_bytes(scalar_map.values.astype("<f4").tobytes())
    sidecar = {
        "dims": list(scalar_map.grid.dims),
        "voxel_size_mm": list(scalar_map.grid.voxel_size_mm),
        "origin_mm": list(scalar_map.grid.origin_mm),
        "dtype": "<f4",
        "order": "x-fastest",
    }
    json_path = base.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
    return vol_path, json_path


def write_cluster_tsv(mask: ClusterMask, scalar_map: ScalarMap, path) -> Path:
    """One row per surviving cluster: id, size, peak value, peak position in
    mm. Clusters are numbered by descending size (ties by first voxel)."""
    ordered = sorted(mask.clusters, key=lambda c: (-c.size, int(c[0]) if c.size else 0))
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cluster_id\tsize\tpeak_value\tpeak_x_mm\tpeak_y_mm\tpeak_z_mm\n")
        for cid, voxels in enumerate(ordered, start=1):
            vals = scalar_map.values[voxels]
            peak_voxel = int(voxels[int(np.argmax(vals))])
            x, y, z = scalar_map.grid.coords_mm(peak_voxel)
            fh.write(f"{cid}\t{voxels.size}\t{vals.max()!r}\t{x!r}\t{y!r}\t{z!r}\n")
    return path
