"""Data model for valence decoding: voxel grids, masked feature vectors,
labeled scans with block/session/participant provenance, dataset (de)serialization,
leakage-safe splits, and a synthetic planted-signal generator.

All types are immutable after construction; every operation is a pure function
of its inputs plus an explicit seed.
"""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

MASK_FILE = "mask.bin"
SCANS_FILE = "scans.bin"
MANIFEST_FILE = "manifest.json"

DEFAULT_VOXEL_SIZE_MM = (3.0, 3.0, 4.0)


class DataError(ValueError):
    """A dataset violates its format or content invariants."""


class Label(IntEnum):
    NEG = 0
    POS = 1


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class VolumeGrid:
    """A 3D voxel grid with physical spacing.

    Linear indices are x-fastest: index = x + nx*(y + ny*z).
    """

    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float] = DEFAULT_VOXEL_SIZE_MM
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"grid dims must be three integers >= 1, got {self.dims}")
        if len(self.voxel_size_mm) != 3 or any(s <= 0 for s in self.voxel_size_mm):
            raise ValueError(f"voxel sizes must be positive, got {self.voxel_size_mm}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size_mm", tuple(float(s) for s in self.voxel_size_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def to_linear(self, x: int, y: int, z: int) -> int:
        nx, ny, nz = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise ValueError(f"voxel ({x},{y},{z}) outside grid {self.dims}")
        return x + nx * (y + ny * z)

    def to_coords(self, index: int) -> tuple[int, int, int]:
        nx, ny, nz = self.dims
        if not 0 <= index < self.n_voxels:
            raise ValueError(f"linear index {index} outside grid of {self.n_voxels} voxels")
        x = index % nx
        y = (index // nx) % ny
        z = index // (nx * ny)
        return x, y, z

    def coords_mm(self, index: int) -> tuple[float, float, float]:
        x, y, z = self.to_coords(index)
        ox, oy, oz = self.origin_mm
        sx, sy, sz = self.voxel_size_mm
        return ox + x * sx, oy + y * sy, oz + z * sz


@dataclass(frozen=True)
class BrainMask:
    """In-mask voxel selection plus the dense feature indexing it induces.

    Feature index p corresponds to the p-th in-mask voxel in ascending
    linear-index order.
    """

    grid: VolumeGrid
    in_mask: np.ndarray  # bool, length grid.n_voxels, linear order

    def __post_init__(self):
        m = np.asarray(self.in_mask, dtype=bool)
        if m.shape != (self.grid.n_voxels,):
            raise ValueError(
                f"mask length {m.shape} does not match grid with {self.grid.n_voxels} voxels"
            )
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "in_mask", m)
        fv = np.flatnonzero(m)
        fv.flags.writeable = False
        object.__setattr__(self, "_feature_to_voxel", fv)

    @property
    def n_features(self) -> int:
        return int(self._feature_to_voxel.size)

    @property
    def feature_to_voxel(self) -> np.ndarray:
        """Linear voxel index of each feature, ascending."""
        return self._feature_to_voxel

    def voxel_to_feature(self, linear_index: int) -> int:
        pos = int(np.searchsorted(self._feature_to_voxel, linear_index))
        if pos >= self.n_features or self._feature_to_voxel[pos] != linear_index:
            raise ValueError(f"voxel {linear_index} is not in the mask")
        return pos

    def fingerprint(self) -> dict:
        """Identity of this mask for refusing mismatched data at load time."""
        import hashlib

        digest = hashlib.sha256(self.in_mask.astype(np.uint8).tobytes()).hexdigest()
        return {"dims": list(self.grid.dims), "n_features": self.n_features, "mask_sha256": digest}


@dataclass(frozen=True)
class LabeledScan:
    """One brain volume flattened to its in-mask feature vector."""

    features: np.ndarray  # float32, length P
    label: Label
    participant_id: int
    session_id: int
    block_id: int  # unique within the participant
    scan_index: int  # position within the block

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float32)
        if f.ndim != 1:
            raise ValueError("scan features must be a 1-D vector")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "label", Label(self.label))

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.participant_id, self.session_id, self.block_id, self.scan_index)


@dataclass(frozen=True)
class DatasetBundle:
    """A full dataset: grid, mask, and labeled scans."""

    grid: VolumeGrid
    mask: BrainMask
    scans: tuple[LabeledScan, ...]
    label_names: dict[int, str] = field(default_factory=lambda: {0: "NEG", 1: "POS"})

    def __post_init__(self):
        object.__setattr__(self, "scans", tuple(self.scans))
        p = self.mask.n_features
        seen = set()
        block_labels: dict[tuple[int, int], Label] = {}
        for s in self.scans:
            if s.features.shape != (p,):
                raise DataError(
                    f"scan {s.key} has {s.features.shape[0]} features, mask has {p}"
                )
            if not np.all(np.isfinite(s.features)):
                raise DataError(f"scan {s.key} contains non-finite values")
            if s.key in seen:
                raise DataError(f"duplicate scan key {s.key}")
            seen.add(s.key)
            bk = (s.participant_id, s.block_id)
            if bk in block_labels:
                if block_labels[bk] != s.label:
                    raise DataError(
                        f"block {bk} mixes labels ({block_labels[bk].name} vs {s.label.name})"
                    )
            else:
                block_labels[bk] = s.label

    @property
    def n_features(self) -> int:
        return self.mask.n_features

    def participant_ids(self) -> list[int]:
        return sorted({s.participant_id for s in self.scans})

    def scans_of(self, participant_id: int) -> list[LabeledScan]:
        return [s for s in self.scans if s.participant_id == participant_id]


def feature_matrix(scans) -> np.ndarray:
    """Stack scan feature vectors into an (n_scans, P) float32 matrix."""
    return np.stack([s.features for s in scans])


def labels01(scans) -> np.ndarray:
    return np.fromiter((int(s.label) for s in scans), dtype=np.int8, count=len(scans))


def labels_pm1(scans) -> np.ndarray:
    """Labels as -1 (NEG) / +1 (POS)."""
    return (labels01(scans).astype(np.float64) * 2.0) - 1.0


def blocks_of(scans) -> "OrderedDict[tuple[int, int], list[LabeledScan]]":
    """Group scans by (participant_id, block_id) preserving scan order."""
    out: OrderedDict[tuple[int, int], list[LabeledScan]] = OrderedDict()
    for s in scans:
        out.setdefault((s.participant_id, s.block_id), []).append(s)
    return out


# ---------------------------------------------------------------------------
# Serialization
#
# Directory layout: manifest.json + mask.bin (one 0/1 byte per grid voxel,
# linear order) + scans.bin (concatenated little-endian float32 vectors at
# the offsets declared in the manifest).
# ---------------------------------------------------------------------------


def save_dataset(bundle: DatasetBundle, dir_path) -> Path:
    """Write a dataset directory; returns the manifest path.

    load_dataset inverts this exactly (bitwise on features).
    """
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    (out / MASK_FILE).write_bytes(bundle.mask.in_mask.astype(np.uint8).tobytes())

    p = bundle.n_features
    entries = []
    with open(out / SCANS_FILE, "wb") as fh:
        for i, s in enumerate(bundle.scans):
            offset = i * 4 * p
            fh.write(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
            entries.append(
                {
                    "participant": s.participant_id,
                    "session": s.session_id,
                    "block": s.block_id,
                    "scan_index": s.scan_index,
                    "label": int(s.label),
                    "offset": offset,
                }
            )
    manifest = {
        "grid": {
            "dims": list(bundle.grid.dims),
            "voxel_size_mm": list(bundle.grid.voxel_size_mm),
            "origin_mm": list(bundle.grid.origin_mm),
        },
        "label_names": {str(k): v for k, v in sorted(bundle.label_names.items())},
        "scans": entries,
    }
    manifest_path = out / MANIFEST_FILE
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    return manifest_path


def load_dataset(manifest_path) -> DatasetBundle:
    """Read a dataset directory back into a DatasetBundle.

    Raises DataError on any format or content violation (missing files,
    dimension mismatches, non-finite values, duplicate keys, mixed-label
    blocks).
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILE
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"manifest is not valid JSON: {e}") from e

    for key in ("grid", "label_names", "scans"):
        if key not in manifest:
            raise DataError(f"manifest missing key {key!r}")
    g = manifest["grid"]
    try:
        grid = VolumeGrid(
            dims=tuple(g["dims"]),
            voxel_size_mm=tuple(g["voxel_size_mm"]),
            origin_mm=tuple(g["origin_mm"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"bad grid specification: {e}") from e

    base = manifest_path.parent
    mask_bytes = _read_required(base / MASK_FILE)
    if len(mask_bytes) != grid.n_voxels:
        raise DataError(
            f"mask.bin has {len(mask_bytes)} bytes, grid has {grid.n_voxels} voxels"
        )
    mask = BrainMask(grid, np.frombuffer(mask_bytes, dtype=np.uint8) != 0)
    p = mask.n_features

    payload = _read_required(base / SCANS_FILE)
    scans = []
    for entry in manifest["scans"]:
        try:
            offset = int(entry["offset"])
            label = Label(int(entry["label"]))
            scan = LabeledScan(
                features=np.frombuffer(payload, dtype="<f4", count=p, offset=offset),
                label=label,
                participant_id=int(entry["participant"]),
                session_id=int(entry["session"]),
                block_id=int(entry["block"]),
                scan_index=int(entry["scan_index"]),
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"bad scan entry {entry!r}: {e}") from e
        except ValueError as e:
            raise DataError(f"bad scan entry (offset {entry.get('offset')}): {e}") from e
        scans.append(scan)

    label_names = {int(k): str(v) for k, v in manifest["label_names"].items()}
    return DatasetBundle(grid=grid, mask=mask, scans=tuple(scans), label_names=label_names)


def _read_required(path: Path) -> bytes:
    if not path.is_file():
        raise DataError(f"missing dataset file: {path}")
    return path.read_bytes()


# ---------------------------------------------------------------------------
# Synthetic planted-signal generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic benchmark generator.

    Each participant contributes `sessions_per_participant` sessions; each
    session holds `blocks_per_session_per_label` blocks of each label
    (one deterministic half per label, NEG first unless neg_first=False),
    and each block `scans_per_block` scans. Scan features are
    noise_sigma * N(0,1) plus a per-participant scalar offset
    (sd participant_offset_sigma, applied to every voxel), and the planted
    features additionally receive +/- effect_size/2 * noise_sigma by label.
    """

    n_participants: int
    n_features: int
    planted: tuple[int, ...]
    effect_size: float
    noise_sigma: float = 1.0
    participant_offset_sigma: float = 0.0
    sessions_per_participant: int = 12
    blocks_per_session_per_label: int = 3
    scans_per_block: int = 16
    seed: int = 0
    neg_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "planted", tuple(int(i) for i in self.planted))
        if self.n_participants < 1:
            raise ValueError("n_participants must be >= 1")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if len(set(self.planted)) != len(self.planted):
            raise ValueError("planted indices must be distinct")
        if any(i < 0 or i >= self.n_features for i in self.planted):
            raise ValueError("planted indices must lie in [0, n_features)")
        if self.effect_size < 0:
            raise ValueError("effect_size must be >= 0")
        if self.noise_sigma < 0 or self.participant_offset_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        for name in ("sessions_per_participant", "blocks_per_session_per_label", "scans_per_block"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def scans_per_participant(self) -> int:
        return (
            self.sessions_per_participant
            * 2
            * self.blocks_per_session_per_label
            * self.scans_per_block
        )


def grid_and_mask_for(n_features: int) -> BrainMask:
    """Smallest cubic grid whose first n_features voxels form the mask."""
    side = max(1, math.ceil(n_features ** (1.0 / 3.0)))
    while side**3 < n_features:  # guard against cbrt rounding
        side += 1
    grid = VolumeGrid(dims=(side, side, side))
    in_mask = np.zeros(grid.n_voxels, dtype=bool)
    in_mask[:n_features] = True
    return BrainMask(grid, in_mask)


def compact_blob(mask: BrainMask, size: int) -> np.ndarray:
    """Feature indices of one face-connected blob of `size` in-mask voxels,
    grown breadth-first from the in-mask voxel nearest the grid center."""
    if size < 1 or size > mask.n_features:
        raise ValueError(f"blob size {size} outside [1, {mask.n_features}]")
    grid = mask.grid
    nx, ny, nz = grid.dims
    center = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0])
    vox = mask.feature_to_voxel
    coords = np.stack([vox % nx, (vox // nx) % ny, vox // (nx * ny)], axis=1)
    start = vox[int(np.argmin(((coords - center) ** 2).sum(axis=1)))]

    in_mask = mask.in_mask
    chosen = [int(start)]
    seen = {int(start)}
    cursor = 0
    while len(chosen) < size:
        if cursor >= len(chosen):
            raise ValueError(f"mask has no connected component of {size} voxels at the center")
        v = chosen[cursor]
        cursor += 1
        x, y, z = grid.to_coords(v)
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            xx, yy, zz = x + dx, y + dy, z + dz
            if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz):
                continue
            nb = grid.to_linear(xx, yy, zz)
            if nb in seen or not in_mask[nb]:
                continue
            seen.add(nb)
            chosen.append(nb)
            if len(chosen) == size:
                break
    features = sorted(mask.voxel_to_feature(v) for v in chosen[:size])
    return np.asarray(features, dtype=np.int64)


def generate_synthetic(spec: SyntheticSpec) -> tuple[DatasetBundle, np.ndarray]:
    """Generate a deterministic planted-signal dataset.

    Returns the bundle and the planted feature indices (ground truth).
    """
    mask = grid_and_mask_for(spec.n_features)
    rng = np.random.default_rng(spec.seed)
    planted = np.asarray(spec.planted, dtype=np.int64)
    shift = 0.5 * spec.effect_size * spec.noise_sigma

    first, second = (Label.NEG, Label.POS) if spec.neg_first else (Label.POS, Label.NEG)
    bpl = spec.blocks_per_session_per_label
    scans: list[LabeledScan] = []
    for pid in range(spec.n_participants):
        offset = rng.normal(0.0, spec.participant_offset_sigma)
        values = rng.standard_normal((spec.scans_per_participant, spec.n_features))
        values *= spec.noise_sigma
        values += offset
        row = 0
        meta = []
        for session in range(spec.sessions_per_participant):
            for j in range(2 * bpl):
                label = first if j < bpl else second
                block_id = session * 2 * bpl + j
                for scan_index in range(spec.scans_per_block):
                    if planted.size:
                        values[row, planted] += shift if label == Label.POS else -shift
                    meta.append((label, session, block_id, scan_index))
                    row += 1
        values32 = values.astype(np.float32)
        values32.flags.writeable = False
        for r, (label, session, block_id, scan_index) in enumerate(meta):
            scans.append(
                LabeledScan(
                    features=values32[r],
                    label=label,
                    participant_id=pid,
                    session_id=session,
                    block_id=block_id,
                    scan_index=scan_index,
                )
            )
    bundle = DatasetBundle(grid=mask.grid, mask=mask, scans=tuple(scans))
    return bundle, planted


# ---------------------------------------------------------------------------
# Leakage-safe splits
# ---------------------------------------------------------------------------


def split_block_level(
    bundle: DatasetBundle, participant_id: int, train_fraction: float, seed: int
) -> tuple[list[LabeledScan], list[LabeledScan]]:
    """Randomly partition one participant's blocks into train/test.

    Every scan of a block lands wholly on one side. The test side gets
    max(1, round-half-up((1 - train_fraction) * n_blocks)) blocks (capped so
    train keeps at least two), and the train side always contains both labels.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    scans = bundle.scans_of(participant_id)
    if not scans:
        raise DataError(f"participant {participant_id} not in dataset")

    block_label: dict[int, Label] = {}
    for s in scans:
        block_label.setdefault(s.block_id, s.label)
    per_label = {lab: sum(1 for v in block_label.values() if v == lab) for lab in Label}
    if min(per_label.values()) < 2:
        raise DataError(
            f"participant {participant_id} needs >= 2 blocks per label, has {per_label}"
        )

    block_ids = sorted(block_label)
    n_blocks = len(block_ids)
    n_test = max(1, _round_half_up((1.0 - train_fraction) * n_blocks))
    n_test = min(n_test, n_blocks - 2)  # train must keep one block of each label

    rng = np.random.default_rng(seed)
    order = [block_ids[i] for i in rng.permutation(n_blocks)]
    test_ids, train_ids = order[:n_test], order[n_test:]

    train_labels = {block_label[b] for b in train_ids}
    for missing in Label:
        if missing not in train_labels:
            # All blocks of this label were drawn into test; swap one back.
            give = next(b for b in test_ids if block_label[b] == missing)
            take = next(b for b in train_ids if block_label[b] != missing)
            test_ids[test_ids.index(give)] = take
            train_ids[train_ids.index(take)] = give

    train_set, test_set = set(train_ids), set(test_ids)
    train = [s for s in scans if s.block_id in train_set]
    test = [s for s in scans if s.block_id in test_set]
    return train, test


def split_participant_level(
    bundle: DatasetBundle, train_fraction: float, seed: int
) -> tuple[list[LabeledScan], list[LabeledScan]]:
    """Randomly partition participants into train/test; all scans of a
    participant land wholly on one side."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    pids = bundle.participant_ids()
    n = len(pids)
    if n < 2:
        raise DataError(f"participant-level split needs >= 2 participants, have {n}")
    n_test = max(1, _round_half_up((1.0 - train_fraction) * n))
    n_test = min(n_test, n - 1)

    rng = np.random.default_rng(seed)
    order = [pids[i] for i in rng.permutation(n)]
    test_set = set(order[:n_test])
    train = [s for s in bundle.scans if s.participant_id not in test_set]
    test = [s for s in bundle.scans if s.participant_id in test_set]
    return train, test
