"""Patch data model: splitting, augmentation, unlabeled marking, dataset I/O.

A patch dataset on disk is a directory of BSR files plus ``manifest.json``
listing, per patch, the layer file paths, the labeled flag, and the split
assignment. In memory the reference layer uses NaN for nodata; the sentinel
from the BSR header is applied only at the file boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bsr import RasterStack, read_raster, write_raster
from .errors import ConfigError, ContractError, EmptyDatasetError

DEFAULT_PATCH_SIZE = 128
MANIFEST_NAME = "manifest.json"


@dataclass
class PatchSample:
    """One H×W training unit: input bands plus reference/mask/stand layers.

    ``reference`` is float32 with NaN where no label exists; values are
    meters. ``forest_mask`` False excludes a pixel from every loss and
    metric. ``stand_ids`` 0 means "no stand". ``origin`` tracks the source
    patch through augmentation so splits stay disjoint by origin.
    """

    name: str
    inputs: RasterStack
    reference: np.ndarray
    forest_mask: np.ndarray
    stand_ids: np.ndarray
    labeled: bool = True
    origin: str = ""

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.float32)
        self.forest_mask = np.asarray(self.forest_mask, dtype=bool)
        self.stand_ids = np.asarray(self.stand_ids, dtype=np.int32)
        shape = (self.inputs.height, self.inputs.width)
        for layer_name, layer in (
            ("reference", self.reference),
            ("forest_mask", self.forest_mask),
            ("stand_ids", self.stand_ids),
        ):
            if layer.shape != shape:
                raise ContractError(
                    f"{self.name}: {layer_name} shape {layer.shape} != input grid {shape}"
                )
        if not self.origin:
            self.origin = self.name

    @property
    def height(self) -> int:
        return self.inputs.height

    @property
    def width(self) -> int:
        return self.inputs.width

    @property
    def channels(self) -> int:
        return self.inputs.bands

    def forest_cover(self) -> float:
        return float(self.forest_mask.mean())

    def supervision_mask(self) -> np.ndarray:
        """Pixels usable for supervised terms: labeled, forest, reference defined."""
        if not self.labeled:
            return np.zeros_like(self.forest_mask)
        return self.forest_mask & np.isfinite(self.reference)


@dataclass
class DatasetSplit:
    train: list[PatchSample] = field(default_factory=list)
    val: list[PatchSample] = field(default_factory=list)
    test: list[PatchSample] = field(default_factory=list)
    labeled_fraction: float = 1.0

    def all_patches(self) -> list[PatchSample]:
        return list(self.train) + list(self.val) + list(self.test)


def filter_and_split(
    patches: Sequence[PatchSample],
    forest_cover_min: float = 0.2,
    fractions: tuple[float, float] = (0.5, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Drop low-forest patches, then partition the rest into test/val/train.

    Rounding rule: n_test = round(test_fraction * n), n_val = round(val_fraction * n)
    (Python banker's rounding), remainder to train. Deterministic per seed.
    """
    test_frac, val_frac = fractions
    if test_frac + val_frac >= 1.0:
        raise ConfigError(f"fractions {fractions} must sum to < 1")
    if not patches:
        raise EmptyDatasetError("no patches supplied")
    eligible = [p for p in patches if p.forest_cover() >= forest_cover_min]
    if not eligible:
        raise EmptyDatasetError(
            f"all {len(patches)} patches fall below forest cover {forest_cover_min}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))
    n = len(eligible)
    n_test = round(test_frac * n)
    n_val = round(val_frac * n)
    shuffled = [eligible[i] for i in order]
    return DatasetSplit(
        test=shuffled[:n_test],
        val=shuffled[n_test : n_test + n_val],
        train=shuffled[n_test + n_val :],
    )


# ---------------------------------------------------------------------------
# Augmentation: exact 90-degree rotations and integer-pixel circular shifts,
# applied identically to every layer of a patch.
# ---------------------------------------------------------------------------

def rotate_patch(patch: PatchSample, quarter_turns: int, name: str | None = None) -> PatchSample:
    k = quarter_turns % 4
    return replace(
        patch,
        name=name or f"{patch.name}_rot{90 * k}",
        inputs=RasterStack(
            values=np.ascontiguousarray(np.rot90(patch.inputs.values, k, axes=(1, 2))),
            nodata=patch.inputs.nodata,
            pixel_size=patch.inputs.pixel_size,
        ),
        reference=np.ascontiguousarray(np.rot90(patch.reference, k)),
        forest_mask=np.ascontiguousarray(np.rot90(patch.forest_mask, k)),
        stand_ids=np.ascontiguousarray(np.rot90(patch.stand_ids, k)),
        origin=patch.origin,
    )


def shift_patch(patch: PatchSample, dy: int, dx: int, name: str | None = None) -> PatchSample:
    return replace(
        patch,
        name=name or f"{patch.name}_shift{dy}_{dx}",
        inputs=RasterStack(
            values=np.roll(patch.inputs.values, (dy, dx), axis=(1, 2)),
            nodata=patch.inputs.nodata,
            pixel_size=patch.inputs.pixel_size,
        ),
        reference=np.roll(patch.reference, (dy, dx), axis=(0, 1)),
        forest_mask=np.roll(patch.forest_mask, (dy, dx), axis=(0, 1)),
        stand_ids=np.roll(patch.stand_ids, (dy, dx), axis=(0, 1)),
        origin=patch.origin,
    )


def augment(
    patches: Sequence[PatchSample],
    seed: int = 0,
    multiplier: float = 4.0,
) -> list[PatchSample]:
    """Grow a training list to round(multiplier * n) patches.

    Output keeps the originals and appends rotated (90/180/270) and
    circularly shifted copies (offsets up to a quarter patch), cycling
    per patch until the target count is reached. Every layer of a copy is
    transformed with the same parameters.
    """
    patches = list(patches)
    n = len(patches)
    if n == 0:
        return []
    target = int(round(multiplier * n))
    out = list(patches)
    rng = np.random.default_rng(seed)
    serial = 0
    while len(out) < target:
        src = patches[serial % n]
        variant = serial // n
        kind = variant % 4
        if kind < 3:
            aug = rotate_patch(src, kind + 1, name=f"{src.name}_aug{variant}")
        else:
            max_shift = max(1, src.height // 4)
            dy = int(rng.integers(-max_shift, max_shift + 1))
            dx = int(rng.integers(-max_shift, max_shift + 1))
            if dy == 0 and dx == 0:
                dy = max_shift
            aug = shift_patch(src, dy, dx, name=f"{src.name}_aug{variant}")
        out.append(aug)
        serial += 1
    return out


def mark_unlabeled(split: DatasetSplit, labeled_fraction: float, seed: int = 0) -> DatasetSplit:
    """Keep a seeded fraction of train origins labeled; flag the rest unlabeled.

    The reference layer of unlabeled patches is retained for evaluation but
    must never feed a loss (``PatchSample.supervision_mask`` enforces this).
    Val and test patches always stay labeled. Copies sharing an origin share
    the flag.
    """
    if not 0.0 < labeled_fraction <= 1.0:
        raise ConfigError(f"labeled_fraction {labeled_fraction} outside (0, 1]")
    origins = sorted({p.origin for p in split.train})
    n_labeled = int(round(labeled_fraction * len(origins)))
    if n_labeled == 0:
        raise ConfigError(
            f"labeled_fraction {labeled_fraction} keeps zero of {len(origins)} train origins labeled"
        )
    rng = np.random.default_rng(seed)
    keep = set(rng.permutation(len(origins))[:n_labeled])
    labeled_origins = {origins[i] for i in keep}
    train = [replace(p, labeled=p.origin in labeled_origins) for p in split.train]
    val = [replace(p, labeled=True) for p in split.val]
    test = [replace(p, labeled=True) for p in split.test]
    return DatasetSplit(train=train, val=val, test=test, labeled_fraction=labeled_fraction)


# ---------------------------------------------------------------------------
# Dataset directory I/O
# ---------------------------------------------------------------------------

def _write_patch(patch: PatchSample, out_dir: Path) -> dict:
    nodata = patch.inputs.nodata
    px = patch.inputs.pixel_size
    ref = patch.reference.copy()
    ref[~np.isfinite(ref)] = nodata
    layers = {
        "inputs": patch.inputs,
        "reference": RasterStack(ref[None], nodata=nodata, pixel_size=px),
        "forest_mask": RasterStack(
            patch.forest_mask.astype(np.float32)[None], nodata=nodata, pixel_size=px
        ),
        "stand_ids": RasterStack(
            patch.stand_ids.astype(np.float32)[None], nodata=nodata, pixel_size=px
        ),
    }
    entry: dict = {"name": patch.name, "origin": patch.origin, "labeled": bool(patch.labeled)}
    for key, stack in layers.items():
        rel = f"{patch.name}_{key}.bsr"
        write_raster(stack, out_dir / rel)
        entry[key] = rel
    return entry


def save_dataset(split: DatasetSplit, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"labeled_fraction": split.labeled_fraction, "patches": []}
    for split_name, patch_list in (("train", split.train), ("val", split.val), ("test", split.test)):
        for patch in patch_list:
            entry = _write_patch(patch, out_dir)
            entry["split"] = split_name
            manifest["patches"].append(entry)
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def _read_patch(entry: dict, root: Path) -> PatchSample:
    inputs = read_raster(root / entry["inputs"])
    ref_stack = read_raster(root / entry["reference"])
    ref = ref_stack.values[0].copy()
    ref[ref == np.float32(ref_stack.nodata)] = np.nan
    forest = read_raster(root / entry["forest_mask"]).values[0] > 0.5
    stands = read_raster(root / entry["stand_ids"]).values[0].astype(np.int32)
    return PatchSample(
        name=entry["name"],
        inputs=inputs,
        reference=ref,
        forest_mask=forest,
        stand_ids=stands,
        labeled=bool(entry["labeled"]),
        origin=entry.get("origin", entry["name"]),
    )


def load_dataset(path: str | Path) -> DatasetSplit:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise EmptyDatasetError(f"{root}: no {MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text())
    split = DatasetSplit(labeled_fraction=float(manifest.get("labeled_fraction", 1.0)))
    buckets = {"train": split.train, "val": split.val, "test": split.test}
    for entry in manifest["patches"]:
        bucket = buckets.get(entry["split"])
        if bucket is None:
            raise EmptyDatasetError(f"{root}: unknown split {entry['split']!r}")
        bucket.append(_read_patch(entry, root))
    if not split.all_patches():
        raise EmptyDatasetError(f"{root}: manifest lists no patches")
    return split
