"""Dataset augmentation: salience filtering, multiband fusion onto backgrounds,
YOLO labels and a stratified train/test/val split.

Randomness comes from ``numpy.random.Generator(PCG64)`` seeded through
``numpy.random.default_rng(seed)``, which is portable across platforms.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import shutil
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pave_forge import imageio
from pave_forge.core import resize_bilinear
from pave_forge.errors import DataError
from pave_forge.pyramid import blend_images, make_weight_map, max_levels
from pave_forge.scharr import compute_gradients, extract_feature_mask, salience_score

log = logging.getLogger(__name__)

CLASS_IDS = {"KC": 0, "LF": 1, "XB": 2}
SPLITS = ("train", "test", "val")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("image", "label", "damage", "background", "class", "class_id",
                    "cx", "cy", "w", "h", "split")
UNASSIGNED = "-"


@dataclass
class PipelineConfig:
    damage_dir: str
    background_dir: str
    output_dir: str
    salience_threshold: float = 0.05
    mask_quantile: float = 0.90
    pyramid_levels: int = 4
    feather_sigma: float = 2.0
    pairs_per_damage: int = 1
    seed: int = 0
    split: tuple = (0.8, 0.1, 0.1)
    target_per_class: Optional[int] = None
    # weight the damage image 1 over the whole frame (identity check mode)
    full_frame: bool = False
    workers: int = 1

    def __post_init__(self):
        self.split = tuple(float(r) for r in self.split)
        check_ratios(self.split)
        if self.pairs_per_damage < 1:
            raise ValueError("pairs_per_damage must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.target_per_class is not None and self.target_per_class < 1:
            raise ValueError("target_per_class must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "PipelineConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment.

        Relative directories are resolved against ``base_dir``.
        """
        types = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _convert(key, value, lineno)
        missing = [k for k in ("damage_dir", "background_dir", "output_dir") if k not in values]
        if missing:
            raise ValueError(f"config is missing required keys: {', '.join(missing)}")
        for k in ("damage_dir", "background_dir", "output_dir"):
            values[k] = os.path.join(base_dir, values[k])
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), os.path.dirname(os.path.abspath(path)))


def _convert(key: str, value: str, lineno: int):
    try:
        if key in ("salience_threshold", "mask_quantile", "feather_sigma"):
            return float(value)
        if key in ("pyramid_levels", "pairs_per_damage", "seed", "workers"):
            return int(value)
        if key == "target_per_class":
            return None if value.lower() in ("", "none") else int(value)
        if key == "split":
            return tuple(float(v) for v in value.replace(":", ",").split(","))
        if key == "full_frame":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
    except ValueError:
        raise ValueError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return value


def check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")


@dataclass
class ManifestRecord:
    image: str
    label: str
    damage: str
    background: str
    class_name: str
    bbox: tuple  # normalized (cx, cy, w, h)
    split: str = UNASSIGNED

    @property
    def class_id(self) -> int:
        return CLASS_IDS[self.class_name]

    def label_line(self) -> str:
        cx, cy, w, h = self.bbox
        return f"{self.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n"

    def row(self) -> list[str]:
        return [self.image, self.label, self.damage, self.background, self.class_name,
                str(self.class_id), *(f"{v:.6f}" for v in self.bbox), self.split]


@dataclass
class Manifest:
    records: list
    # (damage file name, salience score) for images dropped by the filter
    rejected: list = field(default_factory=list)

    def write(self, output_dir) -> str:
        path = os.path.join(output_dir, MANIFEST_NAME)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            writer.writerows(r.row() for r in self.records)
        return path

    @classmethod
    def read(cls, output_dir) -> "Manifest":
        path = os.path.join(output_dir, MANIFEST_NAME)
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh, delimiter="\t"))
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: unexpected manifest header")
        records = []
        for row in rows[1:]:
            if len(row) != len(MANIFEST_COLUMNS):
                raise DataError(f"{path}: malformed row {row!r}")
            records.append(ManifestRecord(row[0], row[1], row[2], row[3], row[4],
                                          tuple(float(v) for v in row[6:10]), row[10]))
        return cls(records)


def class_of(path: str) -> str:
    name = os.path.basename(path)
    prefix = name.split("_", 1)[0]
    if "_" not in name or prefix not in CLASS_IDS:
        raise DataError(f"{name}: damage file names must start with one of "
                        f"{', '.join(p + '_' for p in CLASS_IDS)}")
    return prefix


def normalized_bbox(bbox: tuple, height: int, width: int) -> tuple:
    x0, y0, x1, y1 = bbox
    return ((x0 + x1) / 2 / width, (y0 + y1) / 2 / height, (x1 - x0) / width, (y1 - y0) / height)


@dataclass(frozen=True)
class _Source:
    path: str
    class_name: str
    image: np.ndarray
    weight: np.ndarray
    bbox: tuple


def _prepare(path: str, cfg: PipelineConfig):
    img = imageio.load_image(path)
    if min(img.shape[:2]) < 3:
        raise DataError(f"{path}: image smaller than 3x3")
    field_ = compute_gradients(imageio.to_gray(img))
    score = salience_score(field_)
    if score < cfg.salience_threshold:
        return score, None
    feat = extract_feature_mask(field_, cfg.mask_quantile)
    if not feat.has_feature:
        return score, None
    if cfg.pyramid_levels > max_levels(*img.shape[:2]):
        raise DataError(f"{path}: {img.shape[1]}x{img.shape[0]} is too small for "
                        f"{cfg.pyramid_levels} pyramid levels")
    weight = (np.ones(img.shape[:2]) if cfg.full_frame
              else make_weight_map(feat.mask, cfg.feather_sigma))
    h, w = img.shape[:2]
    bbox = (0, 0, w, h) if cfg.full_frame else feat.bbox
    return score, _Source(path, class_of(path), img, weight, bbox)


def _compose(src: _Source, bg_path: str, levels: int) -> np.ndarray:
    bg = imageio.load_image(bg_path)
    fg = src.image
    if fg.ndim == 3 or bg.ndim == 3:
        fg, bg = imageio.to_rgb(fg), imageio.to_rgb(bg)
    bg = resize_bilinear(bg, *fg.shape[:2])
    return blend_images(fg, bg, src.weight, levels)


def _pairings(sources: list, n_bg: int, cfg: PipelineConfig, rng: np.random.Generator):
    """(source, background index, per-source counter) in generation order."""
    out = []
    if cfg.target_per_class is None:
        for src in sources:
            for k, b in enumerate(rng.integers(0, n_bg, size=cfg.pairs_per_damage)):
                out.append((src, int(b), k))
        return out
    for cls in CLASS_IDS:
        members = [s for s in sources if s.class_name == cls]
        if not members:
            continue
        counts = {}
        for i in range(cfg.target_per_class):
            src = members[i % len(members)]
            k = counts.get(src.path, 0)
            counts[src.path] = k + 1
            out.append((src, int(rng.integers(0, n_bg)), k))
    return out


def run_augment(cfg: PipelineConfig) -> Manifest:
    """Filter, fuse and label; images land in ``output_dir/images`` unsplit."""
    for d in (cfg.damage_dir, cfg.background_dir):
        if not os.path.isdir(d):
            raise DataError(f"directory not found: {d}")
    damage = imageio.list_images(cfg.damage_dir)
    backgrounds = imageio.list_images(cfg.background_dir)
    if not damage:
        raise DataError(f"no images in {cfg.damage_dir}")
    if not backgrounds:
        raise DataError(f"no images in {cfg.background_dir}")
    for p in damage:
        class_of(p)

    sources, rejected = [], []
    for p in damage:
        score, src = _prepare(p, cfg)
        if src is None:
            rejected.append((os.path.basename(p), score))
            log.info("rejected %s (score %.6f)", p, score)
        else:
            sources.append(src)
    if not sources:
        listing = ", ".join(f"{n}={s:.6f}" for n, s in rejected)
        raise DataError(f"no damage image reached salience threshold "
                        f"{cfg.salience_threshold}: {listing}")

    rng = np.random.default_rng(cfg.seed)
    jobs = _pairings(sources, len(backgrounds), cfg, rng)
    img_dir = os.path.join(cfg.output_dir, "images")
    lbl_dir = os.path.join(cfg.output_dir, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lbl_dir, exist_ok=True)

    def work(job):
        src, b, k = job
        bg_path = backgrounds[b]
        stem = (f"{os.path.splitext(os.path.basename(src.path))[0]}__"
                f"{os.path.splitext(os.path.basename(bg_path))[0]}__{k:03d}")
        fused = _compose(src, bg_path, cfg.pyramid_levels)
        h, w = fused.shape[:2]
        rec = ManifestRecord(f"images/{stem}.png", f"labels/{stem}.txt",
                             os.path.basename(src.path), os.path.basename(bg_path),
                             src.class_name, normalized_bbox(src.bbox, h, w))
        imageio.save_image(os.path.join(cfg.output_dir, rec.image), fused)
        with open(os.path.join(cfg.output_dir, rec.label), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(rec.label_line())
        return rec

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    records.sort(key=lambda r: (r.damage, r.background, r.image))
    return Manifest(records, rejected)


def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items (ties favour earlier splits)."""
    exact = [n * r for r in ratios]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: -(exact[i] - counts[i]))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def assign_splits(class_names: Sequence[str], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> list[str]:
    """Stratified split labels, aligned with ``class_names``."""
    check_ratios(ratios)
    rng = np.random.default_rng(seed)
    labels = [None] * len(class_names)
    by_class: dict[str, list[int]] = {}
    for i, c in enumerate(class_names):
        by_class.setdefault(c, []).append(i)
    for cls in sorted(by_class):
        idx = by_class[cls]
        if len(idx) < 3:
            warnings.warn(f"class {cls} has only {len(idx)} item(s); all assigned to train",
                          stacklevel=2)
            for i in idx:
                labels[i] = "train"
            continue
        perm = rng.permutation(len(idx))
        counts = split_counts(len(idx), ratios)
        bounds = np.cumsum(counts)
        for rank, j in enumerate(perm):
            labels[idx[j]] = SPLITS[int(np.searchsorted(bounds, rank, side="right"))]
    return labels


def split_dataset(manifest: Manifest, output_dir, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> Manifest:
    """Assign splits and move each image/label pair into ``<split>/{images,labels}/``."""
    labels = assign_splits([r.class_name for r in manifest.records], ratios, seed)
    for s in SPLITS:
        for sub in ("images", "labels"):
            os.makedirs(os.path.join(output_dir, s, sub), exist_ok=True)
    records = []
    for rec, split in zip(manifest.records, labels):
        image = f"{split}/images/{os.path.basename(rec.image)}"
        label = f"{split}/labels/{os.path.basename(rec.label)}"
        for old, new in ((rec.image, image), (rec.label, label)):
            src, dst = os.path.join(output_dir, old), os.path.join(output_dir, new)
            if src == dst:
                continue
            if not os.path.exists(src):
                raise DataError(f"manifest entry missing on disk: {src}")
            shutil.move(src, dst)
        records.append(dataclasses.replace(rec, image=image, label=label, split=split))
    for sub in ("images", "labels"):
        leftover = os.path.join(output_dir, sub)
        if os.path.isdir(leftover) and not os.listdir(leftover):
            os.rmdir(leftover)
    return Manifest(records, manifest.rejected)


def augment_and_split(cfg: PipelineConfig) -> Manifest:
    manifest = split_dataset(run_augment(cfg), cfg.output_dir, cfg.split, cfg.seed)
    manifest.write(cfg.output_dir)
    return manifest
