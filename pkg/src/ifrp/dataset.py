"""Paired (stylized, real) face dataset synthesis with controlled misalignment.

Layout on disk: ``rf/{id}.png`` aligned ground-truth crops, ``sf/{id}_{style}.png``
misaligned stylized portraits, and ``manifest.json`` tying them together. The
manifest is the only coupling point to the trainer. Stylization happens after
the warp, so the portrait itself is unaligned and warp borders get stylized
along with the face.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import stn
from .images import center_crop_resize, load_image, quantize_unit, save_image

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1

ROTATION_LIMIT_DEG = 45.0
SCALE_LIMITS = (0.7, 1.3)


@dataclass(frozen=True)
class MisalignmentRanges:
    """Uniform sampling ranges for the synthetic warps.

    Rotation in degrees within [-45, 45], isotropic scale within [0.7, 1.3],
    translation as a fraction of image width. Defaults cover the full tested
    rotation/scale ranges.
    """

    rotation_deg: tuple = (-45.0, 45.0)
    scale: tuple = (0.7, 1.3)
    translation_frac: tuple = (-0.1, 0.1)

    def __post_init__(self):
        for name in ("rotation_deg", "scale", "translation_frac"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo {lo} > hi {hi}")
        if self.rotation_deg[0] < -ROTATION_LIMIT_DEG or self.rotation_deg[1] > ROTATION_LIMIT_DEG:
            raise ValueError(f"rotation_deg {self.rotation_deg} outside +-{ROTATION_LIMIT_DEG}")
        if self.scale[0] < SCALE_LIMITS[0] or self.scale[1] > SCALE_LIMITS[1]:
            raise ValueError(f"scale {self.scale} outside {SCALE_LIMITS}")

    def contains(self, params: stn.TransformParams) -> bool:
        rot_deg = np.degrees(params.rotation)
        s = np.exp(params.log_scale)
        tx = params.tx / 2.0
        ty = params.ty / 2.0
        return (
            self.rotation_deg[0] - 1e-9 <= rot_deg <= self.rotation_deg[1] + 1e-9
            and self.scale[0] - 1e-9 <= s <= self.scale[1] + 1e-9
            and all(self.translation_frac[0] - 1e-9 <= t <= self.translation_frac[1] + 1e-9 for t in (tx, ty))
        )

    def to_dict(self) -> dict:
        return {
            "rotation_deg": list(self.rotation_deg),
            "scale": list(self.scale),
            "translation_frac": list(self.translation_frac),
        }

    @staticmethod
    def from_dict(d: dict) -> "MisalignmentRanges":
        return MisalignmentRanges(
            rotation_deg=tuple(d["rotation_deg"]),
            scale=tuple(d["scale"]),
            translation_frac=tuple(d["translation_frac"]),
        )


@dataclass(frozen=True)
class FacePairRecord:
    """One (stylized, real) training pair."""

    record_id: str
    source_id: str
    style_id: str
    rf_path: str
    sf_path: str
    split: str
    misalignment: stn.TransformParams

    def to_dict(self) -> dict:
        p = self.misalignment
        return {
            "record_id": self.record_id,
            "source_id": self.source_id,
            "style_id": self.style_id,
            "rf_path": self.rf_path,
            "sf_path": self.sf_path,
            "split": self.split,
            "misalignment": {
                "log_scale": p.log_scale,
                "rotation": p.rotation,
                "tx": p.tx,
                "ty": p.ty,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "FacePairRecord":
        m = d["misalignment"]
        return FacePairRecord(
            record_id=d["record_id"],
            source_id=d["source_id"],
            style_id=d["style_id"],
            rf_path=d["rf_path"],
            sf_path=d["sf_path"],
            split=d["split"],
            misalignment=stn.TransformParams(m["log_scale"], m["rotation"], m["tx"], m["ty"]),
        )


@dataclass
class DatasetManifest:
    """Index of a synthesized dataset; serializes to canonical JSON."""

    records: list
    image_size: int
    styles: list
    seed: int
    split_counts: dict
    ranges: MisalignmentRanges = field(default_factory=MisalignmentRanges)
    version: int = MANIFEST_VERSION
    root: Path = None

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "seed": self.seed,
            "image_size": self.image_size,
            "styles": list(self.styles),
            "split_counts": dict(sorted(self.split_counts.items())),
            "misalignment_ranges": self.ranges.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc["version"] != MANIFEST_VERSION:
            raise ValueError(f"manifest version {doc['version']} unsupported")
        return DatasetManifest(
            records=[FacePairRecord.from_dict(d) for d in doc["records"]],
            image_size=doc["image_size"],
            styles=doc["styles"],
            seed=doc["seed"],
            split_counts=doc["split_counts"],
            ranges=MisalignmentRanges.from_dict(doc["misalignment_ranges"]),
            version=doc["version"],
            root=path.parent,
        )

    def validate(self, deep: bool = False) -> None:
        """Check path existence, split exclusivity and range containment."""
        if self.root is None:
            raise ValueError("manifest has no root directory")
        seen = {}
        for r in self.records:
            for p in (r.rf_path, r.sf_path):
                if not (self.root / p).exists():
                    raise FileNotFoundError(self.root / p)
            prev = seen.setdefault(r.record_id, r.split)
            if prev != r.split:
                raise ValueError(f"record {r.record_id} appears in splits {prev} and {r.split}")
            if not self.ranges.contains(r.misalignment):
                raise ValueError(f"record {r.record_id} misalignment outside configured ranges")
            if deep:
                for p in (r.rf_path, r.sf_path):
                    img = load_image(self.root / p)
                    if img.shape != (self.image_size, self.image_size, 3):
                        raise ValueError(f"{p}: shape {img.shape} != {self.image_size}")


def _record_seed(seed: int, source_id: str, style_id: str) -> int:
    digest = hashlib.sha256(f"{seed}/{source_id}/{style_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_misalignment(rng_seed: int, ranges: MisalignmentRanges) -> stn.TransformParams:
    """Uniform draw per component; deterministic for a fixed seed.

    Draw order: rotation, scale, tx, ty. Translation fractions of width map to
    normalized coordinates (factor 2).
    """
    rng = np.random.default_rng(rng_seed)
    rot = np.radians(rng.uniform(*ranges.rotation_deg))
    scale = rng.uniform(*ranges.scale)
    tx = 2.0 * rng.uniform(*ranges.translation_frac)
    ty = 2.0 * rng.uniform(*ranges.translation_frac)
    return stn.TransformParams(float(np.log(scale)), float(rot), float(tx), float(ty))


def apply_affine(image: np.ndarray, params: stn.TransformParams) -> np.ndarray:
    """Warp image content by params about its centre (bilinear, zero fill).

    Content-forward semantics: scale 0.7 shrinks the face to 0.7x its extent,
    positive translation moves it right/down. Identity parameters return the
    input exactly.
    """
    vec = params.as_vector()
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"non-finite transform parameters {vec}")
    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))
    out = stn.warp(t, torch.from_numpy(params.inverse().as_vector()))
    return out.numpy().transpose(1, 2, 0)


def synthesize_pairs(
    source_dir,
    stylizers,
    ranges: MisalignmentRanges,
    out_dir,
    split_spec: dict,
    image_size: int = 128,
    seed: int = 0,
) -> DatasetManifest:
    """Build the paired dataset and write it under out_dir.

    For every source image: the aligned centre crop becomes the RF ground
    truth; for every stylizer, a misaligned stylized SF is written, where the
    warp parameters are drawn from per-record seeds (stable under any
    processing order). split_spec maps split name -> number of source faces;
    counts must sum to the number of sources.
    """
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    if not stylizers:
        raise ValueError("need at least one stylizer")
    sources = sorted(p for p in source_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not sources:
        raise ValueError(f"no decodable images in {source_dir}")
    if sum(split_spec.values()) != len(sources):
        raise ValueError(f"split counts {split_spec} do not sum to {len(sources)} sources")

    order = np.random.default_rng(seed).permutation(len(sources))
    split_of = {}
    cursor = 0
    for split_name in sorted(split_spec):
        for i in range(split_spec[split_name]):
            split_of[sources[order[cursor]].stem] = split_name
            cursor += 1

    (out_dir / "rf").mkdir(parents=True, exist_ok=True)
    (out_dir / "sf").mkdir(parents=True, exist_ok=True)

    records = []
    counts = {}
    for src in sources:
        face_id = src.stem
        rf = quantize_unit(center_crop_resize(load_image(src), image_size))
        rf_rel = f"rf/{face_id}.png"
        save_image(rf, out_dir / rf_rel)
        for stylizer in stylizers:
            style_id = stylizer.style_id
            params = sample_misalignment(_record_seed(seed, face_id, style_id), ranges)
            try:
                sf = stylizer(apply_affine(rf, params))
            except Exception:
                log.warning("stylizer %s failed on %s; record skipped", style_id, face_id, exc_info=True)
                continue
            sf_rel = f"sf/{face_id}_{style_id}.png"
            save_image(sf, out_dir / sf_rel)
            split_name = split_of[face_id]
            records.append(
                FacePairRecord(
                    record_id=f"{face_id}_{style_id}",
                    source_id=face_id,
                    style_id=style_id,
                    rf_path=rf_rel,
                    sf_path=sf_rel,
                    split=split_name,
                    misalignment=params,
                )
            )
            counts[split_name] = counts.get(split_name, 0) + 1

    manifest = DatasetManifest(
        records=records,
        image_size=image_size,
        styles=[s.style_id for s in stylizers],
        seed=seed,
        split_counts=counts,
        ranges=ranges,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def toy_faces(n: int, size: int = 64, seed: int = 0) -> list:
    """Procedural face-like test images (deterministic), as [0, 1] arrays.

    Each face gets its own skin tone, background, eye spacing and mouth
    curvature. Stand-in source material for demos, smoke runs and tests; a
    real dataset drops in as a directory of photos with the same layout.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size]
    cy, cx = (size - 1) / 2.0, (size - 1) / 2.0
    faces = []
    for _ in range(n):
        bg = rng.uniform(0.1, 0.9, size=3)
        grad = (ys / size)[..., None] * rng.uniform(-0.3, 0.3, size=3)
        img = np.clip(bg + grad, 0, 1) * np.ones((size, size, 3))

        skin = np.array([rng.uniform(0.55, 0.95), rng.uniform(0.4, 0.75), rng.uniform(0.3, 0.6)])
        ax_y, ax_x = size * rng.uniform(0.30, 0.38), size * rng.uniform(0.22, 0.30)
        head = ((ys - cy) / ax_y) ** 2 + ((xs - cx) / ax_x) ** 2 <= 1.0
        img[head] = skin

        hair = np.array([rng.uniform(0.05, 0.4)] * 3) * rng.uniform(0.5, 1.5, size=3)
        hairline = head & (ys < cy - ax_y * rng.uniform(0.3, 0.6))
        img[hairline] = np.clip(hair, 0, 1)

        eye_dx = ax_x * rng.uniform(0.35, 0.55)
        eye_y = cy - ax_y * rng.uniform(0.05, 0.2)
        eye_r = max(1.0, size * rng.uniform(0.02, 0.04))
        for sx in (-1, 1):
            eye = (ys - eye_y) ** 2 + (xs - (cx + sx * eye_dx)) ** 2 <= eye_r ** 2
            img[eye] = rng.uniform(0.0, 0.25)

        mouth_y = cy + ax_y * rng.uniform(0.35, 0.55)
        mouth_w = ax_x * rng.uniform(0.4, 0.7)
        curve = rng.uniform(-0.15, 0.25) * ax_y
        mouth = (np.abs(xs - cx) <= mouth_w) & (
            np.abs(ys - (mouth_y + curve * ((xs - cx) / (mouth_w + 1e-9)) ** 2)) <= max(1.0, size * 0.02)
        )
        img[mouth] = np.array([rng.uniform(0.5, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.2, 0.4)])

        faces.append(np.clip(img, 0.0, 1.0))
    return faces


def write_toy_sources(dest, n: int, size: int = 64, seed: int = 0) -> Path:
    """Write toy faces as face_000.png ... into dest and return the path."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for i, face in enumerate(toy_faces(n, size=size, seed=seed)):
        save_image(face, dest / f"face_{i:03d}.png")
    return dest
