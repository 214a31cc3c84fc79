"""Synthetic multi-camera re-identification data.

Each identity owns a latent vector; a camera renders it through its own
affine map plus Gaussian noise. Records carry the one-view side label and,
for augmented samples, the lineage back to their order-0 source.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .configio import atomic_write_text, format_kv, from_kv, read_kv, to_kv
from .errors import ConfigError, LoadError, ParseError, SchemaError
from .numerics import Rng

SIDES = ("X", "Y")
RECORD_KEYS = (
    "sample_id",
    "identity_id",
    "camera_id",
    "side",
    "order",
    "source_sample_id",
    "features",
)


@dataclass
class SampleRecord:
    sample_id: int
    identity_id: int
    camera_id: int
    side: Optional[str]
    order: int
    source_sample_id: int
    features: np.ndarray

    def to_json(self) -> str:
        obj = {
            "sample_id": self.sample_id,
            "identity_id": self.identity_id,
            "camera_id": self.camera_id,
            "side": self.side,
            "order": self.order,
            "source_sample_id": self.source_sample_id,
            "features": [float(v) for v in self.features],
        }
        return json.dumps(obj, allow_nan=False)

    def same_as(self, other: "SampleRecord") -> bool:
        return (
            self.sample_id == other.sample_id
            and self.identity_id == other.identity_id
            and self.camera_id == other.camera_id
            and self.side == other.side
            and self.order == other.order
            and self.source_sample_id == other.source_sample_id
            and np.array_equal(self.features, other.features)
        )


@dataclass
class IdentityLatent:
    identity_id: int
    latent: np.ndarray


@dataclass
class CameraModel:
    camera_id: int
    transform: np.ndarray  # d_f x d_z
    offset: np.ndarray  # d_f
    noise_sigma: float = 0.0

    def render(self, latent: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.transform @ latent + self.offset + self.noise_sigma * noise


@dataclass
class DatasetManifest:
    seed: int = 0
    num_identities: int = 300
    num_test_identities: int = 100
    num_cameras: int = 4
    samples_per_identity: int = 4
    latent_dim: int = 16
    feature_dim: int = 32
    noise_sigma: float = 0.5
    # per-camera deviation of the rendering matrix from the shared base
    camera_spread: float = 0.6
    offset_scale: float = 1.0

    def validate(self) -> None:
        if self.num_identities < 1:
            raise ConfigError("num_identities must be >= 1")
        if not 0 <= self.num_test_identities <= self.num_identities:
            raise ConfigError("num_test_identities must lie in [0, num_identities]")
        if self.num_cameras < 2 or self.samples_per_identity < 2:
            raise ConfigError("each identity needs >= 2 samples over >= 2 cameras")
        if self.feature_dim < 2 or self.latent_dim < 1:
            raise ConfigError("feature_dim must be >= 2 and latent_dim >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "DatasetManifest":
        values = read_kv(path) if path is not None else {}
        values.update(overrides or {})
        return from_kv(cls, values)

    def to_text(self) -> str:
        return format_kv(to_kv(self))


@dataclass
class SynthDataset:
    manifest: DatasetManifest
    records: list[SampleRecord]
    cameras: list[CameraModel]
    latents: list[IdentityLatent]
    train_identities: list[int] = field(default_factory=list)
    test_identities: list[int] = field(default_factory=list)

    def split_records(self) -> tuple[list[SampleRecord], list[SampleRecord]]:
        test = set(self.test_identities)
        train_recs = [r for r in self.records if r.identity_id not in test]
        test_recs = [r for r in self.records if r.identity_id in test]
        return train_recs, test_recs


def make_cameras(manifest: DatasetManifest, rng: Rng) -> list[CameraModel]:
    d_f, d_z = manifest.feature_dim, manifest.latent_dim
    base = rng.normals(d_f, d_z) / math.sqrt(d_z)
    cams = []
    for c in range(manifest.num_cameras):
        transform = base + manifest.camera_spread * rng.normals(d_f, d_z) / math.sqrt(d_z)
        offset = manifest.offset_scale * rng.normals(d_f)
        cams.append(CameraModel(c, transform, offset, manifest.noise_sigma))
    return cams


def generate_dataset(
    manifest: DatasetManifest, cameras: list[CameraModel] | None = None
) -> SynthDataset:
    """Render order-0 records for every identity; deterministic in the seed.

    Passing ``cameras`` replaces the randomly drawn camera models (their
    noise_sigma is used as given).
    """
    manifest.validate()
    rng = Rng(manifest.seed)
    latents = [
        IdentityLatent(i, rng.normals(manifest.latent_dim)) for i in range(manifest.num_identities)
    ]
    drawn = make_cameras(manifest, rng)
    if cameras is None:
        cameras = drawn
    else:
        if len(cameras) < 2:
            raise ConfigError("need at least two cameras")
        for cam in cameras:
            if cam.transform.shape != (manifest.feature_dim, manifest.latent_dim):
                raise ConfigError(f"camera {cam.camera_id} transform has wrong shape")
    perm = rng.permutation(manifest.num_identities)
    test_ids = sorted(perm[: manifest.num_test_identities])
    train_ids = sorted(perm[manifest.num_test_identities:])

    records = []
    n_cams = len(cameras)
    spi = manifest.samples_per_identity
    for ident in latents:
        cam_ids = rng.sample(range(n_cams), min(spi, n_cams))
        while len(cam_ids) < spi:
            cam_ids.append(rng.integers(n_cams))
        for c in cam_ids:
            noise = rng.normals(manifest.feature_dim)
            sid = len(records)
            feats = cameras[c].render(ident.latent, noise)
            records.append(SampleRecord(sid, ident.identity_id, cameras[c].camera_id, None, 0, sid, feats))
    return SynthDataset(manifest, records, cameras, latents, train_ids, test_ids)


def split_one_view(records: list[SampleRecord], seed: int) -> dict[int, str]:
    """Random bipartition of order-0 records into sides X and Y.

    Camera labels are ignored. Sizes differ by at most one; which side gets
    the odd record is drawn as well.
    """
    if not records:
        raise ConfigError("cannot partition an empty record list")
    for r in records:
        if r.order != 0:
            raise SchemaError(f"sample {r.sample_id} is order {r.order}; partition takes order 0")
    rng = Rng(seed)
    ids = sorted(r.sample_id for r in records)
    rng.shuffle(ids)
    n = len(ids)
    n_x = n // 2 + (rng.integers(2) if n % 2 else 0)
    return {sid: ("X" if k < n_x else "Y") for k, sid in enumerate(ids)}


def assign_sides(records: list[SampleRecord], sides: dict[int, str]) -> list[SampleRecord]:
    out = []
    for r in records:
        out.append(
            SampleRecord(r.sample_id, r.identity_id, r.camera_id, sides[r.sample_id], r.order,
                         r.source_sample_id, r.features)
        )
    return out


def write_dataset(path, records: list[SampleRecord], header: dict | None = None) -> None:
    lines = []
    if header is not None:
        lines.append(json.dumps({"header": header}, sort_keys=True))
    lines.extend(r.to_json() for r in records)
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def _parse_record(obj: dict, lineno: int) -> SampleRecord:
    missing = [k for k in RECORD_KEYS if k not in obj]
    if "source_sample_id" in missing and obj.get("order") not in (None, 0):
        raise SchemaError(f"line {lineno}: order-{obj['order']} record lacks source_sample_id")
    if missing:
        raise SchemaError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    extra = set(obj) - set(RECORD_KEYS)
    if extra:
        raise SchemaError(f"line {lineno}: unexpected field(s) {', '.join(sorted(extra))}")
    for key in ("sample_id", "identity_id", "camera_id", "order"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise SchemaError(f"line {lineno}: {key} must be an integer")
    if obj["order"] not in (0, 1, 2):
        raise SchemaError(f"line {lineno}: order must be 0, 1 or 2")
    src = obj["source_sample_id"]
    if src is None and obj["order"] > 0:
        raise SchemaError(f"line {lineno}: order-{obj['order']} record lacks source_sample_id")
    if not isinstance(src, int) or isinstance(src, bool):
        raise SchemaError(f"line {lineno}: source_sample_id must be an integer")
    if obj["order"] == 0 and src != obj["sample_id"]:
        raise SchemaError(f"line {lineno}: order-0 record must be its own source")
    if obj["side"] not in (None, "X", "Y"):
        raise SchemaError(f"line {lineno}: side must be X, Y or null")
    feats = obj["features"]
    if not isinstance(feats, list) or not feats or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats
    ):
        raise SchemaError(f"line {lineno}: features must be a non-empty list of numbers")
    return SampleRecord(
        obj["sample_id"], obj["identity_id"], obj["camera_id"], obj["side"], obj["order"], src,
        np.array(feats, dtype=np.float64),
    )


def read_dataset_with_header(path) -> tuple[list[SampleRecord], dict | None]:
    header = None
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read dataset {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("record must be a JSON object", lineno)
            if "header" in obj and len(obj) == 1:
                if records or header is not None:
                    raise ParseError("header must be the first line", lineno)
                header = obj["header"]
                continue
            records.append(_parse_record(obj, lineno))
    check_lineage(records)
    return records, header


def read_dataset(path) -> list[SampleRecord]:
    return read_dataset_with_header(path)[0]


def check_lineage(records: list[SampleRecord]) -> None:
    """Every augmented record must point at an order-0 record of the same identity."""
    order0 = {r.sample_id: r for r in records if r.order == 0}
    seen = set()
    for r in records:
        if r.sample_id in seen:
            raise SchemaError(f"duplicate sample_id {r.sample_id}")
        seen.add(r.sample_id)
        if r.order == 0:
            continue
        src = order0.get(r.source_sample_id)
        if src is None:
            raise SchemaError(
                f"sample {r.sample_id} references missing order-0 source {r.source_sample_id}"
            )
        if src.identity_id != r.identity_id:
            raise SchemaError(f"sample {r.sample_id} identity differs from its source")
