"""Synthetic identity data, zero-shot splitting, and triplet sampling.

Each identity gets a latent vector; every sample is a camera-specific
affine transform of that latent plus Gaussian noise, embedded into the
payload shape. A configured fraction of samples are outliers: their
payload is drawn from a *different* random identity's distribution with
5x the noise, and they carry a generator-known is_outlier flag so that
training diagnostics can compare clean and corrupted triplets.

Datasets are immutable after generation. On disk they are either a
directory with manifest.json + pooled DSPT tensors, or (vector mode) a
single CSV with one row per sample.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .model_io import read_dspt, write_dspt

MANIFEST_FILE = "manifest.json"
TENSORS_FILE = "tensors.dspt"


@dataclass(frozen=True)
class Sample:
    sample_id: int
    identity_id: int
    camera_id: int
    payload: np.ndarray
    is_outlier: bool


@dataclass(frozen=True)
class SyntheticConfig:
    identities: int = 40
    samples_per_identity_per_camera: int = 4
    latent_dim: int = 6
    payload_dims: tuple[int, ...] = (16,)
    camera_seeds: tuple[int, int] = (101, 202)
    noise_sigma: float = 0.25
    outlier_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.identities < 2:
            raise ConfigError(f"need at least 2 identities, got {self.identities}")
        if self.samples_per_identity_per_camera < 1:
            raise ConfigError("need at least 1 sample per identity per camera")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigError(f"outlier fraction must be in [0,1), got {self.outlier_fraction}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if int(np.prod(self.payload_dims)) < self.latent_dim:
            raise ConfigError(
                f"payload shape {self.payload_dims} smaller than latent dim {self.latent_dim}"
            )
        if len(self.payload_dims) not in (1, 3):
            raise ConfigError("payload must be rank 1 (vector) or rank 3 (image)")


@dataclass(frozen=True)
class Dataset:
    name: str
    payload_dims: tuple[int, ...]
    samples: tuple[Sample, ...]
    by_id: dict[int, Sample] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for s in self.samples:
            if tuple(s.payload.shape) != tuple(self.payload_dims):
                raise ContractError(
                    f"sample {s.sample_id} payload {s.payload.shape} != {self.payload_dims}"
                )
        object.__setattr__(self, "by_id", {s.sample_id: s for s in self.samples})

    @property
    def mode(self) -> str:
        return "vector" if len(self.payload_dims) == 1 else "image"

    @property
    def identities(self) -> list[int]:
        return sorted({s.identity_id for s in self.samples})

    def restrict(self, identity_ids, name_suffix: str) -> "Dataset":
        keep = set(identity_ids)
        return Dataset(
            name=f"{self.name}{name_suffix}",
            payload_dims=self.payload_dims,
            samples=tuple(s for s in self.samples if s.identity_id in keep),
        )


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Deterministic dataset from the config; see module docstring."""
    rng = np.random.default_rng(cfg.seed)
    payload_size = int(np.prod(cfg.payload_dims))
    latents = rng.normal(size=(cfg.identities, cfg.latent_dim))

    transforms = []
    for cam in (0, 1):
        cam_rng = np.random.default_rng(cfg.camera_seeds[cam])
        a = cam_rng.normal(size=(payload_size, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
        offset = cam_rng.normal(size=payload_size) * 0.5
        transforms.append((a, offset))

    ids, cams, payloads = [], [], []
    for identity in range(cfg.identities):
        for cam in (0, 1):
            a, offset = transforms[cam]
            clean = a @ latents[identity] + offset
            for _ in range(cfg.samples_per_identity_per_camera):
                noise = rng.normal(size=payload_size)
                ids.append(identity)
                cams.append(cam)
                payloads.append(clean + cfg.noise_sigma * noise)

    total = len(payloads)
    n_outliers = int(cfg.outlier_fraction * total)
    outlier_ids = set()
    if n_outliers:
        chosen = rng.choice(total, size=n_outliers, replace=False)
        for idx in sorted(int(i) for i in chosen):
            other = int(rng.integers(cfg.identities - 1))
            if other >= ids[idx]:
                other += 1  # guarantee a different identity
            a, offset = transforms[cams[idx]]
            noise = rng.normal(size=payload_size)
            payloads[idx] = a @ latents[other] + offset + 5.0 * cfg.noise_sigma * noise
            outlier_ids.add(idx)

    samples = tuple(
        Sample(
            sample_id=i,
            identity_id=ids[i],
            camera_id=cams[i],
            payload=payloads[i].reshape(cfg.payload_dims),
            is_outlier=i in outlier_ids,
        )
        for i in range(total)
    )
    return Dataset(name="synthetic", payload_dims=tuple(cfg.payload_dims), samples=samples)


def split_zero_shot(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint-identity split; every sample lands on exactly one side."""
    identities = dataset.identities
    n_train = int(round(train_fraction * len(identities)))
    if n_train < 2 or len(identities) - n_train < 2:
        raise ConfigError(
            f"split needs >= 2 identities per side: {n_train} train / "
            f"{len(identities) - n_train} test"
        )
    perm = np.random.default_rng(seed).permutation(len(identities))
    train_ids = {identities[i] for i in perm[:n_train]}
    test_ids = set(identities) - train_ids
    return dataset.restrict(train_ids, "-train"), dataset.restrict(test_ids, "-test")


@dataclass(frozen=True)
class TripletBatch:
    """Parallel arrays of (anchor, positive, negative) sample ids + weights."""

    anchor_ids: np.ndarray
    positive_ids: np.ndarray
    negative_ids: np.ndarray
    u: np.ndarray

    def __len__(self) -> int:
        return int(self.anchor_ids.size)


def sample_triplets(
    train: Dataset,
    anchors_per_batch: int,
    triplets_per_anchor: int,
    seed: int,
    batch_index: int,
) -> TripletBatch:
    """Uniform triplet batch, deterministic for a given (seed, batch_index).

    Anchors are drawn without replacement; an anchor whose identity has no
    second sample is skipped and resampled. Positives come uniformly from
    the anchor's other same-identity samples, negatives uniformly from all
    other-identity samples.
    """
    if anchors_per_batch < 1 or triplets_per_anchor < 1:
        raise ConfigError("anchors_per_batch and triplets_per_anchor must be >= 1")
    rng = np.random.default_rng((seed, batch_index))
    samples = train.samples
    by_identity: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_identity.setdefault(s.identity_id, []).append(i)
    if len(by_identity) < 2:
        raise ConfigError("triplet sampling needs >= 2 identities")

    eligible = rng.permutation(len(samples))
    anchors = []
    for idx in eligible:
        if len(by_identity[samples[idx].identity_id]) >= 2:
            anchors.append(int(idx))
            if len(anchors) == anchors_per_batch:
                break
    if len(anchors) < anchors_per_batch:
        raise ConfigError(
            f"only {len(anchors)} usable anchors available, need {anchors_per_batch}"
        )

    a_out, p_out, n_out = [], [], []
    all_idx = np.arange(len(samples))
    for a_idx in anchors:
        identity = samples[a_idx].identity_id
        pos_pool = np.array([i for i in by_identity[identity] if i != a_idx])
        neg_pool = all_idx[np.array([s.identity_id != identity for s in samples])]
        pos = rng.choice(pos_pool, size=triplets_per_anchor, replace=True)
        neg = rng.choice(neg_pool, size=triplets_per_anchor, replace=True)
        a_out.extend([a_idx] * triplets_per_anchor)
        p_out.extend(int(i) for i in pos)
        n_out.extend(int(i) for i in neg)

    to_id = np.array([s.sample_id for s in samples], dtype=np.int64)
    return TripletBatch(
        anchor_ids=to_id[a_out],
        positive_ids=to_id[p_out],
        negative_ids=to_id[n_out],
        u=np.ones(len(a_out), dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write manifest.json plus a pooled DSPT tensor file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(dataset.samples, key=lambda s: s.sample_id)
    manifest = {
        "name": dataset.name,
        "mode": dataset.mode,
        "payload_dims": list(dataset.payload_dims),
        "samples": [
            {
                "sample_id": s.sample_id,
                "identity_id": s.identity_id,
                "camera_id": s.camera_id,
                "is_outlier": s.is_outlier,
                "file": TENSORS_FILE,
            }
            for s in ordered
        ],
    }
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_dspt(out / TENSORS_FILE, [(f"sample_{s.sample_id}", s.payload) for s in ordered])


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Vector-mode alternative: one CSV row per sample, repr'd float64."""
    if dataset.mode != "vector":
        raise ConfigError("CSV datasets support vector payloads only")
    dim = dataset.payload_dims[0]
    header = ["sample_id", "identity_id", "camera_id", "is_outlier"] + [f"x{i}" for i in range(dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in sorted(dataset.samples, key=lambda x: x.sample_id):
            row = [s.sample_id, s.identity_id, s.camera_id, int(s.is_outlier)]
            row += [repr(float(v)) for v in s.payload]
            writer.writerow(row)


def load_dataset_csv(path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        fixed = ["sample_id", "identity_id", "camera_id", "is_outlier"]
        if header[: len(fixed)] != fixed:
            raise ContractError(f"{path}: unexpected CSV header {header[:4]}")
        dim = len(header) - len(fixed)
        if [f"x{i}" for i in range(dim)] != header[len(fixed) :]:
            raise ContractError(f"{path}: malformed payload columns")
        samples = []
        for row in reader:
            payload = np.array([float(v) for v in row[len(fixed) :]], dtype=np.float64)
            samples.append(
                Sample(
                    sample_id=int(row[0]),
                    identity_id=int(row[1]),
                    camera_id=int(row[2]),
                    payload=payload,
                    is_outlier=bool(int(row[3])),
                )
            )
    return Dataset(name=Path(path).stem, payload_dims=(dim,), samples=tuple(samples))


def load_dataset(path) -> Dataset:
    """Load either a manifest directory or a vector-mode CSV file."""
    root = Path(path)
    if root.is_file() and root.suffix == ".csv":
        return load_dataset_csv(root)
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.exists():
        raise ConfigError(f"{path}: neither a manifest directory nor a CSV dataset")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    payload_dims = tuple(manifest["payload_dims"])
    pools: dict[str, dict[str, np.ndarray]] = {}
    samples = []
    for entry in manifest["samples"]:
        fname = entry["file"]
        if fname not in pools:
            pools[fname] = read_dspt(root / fname)
        payload = pools[fname][f"sample_{entry['sample_id']}"]
        samples.append(
            Sample(
                sample_id=int(entry["sample_id"]),
                identity_id=int(entry["identity_id"]),
                camera_id=int(entry["camera_id"]),
                payload=payload.reshape(payload_dims),
                is_outlier=bool(entry["is_outlier"]),
            )
        )
    return Dataset(name=manifest["name"], payload_dims=payload_dims, samples=tuple(samples))
