"""Motion samples, dataset manifests, preprocessing and the synthetic corpus.

A motion is a plain ``float64`` array of shape ``(H, 3J)``; column ``3j + d``
holds coordinate ``d`` (x, y, z) of joint ``j``. Sample files are raw
little-endian float32 in row-major order, one file per sample, indexed by a
JSON manifest::

    {"categories": [...], "frame_length": 60, "joints": 24,
     "samples": [{"id": ..., "category": ..., "split": ..., "file": ...}]}

``split`` is ``train`` or ``test`` for seen categories and ``unseen-test`` for
categories held out of encoder training.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ManifestError

SPLITS = ("train", "test", "unseen-test")
FILE_DTYPE = np.dtype("<f4")


def check_motion(motion, joints: int | None = None, frames: int | None = None) -> np.ndarray:
    """Validate and return ``motion`` as a 2-D float64 array."""
    x = np.asarray(motion, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 3 or x.shape[1] % 3:
        raise ContractError(f"motion must have shape (H, 3J) with H, J >= 1, got {x.shape}")
    if joints is not None and x.shape[1] != 3 * joints:
        raise ContractError(f"expected {joints} joints ({3 * joints} columns), got {x.shape[1]}")
    if frames is not None and x.shape[0] != frames:
        raise ContractError(f"expected {frames} frames, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ContractError("motion contains non-finite values")
    return x


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class LabeledMotion:
    motion: np.ndarray
    category: str
    sample_id: str

    @property
    def joint_count(self) -> int:
        return self.motion.shape[1] // 3

    @property
    def frame_count(self) -> int:
        return self.motion.shape[0]


@dataclass(frozen=True)
class SupportSet:
    members: tuple
    category: str
    member_ids: tuple = ()

    def __post_init__(self):
        if len(self.members) < 1:
            raise ContractError("support set must contain at least one motion")
        lengths = {m.shape[0] for m in self.members}
        if len(lengths) != 1:
            raise ContractError(f"support members differ in frame length: {sorted(lengths)}")

    def __len__(self):
        return len(self.members)


def preprocess(motion, target_len: int, center_root: bool = True) -> np.ndarray:
    """Bring ``motion`` to ``target_len`` frames.

    Longer clips keep their first ``target_len`` frames; shorter ones repeat
    the final frame. With ``center_root`` the position of joint 0 in the first
    frame is subtracted from every joint of every frame.
    """
    if target_len < 1:
        raise ContractError(f"target_len must be positive, got {target_len}")
    x = check_motion(motion)
    h = x.shape[0]
    if h >= target_len:
        out = x[:target_len].copy()
    else:
        out = np.concatenate([x, np.repeat(x[-1:], target_len - h, axis=0)], axis=0)
    if center_root:
        out -= np.tile(out[0, :3], out.shape[1] // 3)
    return out


# --------------------------------------------------------------------------
# raw sample files


def write_motion_file(path, motion) -> None:
    x = check_motion(motion)
    Path(path).write_bytes(np.ascontiguousarray(x, dtype=FILE_DTYPE).tobytes())


def read_motion_file(path, joints: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sample file not found: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype=FILE_DTYPE)
    width = 3 * joints
    if raw.size == 0 or raw.size % width:
        raise ManifestError(
            f"{path}: {raw.size} values is not a positive multiple of 3*joints={width}"
        )
    return raw.reshape(-1, width).astype(np.float64)


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class SampleEntry:
    sample_id: str
    category: str
    split: str
    path: Path


@dataclass(frozen=True)
class DatasetManifest:
    categories: tuple
    samples: tuple
    frame_length: int
    joints: int
    center_root: bool = True
    source: Path | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        known = set(self.categories)
        if len(known) != len(self.categories):
            raise ManifestError("duplicate category identifiers")
        seen_ids = set()
        for s in self.samples:
            if s.category not in known:
                raise ManifestError(f"sample {s.sample_id!r}: unknown category {s.category!r}")
            if s.split not in SPLITS:
                raise ManifestError(f"sample {s.sample_id!r}: split must be one of {SPLITS}")
            if s.sample_id in seen_ids:
                raise ManifestError(f"duplicate sample id {s.sample_id!r}")
            seen_ids.add(s.sample_id)
        for c in self.categories:
            splits = {s.split for s in self.samples if s.category == c}
            if "unseen-test" in splits and splits != {"unseen-test"}:
                raise ManifestError(
                    f"category {c!r} mixes unseen-test samples with {sorted(splits - {'unseen-test'})}"
                )

    @property
    def unseen_categories(self) -> list:
        tagged = {s.category for s in self.samples if s.split == "unseen-test"}
        return [c for c in self.categories if c in tagged]

    @property
    def train_categories(self) -> list:
        unseen = set(self.unseen_categories)
        return [c for c in self.categories if c not in unseen]

    def entries(self, category: str | None = None, splits=None) -> list:
        return [
            s for s in self.samples
            if (category is None or s.category == category) and (splits is None or s.split in splits)
        ]

    def train_pool(self, category: str) -> list:
        return self.entries(category, ("train",))

    def test_pool(self, category: str) -> list:
        return self.entries(category, ("test", "unseen-test"))

    def load(self, entry: SampleEntry) -> LabeledMotion:
        hit = self._cache.get(entry.sample_id)
        if hit is None:
            raw = read_motion_file(entry.path, self.joints)
            x = preprocess(raw, self.frame_length, center_root=self.center_root)
            hit = LabeledMotion(_frozen(x), entry.category, entry.sample_id)
            self._cache[entry.sample_id] = hit
        return hit

    def load_all(self, entries) -> list:
        return [self.load(e) for e in entries]


def _field(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ManifestError(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def load_manifest(path, center_root: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    categories = _field(doc, "categories", list, str(path))
    frame_length = _field(doc, "frame_length", int, str(path))
    joints = _field(doc, "joints", int, str(path))
    raw_samples = _field(doc, "samples", list, str(path))
    if frame_length < 1 or joints < 1:
        raise ManifestError(f"{path}: frame_length and joints must be positive")
    if not raw_samples:
        raise ManifestError("manifest contains no samples")
    samples = []
    for i, s in enumerate(raw_samples):
        where = f"{path}: samples[{i}]"
        if not isinstance(s, dict):
            raise ManifestError(f"{where}: must be an object")
        file = path.parent / _field(s, "file", str, where)
        if not file.is_file():
            raise FileNotFoundError(f"{where}: data file not found: {file}")
        samples.append(SampleEntry(
            sample_id=_field(s, "id", str, where),
            category=_field(s, "category", str, where),
            split=_field(s, "split", str, where),
            path=file,
        ))
    return DatasetManifest(
        categories=tuple(str(c) for c in categories),
        samples=tuple(samples),
        frame_length=frame_length,
        joints=joints,
        center_root=center_root,
        source=path,
    )


def write_dataset(
    corpus,
    out_dir,
    unseen=(),
    test_fraction: float = 0.5,
    frame_length: int | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Write ``corpus`` as sample files plus ``manifest.json`` under ``out_dir``.

    Samples of ``unseen`` categories are all tagged ``unseen-test``; the others
    are split per category into train/test with a seeded shuffle.
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    categories = list(dict.fromkeys(m.category for m in corpus))
    unknown = set(unseen) - set(categories)
    if unknown:
        raise ConfigError(f"unseen categories not in corpus: {sorted(unknown)}")
    joints = corpus[0].joint_count
    if frame_length is None:
        frame_length = corpus[0].frame_count
    rng = np.random.default_rng(seed)
    split_of = {}
    for c in categories:
        ids = [m.sample_id for m in corpus if m.category == c]
        if c in unseen:
            split_of.update({i: "unseen-test" for i in ids})
            continue
        order = rng.permutation(len(ids))
        n_test = int(round(test_fraction * len(ids)))
        for rank, k in enumerate(order):
            split_of[ids[k]] = "test" if rank < n_test else "train"
    records = []
    for m in corpus:
        rel = f"samples/{m.sample_id}.bin"
        write_motion_file(out_dir / rel, m.motion)
        records.append({"id": m.sample_id, "category": m.category,
                        "split": split_of[m.sample_id], "file": rel})
    doc = {"categories": categories, "frame_length": frame_length,
           "joints": joints, "samples": records}
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=1))
    return load_manifest(out_dir / "manifest.json")


# --------------------------------------------------------------------------
# synthetic corpus


def rest_pose(joints: int) -> np.ndarray:
    """Deterministic (J, 3) stick-figure rest pose, joint 0 at the origin."""
    j = np.arange(joints)
    pose = np.stack([
        0.15 * np.sin(1.3 * j),
        0.9 * j / max(joints - 1, 1),
        0.1 * np.cos(0.7 * j),
    ], axis=1)
    return pose - pose[0]


def _per_joint(value, joints: int, width: int | None, name: str, cat: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    shape = (joints,) if width is None else (joints, width)
    try:
        return np.broadcast_to(arr, shape).copy()
    except ValueError:
        raise ConfigError(f"category {cat!r}: {name} has shape {arr.shape}, expected broadcastable to {shape}") from None


def generate_synthetic_corpus(spec: dict, seed: int) -> list:
    """Sinusoidal per-joint motion families, one family per category.

    ``spec`` keys: ``joints``, ``frames``, ``fps`` and a ``categories`` list
    whose entries hold ``name``, ``samples``, ``frequency`` (Hz, per joint),
    ``amplitude`` and ``phase`` (per joint and axis), ``noise``,
    ``amplitude_jitter`` and ``phase_jitter``, and optionally ``speed_jitter``,
    ``joint_jitter`` and ``drift``. Per sample, all joints share a relative
    amplitude scale ``exp(amplitude_jitter * N)``, a tempo factor
    ``exp(speed_jitter * N)`` on every frequency and an additive phase shift
    ``phase_jitter * N``; ``joint_jitter`` scales each joint axis independently
    by ``exp(joint_jitter * N)``. ``drift`` ramps each joint axis's amplitude
    towards ``exp(drift * N)`` over the second half of the clip only, so the
    first half says nothing about how the motion ends.
    """
    cats = spec.get("categories", [])
    if len(cats) < 2:
        raise ConfigError(f"synthetic corpus needs at least 2 categories, got {len(cats)}")
    joints = int(spec.get("joints", 24))
    frames = int(spec.get("frames", 60))
    fps = float(spec.get("fps", 30.0))
    if joints < 1 or frames < 1 or fps <= 0:
        raise ConfigError("joints, frames and fps must be positive")
    names = [c.get("name") for c in cats]
    if len(set(names)) != len(names) or None in names:
        raise ConfigError("category names must be present and unique")

    rest = rest_pose(joints)
    t = np.arange(frames)[:, None, None] / fps
    ramp = np.clip(2.0 * np.arange(frames) / max(frames - 1, 1) - 1.0, 0.0, None)[:, None, None]
    ss = np.random.SeedSequence(seed)
    corpus = []
    for cat, child in zip(cats, ss.spawn(len(cats))):
        name = str(cat["name"])
        freq = _per_joint(cat.get("frequency", 1.0), joints, None, "frequency", name)
        amp = _per_joint(cat.get("amplitude", 0.1), joints, 3, "amplitude", name)
        phase = _per_joint(cat.get("phase", 0.0), joints, 3, "phase", name)
        noise = float(cat.get("noise", 0.0))
        amp_jit = float(cat.get("amplitude_jitter", 0.0))
        phase_jit = float(cat.get("phase_jitter", 0.0))
        speed_jit = float(cat.get("speed_jitter", 0.0))
        joint_jit = float(cat.get("joint_jitter", 0.0))
        drift = float(cat.get("drift", 0.0))
        if min(noise, amp_jit, phase_jit, speed_jit, joint_jit, drift) < 0:
            raise ConfigError(f"category {name!r}: noise and jitters must be non-negative")
        rng = np.random.default_rng(child)
        for k in range(int(cat.get("samples", 20))):
            scale = np.exp(amp_jit * rng.standard_normal())
            shift = phase_jit * rng.standard_normal()
            tempo = np.exp(speed_jit * rng.standard_normal()) if speed_jit else 1.0
            style = np.exp(joint_jit * rng.standard_normal((joints, 3))) if joint_jit else 1.0
            if drift:
                style = style * np.exp(drift * rng.standard_normal((joints, 3))[None] * ramp)
            wave = np.sin(2 * np.pi * tempo * freq[None, :, None] * t + phase[None] + shift)
            x = rest[None] + scale * amp[None] * style * wave
            x = x + noise * rng.standard_normal(x.shape)
            corpus.append(LabeledMotion(_frozen(x.reshape(frames, 3 * joints)), name, f"{name}_{k:04d}"))
    return corpus


def default_synthetic_spec(
    n_categories: int = 4,
    per_category: int = 20,
    joints: int = 24,
    frames: int = 60,
    seed: int = 0,
    noise: float = 0.01,
    amplitude_jitter: float = 0.15,
    phase_jitter: float = 0.4,
    active_fraction: float = 0.35,
    speed_jitter: float = 0.0,
    joint_jitter: float = 0.0,
    drift: float = 0.0,
) -> dict:
    """A corpus spec with randomly drawn category families.

    Each category moves a random subset of joints (``active_fraction`` of the
    skeleton on average) at its own dominant frequency.
    """
    if n_categories < 2:
        raise ConfigError(f"synthetic corpus needs at least 2 categories, got {n_categories}")
    rng = np.random.default_rng(seed)
    cats = []
    freqs = np.linspace(0.6, 2.4, n_categories)[rng.permutation(n_categories)]
    for c in range(n_categories):
        active = rng.random(joints) < active_fraction
        active[rng.integers(joints)] = True
        amp = np.where(active[:, None], rng.uniform(0.08, 0.25, (joints, 3)), 0.01)
        freq = freqs[c] * rng.uniform(0.9, 1.1, joints)
        cats.append({
            "name": f"action{c}",
            "samples": per_category,
            "frequency": freq.round(4).tolist(),
            "amplitude": amp.round(4).tolist(),
            "phase": rng.uniform(0, 2 * np.pi, (joints, 3)).round(4).tolist(),
            "noise": noise,
            "amplitude_jitter": amplitude_jitter,
            "phase_jitter": phase_jitter,
            "speed_jitter": speed_jitter,
            "joint_jitter": joint_jitter,
            "drift": drift,
        })
    return {"joints": joints, "frames": frames, "fps": 30.0, "categories": cats}


def sample_support_set(manifest: DatasetManifest, category: str, n_s: int, seed: int) -> SupportSet:
    """Draw ``n_s`` distinct members from the category's test pool."""
    if n_s < 1:
        raise ContractError(f"n_s must be positive, got {n_s}")
    pool = manifest.test_pool(category)
    if n_s > len(pool):
        raise ContractError(
            f"category {category!r}: support size {n_s} exceeds test pool of {len(pool)}"
        )
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(pool), size=n_s, replace=False))
    chosen = manifest.load_all(pool[i] for i in picks)
    return SupportSet(
        members=tuple(m.motion for m in chosen),
        category=category,
        member_ids=tuple(m.sample_id for m in chosen),
    )


def scored_pool(manifest: DatasetManifest, support: SupportSet) -> list:
    """All test-split samples except the support members."""
    skip = set(support.member_ids)
    return [e for e in manifest.entries(splits=("test", "unseen-test")) if e.sample_id not in skip]
