"""Synthetic datasets, manifests, and clip-to-example featurization."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyClipError, ParameterError, UnsupportedInput
from .pointcloud import PointCloud, ScaleConfig, frame_to_cloud, gate_silence, spectrogram_to_cloud
from .signal import AudioClip, MagnitudeSpectrogram, make_spectral_noise, read_wav, stft, trim_silence, write_wav

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# Synthetic task definition
# ---------------------------------------------------------------------------


@dataclass
class ToySpec:
    """Band-noise classes: class ``c`` is noise in ``bands[c]``.

    ``common_bands`` (same for every class, amplitude ``common_gain``) can be
    mixed under the class band (amplitude ``class_gain``) so that the loudest
    points carry no class information.

    ``background_cutoff`` and ``background_db`` ([lo, hi] ranges) add a quiet
    noise floor from 0 Hz up to a per-clip random cutoff at a per-clip random
    level, so that recordings differ in effective bandwidth.
    """

    bands: list
    clips_per_class: int = 100
    duration: float = 0.5
    sample_rate: int = 16000
    seed: int = 0
    exclusive: bool = True
    common_bands: list = field(default_factory=list)
    common_gain: float = 1.0
    class_gain: float = 1.0
    background_cutoff: Optional[list] = None
    background_db: list = field(default_factory=lambda: [-50.0, -30.0])

    def __post_init__(self):
        self.bands = [[float(lo), float(hi)] for lo, hi in self.bands]
        self.common_bands = [[float(lo), float(hi)] for lo, hi in self.common_bands]
        if len(self.bands) < 2:
            raise ParameterError("need at least two classes")
        if self.clips_per_class < 2:
            raise ParameterError("need at least two clips per class for a train/test split")
        if self.exclusive:
            ordered = sorted(self.bands)
            for (lo0, hi0), (lo1, hi1) in zip(ordered, ordered[1:]):
                if lo1 <= hi0:
                    raise ParameterError(f"class bands [{lo0}, {hi0}] and [{lo1}, {hi1}] overlap")

    @property
    def n_classes(self) -> int:
        return len(self.bands)


def synth_clip(spec: ToySpec, label: int, index: int) -> AudioClip:
    bands = [spec.bands[label], *spec.common_bands]
    gains = [spec.class_gain] + [spec.common_gain] * len(spec.common_bands)
    if spec.background_cutoff is not None:
        rng = np.random.default_rng([spec.seed, label, index, 1])
        bands.append([0.0, rng.uniform(*spec.background_cutoff)])
        gains.append(10.0 ** (rng.uniform(*spec.background_db) / 20.0))
    clip = make_spectral_noise(bands, spec.sample_rate, spec.duration, seed=[spec.seed, label, index], gains=gains)
    clip.label = label
    return clip


def synth_dataset(spec: ToySpec, split_seed: Optional[int] = None, train_fraction: float = 0.8):
    """Returns ``(train_clips, test_clips)`` with a stratified split."""
    clips = [synth_clip(spec, c, i) for c in range(spec.n_classes) for i in range(spec.clips_per_class)]
    labels = np.array([c.label for c in clips])
    split = stratified_split(labels, spec.seed if split_seed is None else split_seed, train_fraction)
    return [c for c, s in zip(clips, split) if s == "train"], [c for c, s in zip(clips, split) if s == "test"]


def stratified_split(labels: Sequence[int], seed: int, train_fraction: float = 0.8) -> list[str]:
    """Per-class seeded shuffle; the first ``round(train_fraction * n_c)`` go to train."""
    labels = np.asarray(labels)
    out = ["test"] * len(labels)
    rng = np.random.default_rng(seed)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(np.floor(train_fraction * idx.size + 0.5))
        n_train = min(max(n_train, 1), idx.size - 1) if idx.size > 1 else idx.size
        for i in idx[:n_train]:
            out[i] = "train"
    return out


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------


@dataclass
class FeatureConfig:
    mode: str = "frame"  # "frame": one example per frame; "spectrogram": 10-frame segments
    n_fft: int = 2048
    hop: Optional[int] = None  # default n_fft (frame) or n_fft // 2 (spectrogram)
    frames: int = 10
    window: str = "hann"
    magnitude: str = "db"
    floor_db: float = -80.0
    db_norm: float = 80.0
    max_examples_per_clip: Optional[int] = None
    silence_gate_db: Optional[float] = None  # drop bins this far below each example's peak

    def __post_init__(self):
        if self.mode not in ("frame", "spectrogram"):
            raise ParameterError(f"unknown feature mode {self.mode!r}")
        if self.silence_gate_db is not None and self.silence_gate_db >= 0:
            raise ParameterError(f"silence_gate_db must be negative, got {self.silence_gate_db}")

    @property
    def effective_hop(self) -> int:
        if self.hop:
            return self.hop
        return self.n_fft if self.mode == "frame" else self.n_fft // 2

    @property
    def scale(self) -> ScaleConfig:
        return ScaleConfig(magnitude=self.magnitude, floor_db=self.floor_db, db_norm=self.db_norm)

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        return asdict(self)


FEATURE_PRESETS = {
    # 64 bins, the toy baseline's input size; 4 frames per clip keeps the toy runs short
    "fst-toy": FeatureConfig(mode="frame", n_fft=126, max_examples_per_clip=4),
    "fb-toy": FeatureConfig(mode="frame", n_fft=126, max_examples_per_clip=4),
    "fst": FeatureConfig(mode="frame", n_fft=2048),
    "fb": FeatureConfig(mode="frame", n_fft=2048),
    "tst3": FeatureConfig(mode="spectrogram", n_fft=1024, frames=10),
    "cnn": FeatureConfig(mode="spectrogram", n_fft=1024, frames=10),
}


@dataclass
class FeatureSet:
    """Model-ready examples.

    ``kind`` is ``"cloud"`` (list of PointCloud), ``"vector"`` ([N, F] array)
    or ``"spectrogram"`` ([N, frames, F] array).
    """

    kind: str
    inputs: object
    labels: np.ndarray
    clip_ids: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        if self.kind == "cloud":
            inputs = [self.inputs[i] for i in idx]
        else:
            inputs = self.inputs[idx]
        return FeatureSet(self.kind, inputs, self.labels[idx], self.clip_ids[idx])


def baseline_scale(mag: np.ndarray, scale: ScaleConfig) -> np.ndarray:
    """Fixed-vector features: floored dB shifted so the floor maps to exactly 0.

    Zero then reads as "no energy here", which is what zeroing out dropped
    bins is meant to express.
    """
    if scale.magnitude == "linear":
        return np.asarray(mag, dtype=np.float64)
    return scale.scale_magnitude(mag) - scale.floor_db / scale.db_norm


def _gated(features: np.ndarray, mag: np.ndarray, fc: FeatureConfig) -> np.ndarray:
    """Baseline counterpart of the cloud silence gate: gated bins become 0."""
    if fc.silence_gate_db is None:
        return features
    keep = mag >= mag.max() * 10.0 ** (fc.silence_gate_db / 20.0)
    return np.where(keep, features, 0.0)


def analyze(clip: AudioClip, fc: FeatureConfig, pad_to: Optional[int] = None) -> MagnitudeSpectrogram:
    return stft(clip, fc.n_fft, fc.effective_hop, fc.window, pad_to=pad_to)


def _segments(spec: MagnitudeSpectrogram, fc: FeatureConfig) -> list[slice]:
    if fc.mode == "frame":
        n = spec.frames.shape[0]
        out = [slice(i, i + 1) for i in range(n)]
    else:
        n = spec.frames.shape[0] // fc.frames
        out = [slice(i * fc.frames, (i + 1) * fc.frames) for i in range(n)]
    if fc.max_examples_per_clip is not None:
        out = out[: fc.max_examples_per_clip]
    return out


def featurize(
    clips: Sequence[AudioClip],
    fc: FeatureConfig,
    kind: str,
    pad_to: Optional[int] = None,
) -> FeatureSet:
    """Turn labeled clips into examples for a model taking ``kind`` inputs.

    ``pad_to`` (fixed-input baselines only) zero-pads shorter analysis windows
    up to the model's DFT size.
    """
    if kind not in ("cloud", "vector", "spectrogram"):
        raise ParameterError(f"unknown input kind {kind!r}")
    if kind == "cloud" and pad_to is not None:
        raise ParameterError("point clouds never need window padding")
    scale = fc.scale
    inputs, labels, clip_ids = [], [], []
    for ci, clip in enumerate(clips):
        spec = analyze(clip, fc, pad_to)
        segs = _segments(spec, fc)
        if not segs:
            raise ParameterError(
                f"clip {ci} ({clip.duration:.3f} s) too short for one {fc.mode} example at n_fft={fc.n_fft}"
            )
        for seg in segs:
            if kind == "cloud":
                if fc.mode == "frame":
                    cloud = frame_to_cloud(spec.frames[seg][0], spec.sample_rate, spec.n_fft, scale, clip.label)
                else:
                    cloud = spectrogram_to_cloud(spec, scale, clip.label, frames=seg)
                if fc.silence_gate_db is not None:
                    cloud = gate_silence(cloud, fc.silence_gate_db, scale)
                inputs.append(cloud)
            elif kind == "vector":
                if fc.mode != "frame":
                    raise ParameterError("vector inputs need frame-mode features")
                inputs.append(_gated(baseline_scale(spec.frames[seg][0], scale), spec.frames[seg][0], fc))
            else:
                if fc.mode != "spectrogram":
                    raise ParameterError("spectrogram inputs need spectrogram-mode features")
                inputs.append(_gated(baseline_scale(spec.frames[seg], scale), spec.frames[seg], fc))
            labels.append(-1 if clip.label is None else clip.label)
            clip_ids.append(ci)
    if kind != "cloud":
        inputs = np.stack(inputs)
    return FeatureSet(kind, inputs, np.array(labels, dtype=np.int64), np.array(clip_ids, dtype=np.int64))


def featurize_for(model, clips, fc: FeatureConfig, train_n_fft: Optional[int] = None) -> FeatureSet:
    """Featurize for ``model``, padding shorter windows for fixed-input baselines.

    Raises :class:`UnsupportedInput` when a baseline would need a window
    longer than the one it was trained on.
    """
    kind = model.input_kind
    if kind == "cloud":
        return featurize(clips, fc, kind)
    train_n = train_n_fft or fc.n_fft
    if fc.n_fft > train_n:
        raise UnsupportedInput(f"window {fc.n_fft} exceeds the baseline's training window {train_n}")
    pad_to = train_n if fc.n_fft < train_n else None
    if pad_to is not None and fc.hop is None:
        fc = replace(fc, hop=fc.effective_hop)
    return featurize(clips, fc, kind, pad_to=pad_to)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: str
    entries: list  # dicts: path (relative to root), label, split
    classes: list
    sample_rate: Optional[int] = None
    split_seed: int = 0
    skipped: list = field(default_factory=list)
    source: dict = field(default_factory=dict)
    schema_version: int = MANIFEST_VERSION

    def __post_init__(self):
        splits = {(e["label"], e["split"]) for e in self.entries}
        for c in range(len(self.classes)):
            for s in ("train", "test"):
                if (c, s) not in splits:
                    raise ParameterError(f"class {c} ({self.classes[c]}) has no {s} clips")

    def clips(self, split: str) -> list[AudioClip]:
        root = Path(self.root)
        return [read_wav(root / e["path"], label=e["label"]) for e in self.entries if e["split"] == split]

    def counts(self) -> dict:
        out = {"train": 0, "test": 0}
        for e in self.entries:
            out[e["split"]] += 1
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        if d.get("schema_version") != MANIFEST_VERSION:
            raise ParameterError(f"manifest schema {d.get('schema_version')} unsupported (expected {MANIFEST_VERSION})")
        if not Path(d["root"]).is_absolute():
            d["root"] = str((path.parent / d["root"]).resolve())
        return cls(**d)


def write_toy_dataset(spec: ToySpec, out_dir, train_fraction: float = 0.8) -> DatasetManifest:
    """Synthesize every clip to ``out_dir/wav`` and write ``manifest.json``."""
    out_dir = Path(out_dir)
    entries = []
    clips = []
    for c in range(spec.n_classes):
        (out_dir / "wav" / f"class{c}").mkdir(parents=True, exist_ok=True)
        for i in range(spec.clips_per_class):
            clip = synth_clip(spec, c, i)
            rel = f"wav/class{c}/clip{i:04d}.wav"
            write_wav(out_dir / rel, clip)
            clips.append(clip)
            entries.append({"path": rel, "label": c})
    split = stratified_split([e["label"] for e in entries], spec.seed, train_fraction)
    for e, s in zip(entries, split):
        e["split"] = s
    manifest = DatasetManifest(
        root=".",
        entries=entries,
        classes=[f"band{int(lo)}-{int(hi)}" for lo, hi in spec.bands],
        sample_rate=spec.sample_rate,
        split_seed=spec.seed,
        source={"toy": asdict(spec)},
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def ingest_directory(root, out_dir, split_seed: int = 0, threshold_db: float = -60.0,
                     train_fraction: float = 0.8) -> DatasetManifest:
    """One subdirectory per class of WAV files -> trimmed copies plus a manifest.

    Unreadable files are listed under ``skipped`` and the run continues;
    clips that are silent after trimming are skipped the same way.
    """
    root, out_dir = Path(root), Path(out_dir)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    entries, skipped, classes = [], [], []
    for class_dir in class_dirs:
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() == ".wav")
        kept = []
        for f in files:
            try:
                clip = read_wav(f)
            except Exception as exc:  # noqa: BLE001 - any unreadable file is reported, not fatal
                skipped.append({"path": str(f), "reason": f"unreadable: {exc}"})
                continue
            try:
                clip = trim_silence(clip, threshold_db)
            except EmptyClipError:
                skipped.append({"path": str(f), "reason": "silent"})
                continue
            kept.append((f, clip))
        if not kept:
            continue
        label = len(classes)
        classes.append(class_dir.name)
        (out_dir / "wav" / class_dir.name).mkdir(parents=True, exist_ok=True)
        for f, clip in kept:
            rel = f"wav/{class_dir.name}/{f.stem}.wav"
            write_wav(out_dir / rel, clip)
            entries.append({"path": rel, "label": label})
    if not classes:
        raise ParameterError(f"no usable classes under {root}")
    split = stratified_split([e["label"] for e in entries], split_seed, train_fraction)
    for e, s in zip(entries, split):
        e["split"] = s
    if skipped:
        logger.warning("skipped %d file(s) during ingest", len(skipped))
    manifest = DatasetManifest(root=".", entries=entries, classes=classes, split_seed=split_seed,
                               skipped=skipped, source={"ingest": str(root), "threshold_db": threshold_db})
    manifest.save(out_dir / "manifest.json")
    return manifest
