"""Spectra as point clouds, subsampling strategies, and padded batching.

A cloud stores one row per point: ``(f, m)`` for a single frame or
``(t, f, m)`` for a spectrogram.  Coordinates are scaled by fixed global
constants only (kHz, seconds, normalized dB).  Scaling by anything that
depends on the input, such as its Nyquist frequency, would bring back the
sample-rate dependence the representation is meant to remove.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCloudError, ParameterError, ShapeError
from .signal import MagnitudeSpectrogram


@dataclass(frozen=True)
class ScaleConfig:
    magnitude: str = "db"  # "db" or "linear"
    floor_db: float = -80.0
    db_norm: float = 80.0
    freq_unit: float = 1000.0  # Hz per coordinate unit
    eps: float = 1e-8

    def scale_magnitude(self, mag: np.ndarray) -> np.ndarray:
        if self.magnitude == "linear":
            return np.asarray(mag, dtype=np.float64)
        if self.magnitude != "db":
            raise ParameterError(f"unknown magnitude scale {self.magnitude!r}")
        db = 20.0 * np.log10(np.asarray(mag, dtype=np.float64) + self.eps)
        return np.maximum(db, self.floor_db) / self.db_norm


@dataclass
class PointCloud:
    """Unordered set of points; row order carries no meaning."""

    points: np.ndarray  # [n, 2] (f, m) or [n, 3] (t, f, m)
    label: Optional[int] = None
    meta: dict = field(default_factory=dict)
    # provenance for gradient sampling: magnitude grid [T, F] and each point's (t, f) index
    grid: Optional[np.ndarray] = None
    grid_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise ShapeError(f"points must be [n, 2] or [n, 3], got {self.points.shape}")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def magnitudes(self) -> np.ndarray:
        return self.points[:, -1]

    @property
    def frequencies(self) -> np.ndarray:
        return self.points[:, -2]

    @property
    def times(self) -> Optional[np.ndarray]:
        return self.points[:, 0] if self.dim == 3 else None

    def select(self, idx: np.ndarray) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            self.label,
            dict(self.meta),
            self.grid,
            None if self.grid_index is None else self.grid_index[idx],
        )


@dataclass
class CloudBatch:
    coords: np.ndarray  # [B, n_max, d], zeros at padded slots
    mask: np.ndarray  # [B, n_max] bool, True for real points
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return self.coords.shape[0]


# ---------------------------------------------------------------------------
# Conversion
# ---------------------------------------------------------------------------


def frame_to_cloud(
    frame: np.ndarray,
    sample_rate: int,
    n_fft: int,
    scale: ScaleConfig = ScaleConfig(),
    label: Optional[int] = None,
) -> PointCloud:
    """One (f, m) point per DFT bin; f = i * sample_rate / n_fft, in ``scale.freq_unit``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or frame.size != n_fft // 2 + 1:
        raise ShapeError(f"frame of length {frame.size} does not match n_fft={n_fft} ({n_fft // 2 + 1} bins)")
    f = np.arange(frame.size) * (sample_rate / n_fft) / scale.freq_unit
    m = scale.scale_magnitude(frame)
    meta = {"n_fft": int(n_fft), "sample_rate": int(sample_rate)}
    return PointCloud(np.stack([f, m], axis=1), label, meta)


def spectrogram_to_cloud(
    spec: MagnitudeSpectrogram,
    scale: ScaleConfig = ScaleConfig(),
    label: Optional[int] = None,
    frames: Optional[slice] = None,
) -> PointCloud:
    """(t, f, m) points for every bin of every frame; t is absolute time in seconds."""
    mags = spec.frames if frames is None else spec.frames[frames]
    times = spec.frame_times if frames is None else spec.frame_times[frames]
    n_t, n_f = mags.shape
    if n_t < 1:
        raise ShapeError("spectrogram has no frames")
    if n_f != spec.n_fft // 2 + 1:
        raise ShapeError(f"spectrogram has {n_f} bins, expected {spec.n_fft // 2 + 1}")
    m = scale.scale_magnitude(mags)
    f = np.arange(n_f) * (spec.sample_rate / spec.n_fft) / scale.freq_unit
    tt, ff = np.meshgrid(times, f, indexing="ij")
    pts = np.stack([tt.ravel(), ff.ravel(), m.ravel()], axis=1)
    ti, fi = np.meshgrid(np.arange(n_t), np.arange(n_f), indexing="ij")
    meta = {"n_fft": int(spec.n_fft), "sample_rate": int(spec.sample_rate), "hop": int(spec.hop)}
    return PointCloud(pts, label, meta, grid=m, grid_index=np.stack([ti.ravel(), fi.ravel()], axis=1))


def gate_silence(cloud: PointCloud, gate_db: float, scale: ScaleConfig = ScaleConfig()) -> PointCloud:
    """Drop points more than ``-gate_db`` dB below the cloud's loudest point.

    A silent bin then reads as an absent point, the way a dropped bin is a
    zero for the fixed-input baselines.  Coordinates of the surviving points
    are untouched.
    """
    if gate_db >= 0:
        raise ParameterError(f"gate_db must be negative, got {gate_db}")
    m = cloud.magnitudes
    if scale.magnitude == "linear":
        keep = m >= m.max() * 10.0 ** (gate_db / 20.0)
    else:
        keep = m >= m.max() + gate_db / scale.db_norm
    return cloud if keep.all() else cloud.select(np.flatnonzero(keep))


# ---------------------------------------------------------------------------
# Subsampling
# ---------------------------------------------------------------------------


def keep_count(fraction: float, n: int) -> int:
    """K = max(1, round(fraction * n)), rounding halves up."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    return max(1, min(n, int(np.floor(fraction * n + 0.5))))


def _ranked(cloud: PointCloud, score: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties by ascending frequency then time."""
    keys = [cloud.frequencies, -score]
    if cloud.dim == 3:
        keys.insert(0, cloud.times)
    return np.lexsort(keys)


def subsample_topk(cloud: PointCloud, fraction: float) -> PointCloud:
    """Keep the K points with the largest magnitude."""
    k = keep_count(fraction, len(cloud))
    if k == len(cloud):
        return cloud
    return cloud.select(np.sort(_ranked(cloud, cloud.magnitudes)[:k]))


def subsample_random(cloud: PointCloud, fraction: float, seed) -> PointCloud:
    """Keep K points drawn uniformly without replacement."""
    k = keep_count(fraction, len(cloud))
    if k == len(cloud):
        return cloud
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return cloud.select(np.sort(rng.choice(len(cloud), size=k, replace=False)))


def gradient_scores(grid: np.ndarray) -> np.ndarray:
    """sqrt(dm/dt^2 + dm/df^2) on the index grid; central inside, one-sided at edges."""
    grid = np.asarray(grid, dtype=np.float64)
    dt = np.gradient(grid, axis=0) if grid.shape[0] > 1 else np.zeros_like(grid)
    df = np.gradient(grid, axis=1) if grid.shape[1] > 1 else np.zeros_like(grid)
    return np.sqrt(dt * dt + df * df)


def subsample_gradient(cloud: PointCloud, fraction: float) -> PointCloud:
    """Keep the K points sitting on the steepest spectro-temporal magnitude slopes."""
    if cloud.grid is None or cloud.grid_index is None:
        raise ParameterError("gradient subsampling needs a cloud built from a spectrogram grid")
    k = keep_count(fraction, len(cloud))
    if k == len(cloud):
        return cloud
    scores = gradient_scores(cloud.grid)[cloud.grid_index[:, 0], cloud.grid_index[:, 1]]
    return cloud.select(np.sort(_ranked(cloud, scores)[:k]))


def subsample(cloud: PointCloud, strategy: str, fraction: float, seed=None) -> PointCloud:
    if strategy == "topk":
        return subsample_topk(cloud, fraction)
    if strategy == "random":
        return subsample_random(cloud, fraction, seed)
    if strategy == "gradient":
        return subsample_gradient(cloud, fraction)
    raise ParameterError(f"unknown subsampling strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def batch(clouds: Sequence[PointCloud]) -> CloudBatch:
    """Zero-pad clouds to a common size; the mask marks real points."""
    if not clouds:
        raise EmptyCloudError("cannot batch an empty list of clouds")
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise ShapeError(f"clouds mix point dimensions {sorted(dims)}")
    sizes = [len(c) for c in clouds]
    if min(sizes) == 0:
        raise EmptyCloudError("cannot batch an empty cloud")
    n_max, d = max(sizes), dims.pop()
    coords = np.zeros((len(clouds), n_max, d))
    mask = np.zeros((len(clouds), n_max), dtype=bool)
    for i, c in enumerate(clouds):
        coords[i, : len(c)] = c.points
        mask[i, : len(c)] = True
    labels = None
    if all(c.label is not None for c in clouds):
        labels = np.array([c.label for c in clouds], dtype=np.int64)
    return CloudBatch(coords, mask, labels)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def write_cloud(cloud: PointCloud, path) -> None:
    """CSV with a ``(t,)f,m`` header plus a ``.json`` metadata sidecar."""
    path = Path(path)
    header = ["t", "f", "m"] if cloud.dim == 3 else ["f", "m"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in cloud.points:
            w.writerow([repr(float(v)) for v in row])
    sidecar = {"label": cloud.label, "dim": cloud.dim, "n_points": len(cloud), **cloud.meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_cloud(path) -> PointCloud:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header not in (["f", "m"], ["t", "f", "m"]):
        raise ShapeError(f"unexpected cloud CSV header {header}")
    pts = np.array(rows[1:], dtype=np.float64).reshape(-1, len(header))
    meta = {}
    label = None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        label = meta.pop("label", None)
        meta.pop("dim", None)
        meta.pop("n_points", None)
    return PointCloud(pts, label, meta)
