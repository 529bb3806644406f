"""Synthetic labeled datasets: procedural shapes, parametric distortions and
pseudo-MOS labels.

The pseudo-MOS is a constructed monotone label (10 at the pristine level,
falling with distortion strength), not a model of human opinion; every
magnitude constant here is invented.  The manifest schema also accepts real
data if the user supplies PLY files and MOS values.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clouds import ColoredPointCloud, write_ply

SHAPE_KINDS = ("sphere", "torus", "cube-surface", "gaussian-blob")
DISTORTION_TYPES = ("downsample", "geom_noise", "color_noise", "color_quantize")
MAX_LEVEL = 5


@dataclass
class ManifestEntry:
    path: str
    content_id: str
    distortion: str
    level: int
    mos: float


@dataclass
class DatasetManifest:
    entries: list  # of ManifestEntry

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "content_id", "distortion", "level", "mos"])
        for e in self.entries:
            writer.writerow([e.path, e.content_id, e.distortion, e.level,
                             repr(e.mos)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DatasetManifest":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["path", "content_id", "distortion", "level", "mos"]:
            raise ValueError("bad manifest header")
        entries = [ManifestEntry(path=r[0], content_id=r[1], distortion=r[2],
                                 level=int(r[3]), mos=float(r[4]))
                   for r in rows[1:] if r]
        return cls(entries=entries)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_csv(Path(path).read_text())

    def content_ids(self) -> list:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.content_id, None)
        return list(seen)


def _color_field(points, rng):
    """Smooth procedural RGB in [0, 1]: per-channel sinusoids of position."""
    freq = rng.uniform(1.0, 4.0, size=(3, 3))
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    return 0.5 + 0.5 * np.sin(points @ freq.T + phase)


def gen_shape(kind: str, n: int, seed: int) -> ColoredPointCloud:
    """Sample n points from a parametric shape with a procedural color field."""
    if n < 256:
        raise ValueError(f"need at least 256 points, got {n}")
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        vec = rng.standard_normal((n, 3))
        geo = vec / np.linalg.norm(vec, axis=1, keepdims=True)
    elif kind == "torus":
        u = rng.uniform(0, 2 * np.pi, n)
        v = rng.uniform(0, 2 * np.pi, n)
        r_major, r_minor = 1.0, 0.35
        ring = r_major + r_minor * np.cos(v)
        geo = np.stack([ring * np.cos(u), ring * np.sin(u),
                        r_minor * np.sin(v)], axis=1)
    elif kind == "cube-surface":
        face = rng.integers(0, 6, n)
        ab = rng.uniform(-1, 1, (n, 2))
        geo = np.empty((n, 3))
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        for i in range(n):
            others = [d for d in range(3) if d != axis[i]]
            geo[i, axis[i]] = sign[i]
            geo[i, others[0]] = ab[i, 0]
            geo[i, others[1]] = ab[i, 1]
    else:  # gaussian-blob
        geo = rng.standard_normal((n, 3)) * 0.5
    return ColoredPointCloud(geometry=geo, color=_color_field(geo, rng))


def _cloud_radius(geometry):
    centered = geometry - geometry.mean(axis=0)
    return float(np.sqrt((centered ** 2).sum(axis=1).max()))


def apply_distortion(cloud: ColoredPointCloud, kind: str, level: int,
                     seed: int) -> ColoredPointCloud:
    """One distortion at strength level 1..5; deterministic from seed."""
    if kind not in DISTORTION_TYPES:
        raise ValueError(f"unknown distortion {kind!r}")
    if not 1 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in 1..{MAX_LEVEL}, got {level}")
    rng = np.random.default_rng(seed)
    geo = cloud.geometry.copy()
    col = cloud.color.copy()
    if kind == "downsample":
        keep = int(round(cloud.n * (1.0 - 0.15 * level)))
        idx = np.sort(rng.choice(cloud.n, size=keep, replace=False))
        geo, col = geo[idx], col[idx]
    elif kind == "geom_noise":
        # sigma is in normalized units, so scale by the cloud radius
        sigma = 0.004 * level * _cloud_radius(geo)
        geo = geo + rng.normal(0.0, sigma, geo.shape)
    elif kind == "color_noise":
        col = np.clip(col + rng.normal(0.0, 0.03 * level, col.shape), 0.0, 1.0)
    else:  # color_quantize: round each channel to (8 - level) bits
        steps = 2 ** (8 - level) - 1
        col = np.rint(col * steps) / steps
    return ColoredPointCloud(geometry=geo, color=col)


def build_dataset(contents: int, types, levels: int, seed: int, out_dir,
                  n_points: int = 4096) -> DatasetManifest:
    """Write PLY files for contents x (1 pristine + types x levels) stimuli.

    pseudo-MOS = 10 - 9 * level / levels plus a small per-entry jitter
    (seeded by content), clamped to [1, 10] and kept strictly decreasing
    within each (content, distortion) series.
    """
    if contents < 2:
        raise ValueError("need at least 2 contents")
    types = list(types)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    content_seeds = root.spawn(contents)
    entries = []
    for c in range(contents):
        content_id = f"content{c:02d}"
        seeds = content_seeds[c].generate_state(2 + len(types) * levels)
        jitter_rng = np.random.default_rng(int(seeds[0]))
        kind = SHAPE_KINDS[c % len(SHAPE_KINDS)]
        pristine = gen_shape(kind, n_points, seed=int(seeds[1]))
        pristine_path = out_dir / f"{content_id}_pristine.ply"
        write_ply(pristine, pristine_path)
        base_mos = min(10.0, 10.0 + float(jitter_rng.uniform(-0.2, 0.2)))
        entries.append(ManifestEntry(path=str(pristine_path),
                                     content_id=content_id,
                                     distortion="pristine", level=0,
                                     mos=base_mos))
        for t, kind_d in enumerate(types):
            prev = base_mos
            for level in range(1, levels + 1):
                dseed = int(seeds[2 + t * levels + (level - 1)])
                distorted = apply_distortion(pristine, kind_d, level, dseed)
                path = out_dir / f"{content_id}_{kind_d}_l{level}.ply"
                write_ply(distorted, path)
                mos = 10.0 - 9.0 * level / levels \
                    + float(jitter_rng.uniform(-0.2, 0.2))
                mos = min(max(mos, 1.0), 10.0)
                if mos >= prev:  # keep the series strictly decreasing
                    mos = prev - 0.01
                entries.append(ManifestEntry(path=str(path),
                                             content_id=content_id,
                                             distortion=kind_d, level=level,
                                             mos=mos))
                prev = mos
    manifest = DatasetManifest(entries=entries)
    manifest.save(out_dir / "manifest.csv")
    return manifest
