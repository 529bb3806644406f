"""Point cloud ingestion, normalization, sampling and patch-up into sub-models."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class PlyError(ValueError):
    """Malformed or unsupported PLY content."""


@dataclass
class ColoredPointCloud:
    """N points with 3D geometry and RGB color (components in [0, 1] in memory)."""

    geometry: np.ndarray  # (N, 3) float64
    color: np.ndarray     # (N, 3) float64 in [0, 1]

    def __post_init__(self):
        self.geometry = np.ascontiguousarray(self.geometry, dtype=np.float64)
        self.color = np.ascontiguousarray(self.color, dtype=np.float64)
        if self.geometry.ndim != 2 or self.geometry.shape[1] != 3:
            raise ValueError(f"geometry must be (N, 3), got {self.geometry.shape}")
        if self.color.shape != self.geometry.shape:
            raise ValueError("geometry and color must have the same length")
        if self.geometry.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if self.color.min() < 0.0 or self.color.max() > 1.0:
            raise ValueError("color components must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.geometry.shape[0]


@dataclass
class NormalizedCloud:
    """Geometry centred at the origin with unit max radius; carries no color."""

    geometry: np.ndarray  # (N, 3) float64
    provenance: str = ""

    def __post_init__(self):
        self.geometry = np.ascontiguousarray(self.geometry, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.geometry.shape[0]


@dataclass
class SubModelSet:
    """Anchor-centred neighbourhoods of n_s point indices each."""

    anchors: np.ndarray    # (n_delta,) int64
    submodels: np.ndarray  # (n_delta, n_s) int64
    n_s: int
    n_delta: int = field(init=False)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.int64)
        self.submodels = np.asarray(self.submodels, dtype=np.int64)
        self.n_delta = int(self.anchors.shape[0])
        if self.submodels.shape != (self.n_delta, self.n_s):
            raise ValueError("submodels must be (n_delta, n_s)")

    def to_json(self) -> str:
        return json.dumps({
            "anchor_indices": self.anchors.tolist(),
            "submodels": self.submodels.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SubModelSet":
        doc = json.loads(text)
        sub = np.asarray(doc["submodels"], dtype=np.int64)
        return cls(anchors=np.asarray(doc["anchor_indices"], dtype=np.int64),
                   submodels=sub, n_s=sub.shape[1])


# ---------------------------------------------------------------------------
# PLY I/O

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(fh):
    """Parse a PLY header; returns (format, elements, header_end_offset).

    elements is a list of (name, count, properties) where each property is
    ("scalar", name, dtype) or ("list", name, count_dtype, item_dtype).
    """
    line = fh.readline()
    if line.strip() != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic at byte 0)")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError(f"unexpected end of header at line {lineno}")
        tokens = raw.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                fmt = "ascii"
            elif tokens[1] == "binary_little_endian":
                fmt = "binary_little_endian"
            else:
                raise PlyError(f"unsupported PLY format '{tokens[1]}' (line {lineno})")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyError(f"property before element (line {lineno})")
            props = elements[-1][2]
            if tokens[1] == "list":
                cnt, item = tokens[2], tokens[3]
                if cnt not in _PLY_SCALARS or item not in _PLY_SCALARS:
                    raise PlyError(f"unknown list property type (line {lineno})")
                props.append(("list", tokens[4], _PLY_SCALARS[cnt], _PLY_SCALARS[item]))
            else:
                if tokens[1] not in _PLY_SCALARS:
                    raise PlyError(f"unknown property type '{tokens[1]}' (line {lineno})")
                props.append(("scalar", tokens[2], _PLY_SCALARS[tokens[1]]))
        elif tokens[0] == "end_header":
            break
        else:
            raise PlyError(f"unrecognised header line {lineno}: {tokens[0]!r}")
    if fmt is None:
        raise PlyError("header has no 'format' line")
    return fmt, elements, fh.tell()


def _read_element_ascii(fh, count, props, offset_lines):
    rows = []
    for i in range(count):
        raw = fh.readline()
        if not raw:
            raise PlyError(f"truncated payload: expected row {i + 1}/{count} "
                           f"near line {offset_lines + i + 1}")
        fields = raw.split()
        row = {}
        pos = 0
        for prop in props:
            if prop[0] == "scalar":
                if pos >= len(fields):
                    raise PlyError(f"short row at line {offset_lines + i + 1}")
                row[prop[1]] = float(fields[pos])
                pos += 1
            else:
                cnt = int(fields[pos])
                pos += 1 + cnt
        rows.append(row)
    return rows


def _read_element_binary(fh, count, props):
    has_list = any(p[0] == "list" for p in props)
    if not has_list:
        dt = np.dtype([(p[1], "<" + p[2]) for p in props])
        buf = fh.read(dt.itemsize * count)
        if len(buf) != dt.itemsize * count:
            raise PlyError(f"truncated payload at byte offset {fh.tell() - len(buf)}: "
                           f"need {dt.itemsize * count} bytes, got {len(buf)}")
        return np.frombuffer(buf, dtype=dt)
    # list properties: walk element by element, keep scalar fields only
    rows = []
    for _ in range(count):
        row = {}
        for prop in props:
            if prop[0] == "scalar":
                item = np.dtype("<" + prop[2])
                buf = fh.read(item.itemsize)
                if len(buf) != item.itemsize:
                    raise PlyError(f"truncated payload at byte offset {fh.tell()}")
                row[prop[1]] = float(np.frombuffer(buf, dtype=item)[0])
            else:
                cnt_dt = np.dtype("<" + prop[2])
                buf = fh.read(cnt_dt.itemsize)
                if len(buf) != cnt_dt.itemsize:
                    raise PlyError(f"truncated payload at byte offset {fh.tell()}")
                cnt = int(np.frombuffer(buf, dtype=cnt_dt)[0])
                item_dt = np.dtype("<" + prop[3])
                skip = fh.read(item_dt.itemsize * cnt)
                if len(skip) != item_dt.itemsize * cnt:
                    raise PlyError(f"truncated list payload at byte offset {fh.tell()}")
        rows.append(row)
    return rows


def read_ply(path) -> ColoredPointCloud:
    """Read a PLY file with x,y,z and red,green,blue vertex properties.

    Unknown properties and non-vertex elements are skipped.
    """
    with open(path, "rb") as fh:
        fmt, elements, _ = _parse_header(fh)
        vertex = None
        for name, count, props in elements:
            if name == "vertex":
                vertex = (count, props)
            if vertex is not None:
                break
        if vertex is None:
            raise PlyError("no 'vertex' element in header")
        count, props = vertex
        names = [p[1] for p in props]
        for req in ("x", "y", "z"):
            if req not in names:
                raise PlyError(f"missing geometry property '{req}'")
        for req in ("red", "green", "blue"):
            if req not in names:
                raise PlyError(f"missing color property '{req}'")

        if fmt == "ascii":
            rows = _read_element_ascii(fh, count, props, offset_lines=0)
            geo = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
            col = np.array([[r["red"], r["green"], r["blue"]] for r in rows],
                           dtype=np.float64)
        else:
            data = _read_element_binary(fh, count, props)
            if isinstance(data, np.ndarray):
                geo = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
                col = np.stack([data["red"], data["green"], data["blue"]],
                               axis=1).astype(np.float64)
            else:
                geo = np.array([[r["x"], r["y"], r["z"]] for r in data], dtype=np.float64)
                col = np.array([[r["red"], r["green"], r["blue"]] for r in data],
                               dtype=np.float64)
    if col.min() < 0 or col.max() > 255:
        raise PlyError("color components out of 8-bit range")
    return ColoredPointCloud(geometry=geo, color=col / 255.0)


def write_ply(cloud: ColoredPointCloud, path, binary: bool = True) -> None:
    """Write geometry as float64 and color as uint8 (lossless round-trip)."""
    color8 = np.rint(cloud.color * 255.0).astype(np.uint8)
    header = [
        b"ply",
        b"format binary_little_endian 1.0" if binary else b"format ascii 1.0",
        b"element vertex %d" % cloud.n,
        b"property double x",
        b"property double y",
        b"property double z",
        b"property uchar red",
        b"property uchar green",
        b"property uchar blue",
        b"end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(b"\n".join(header) + b"\n")
        if binary:
            dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                           ("red", "u1"), ("green", "u1"), ("blue", "u1")])
            rec = np.empty(cloud.n, dtype=dt)
            rec["x"], rec["y"], rec["z"] = cloud.geometry.T
            rec["red"], rec["green"], rec["blue"] = color8.T
            fh.write(rec.tobytes())
        else:
            for g, c in zip(cloud.geometry, color8):
                # repr() round-trips float64 exactly through ASCII
                line = "%r %r %r %d %d %d\n" % (float(g[0]), float(g[1]),
                                                float(g[2]), c[0], c[1], c[2])
                fh.write(line.encode("ascii"))


def ply_io(path, direction: str = "read", cloud: ColoredPointCloud | None = None,
           binary: bool = True):
    """Unified read/write entry point; see read_ply / write_ply."""
    if direction == "read":
        return read_ply(path)
    if direction == "write":
        if cloud is None:
            raise ValueError("write direction needs a cloud")
        write_ply(cloud, path, binary=binary)
        return None
    raise ValueError(f"direction must be 'read' or 'write', got {direction!r}")


# ---------------------------------------------------------------------------
# Normalization and sampling

def normalize(cloud: ColoredPointCloud, provenance: str = "") -> NormalizedCloud:
    """Centre at the centroid and scale so the max distance to it equals 1."""
    if cloud.n < 2:
        raise ValueError("normalize needs at least 2 points")
    centered = cloud.geometry - cloud.geometry.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=1).max())
    if scale == 0.0:
        raise ValueError("zero scale: all points coincide")
    return NormalizedCloud(geometry=centered / scale, provenance=provenance)


def fps(cloud: NormalizedCloud, k: int, start: int = 0) -> np.ndarray:
    """Greedy max-min anchor selection; deterministic, ties to lowest index."""
    n = cloud.n
    if not 1 <= k <= n:
        raise ValueError(f"fps needs 1 <= k <= N, got k={k}, N={n}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    return kernels.fps(cloud.geometry, k, start)


def knn(cloud: NormalizedCloud, anchor: int, k: int) -> np.ndarray:
    """The k nearest points to the anchor (anchor included, distance-ascending)."""
    n = cloud.n
    if not 1 <= k <= n:
        raise ValueError(f"knn needs 1 <= k <= N, got k={k}, N={n}")
    if not 0 <= anchor < n:
        raise ValueError(f"anchor index {anchor} out of range")
    return kernels.knn_batch(cloud.geometry, np.array([anchor], dtype=np.int64), k)[0]


def patch_up(cloud: NormalizedCloud, n_s: int, mode: str = "strict") -> SubModelSet:
    """Split the cloud into floor(N / n_s) + 1 anchor-centred sub-models.

    ``pad`` mode handles N < n_s by duplicating points round-robin up to n_s
    and producing two sub-models; returned indices refer to the original cloud.
    """
    if mode not in ("strict", "pad"):
        raise ValueError(f"mode must be 'strict' or 'pad', got {mode!r}")
    n = cloud.n
    if n < n_s:
        if mode == "strict":
            raise ValueError(f"cloud has {n} points but sub-model size is {n_s} "
                             "(use pad mode for small clouds)")
        reps = np.arange(n_s, dtype=np.int64) % n
        padded = NormalizedCloud(geometry=cloud.geometry[reps],
                                 provenance=cloud.provenance)
        anchors = kernels.fps(padded.geometry, 2, 0)
        submodels = kernels.knn_batch(padded.geometry, anchors, n_s)
        return SubModelSet(anchors=reps[anchors], submodels=reps[submodels], n_s=n_s)
    n_delta = n // n_s + 1
    anchors = kernels.fps(cloud.geometry, n_delta, 0)
    submodels = kernels.knn_batch(cloud.geometry, anchors, n_s)
    return SubModelSet(anchors=anchors, submodels=submodels, n_s=n_s)


def select_submodels(cloud: NormalizedCloud, subset: SubModelSet, n_p: int,
                     seed: int, with_replacement: bool = True) -> np.ndarray:
    """Randomly pick n_p sub-models; returns (n_p, n_s, 3) coordinates."""
    if subset.n_delta < 1:
        raise ValueError("empty SubModelSet")
    rng = np.random.default_rng(seed)
    if with_replacement:
        chosen = rng.integers(0, subset.n_delta, size=n_p)
    else:
        if n_p > subset.n_delta:
            raise ValueError(f"cannot pick {n_p} of {subset.n_delta} sub-models "
                             "without replacement")
        chosen = rng.permutation(subset.n_delta)[:n_p]
    return cloud.geometry[subset.submodels[chosen]]
