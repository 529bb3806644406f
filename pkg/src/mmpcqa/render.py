"""Perspective rendering of colored point clouds into 2D projections.

Cameras sit on a sphere of fixed radius around the (normalized) cloud and
look at the origin.  Points are splatted as filled squares into a z-buffer.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels
from .clouds import ColoredPointCloud


@dataclass
class Camera:
    direction: np.ndarray          # unit vector from origin toward the eye
    distance: float = 3.0          # in normalized-cloud radii
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    fov_y: float = 40.0            # degrees
    width: int = 512
    height: int = 512

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("camera direction must be unit length")
        if self.distance <= 1.0:
            raise ValueError("camera distance must exceed the unit cloud radius")
        if self.width < 32 or self.height < 32:
            raise ValueError("canvas must be at least 32x32")
        cosang = abs(float(self.direction @ self.up))
        if cosang > 1.0 - 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")

    def to_json(self) -> str:
        return json.dumps({
            "direction": self.direction.tolist(), "distance": self.distance,
            "up": self.up.tolist(), "fov_y": self.fov_y,
            "width": self.width, "height": self.height,
        })

    @classmethod
    def from_json(cls, text: str) -> "Camera":
        d = json.loads(text)
        return cls(direction=np.asarray(d["direction"]), distance=d["distance"],
                   up=np.asarray(d["up"]), fov_y=d["fov_y"],
                   width=d["width"], height=d["height"])


@dataclass
class ProjectionImage:
    pixels: np.ndarray   # (H, W, 3) in [0, 1]
    depth: np.ndarray    # (H, W), +inf where background
    camera: Camera
    source: str = ""


def sample_camera(seed: int, distance: float = 3.0, width: int = 512,
                  height: int = 512, fov_y: float = 40.0) -> Camera:
    """Camera with direction uniform on the unit sphere, deterministic from seed.

    up is world +y unless the direction is nearly parallel to it, then +x.
    """
    if distance <= 1.0:
        raise ValueError("camera distance must exceed the unit cloud radius")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(3)
    while np.linalg.norm(vec) < 1e-12:
        vec = rng.standard_normal(3)
    direction = vec / np.linalg.norm(vec)
    up = np.array([0.0, 1.0, 0.0])
    if abs(direction @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    return Camera(direction=direction, distance=distance, up=up,
                  fov_y=fov_y, width=width, height=height)


def default_splat_radius(width: int) -> int:
    """Half-width 1 px at 1920-wide canvases, scaled proportionally."""
    return round(width / 1920.0)


def _camera_basis(camera: Camera):
    zc = camera.direction                       # camera looks along -zc
    xc = np.cross(camera.up, zc)
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    return xc, yc, zc


def rasterize(cloud: ColoredPointCloud, camera: Camera,
              splat_radius: int | None = None,
              background=(1.0, 1.0, 1.0), source: str = "") -> ProjectionImage:
    """Perspective-project and z-buffer splat the cloud.

    Geometry is expected roughly normalized (centred, unit max radius) so the
    fixed viewing distance frames it.  Each point covers a filled square of
    half-width ``splat_radius`` pixels; nearest depth wins each pixel.
    """
    if cloud.n < 1:
        raise ValueError("cannot rasterize an empty cloud")
    if splat_radius is None:
        splat_radius = default_splat_radius(camera.width)
    xc, yc, zc = _camera_basis(camera)
    eye = camera.direction * camera.distance
    rel = cloud.geometry - eye
    x_cam = rel @ xc
    y_cam = rel @ yc
    z_cam = rel @ zc
    depth = -z_cam

    tan_half = math.tan(math.radians(camera.fov_y) / 2.0)
    aspect = camera.width / camera.height
    infront = depth > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        x_ndc = x_cam / (depth * tan_half * aspect)
        y_ndc = y_cam / (depth * tan_half)
    u = (x_ndc + 1.0) / 2.0 * camera.width - 0.5
    v = (1.0 - (y_ndc + 1.0) / 2.0) * camera.height - 0.5

    img, dbuf = kernels.splat(
        np.ascontiguousarray(u[infront]),
        np.ascontiguousarray(v[infront]),
        np.ascontiguousarray(depth[infront]),
        np.ascontiguousarray(cloud.color[infront]),
        camera.height, camera.width, int(splat_radius),
        np.asarray(background, dtype=np.float64))
    return ProjectionImage(pixels=img, depth=dbuf, camera=camera, source=source)


def crop_patch(image: ProjectionImage, size: int, seed: int) -> np.ndarray:
    """Uniform-random size x size crop, deterministic from seed."""
    h, w = image.pixels.shape[:2]
    if size > w or size > h:
        raise ValueError(f"crop size {size} exceeds canvas {w}x{h}")
    rng = np.random.default_rng(seed)
    x0 = int(rng.integers(0, w - size + 1))
    y0 = int(rng.integers(0, h - size + 1))
    return image.pixels[y0:y0 + size, x0:x0 + size]


def render_views(cloud: ColoredPointCloud, n_views: int, seed: int,
                 width: int = 512, height: int = 512, crop: int = 224,
                 distance: float = 3.0, splat_radius: int | None = None,
                 background=(1.0, 1.0, 1.0)) -> list[np.ndarray]:
    """Render n_views random-viewpoint projections and crop one patch each."""
    if n_views < 1:
        raise ValueError("need at least one view")
    view_seeds = np.random.SeedSequence(seed).generate_state(2 * n_views)
    patches = []
    for t in range(n_views):
        cam = sample_camera(int(view_seeds[2 * t]), distance=distance,
                            width=width, height=height)
        proj = rasterize(cloud, cam, splat_radius=splat_radius,
                         background=background)
        patches.append(crop_patch(proj, crop, int(view_seeds[2 * t + 1])))
    return patches


def save_png(pixels: np.ndarray, path) -> None:
    """8-bit RGB PNG, no alpha."""
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
