"""Software rasterizer: orthographic grayscale turntable views of a mesh."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import NormalizedMesh

# The viewport maps this square in camera coordinates onto the image, so a
# unit-sphere-bounded mesh always fits with a margin (boundary pixels stay 0).
VIEW_EXTENT = 1.1
AMBIENT = 0.2


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Viewpoint:
    azimuth: float  # degrees in [0, 360)
    elevation: float = 30.0  # degrees
    distance: float = 2.0  # recorded only; orthographic projection ignores it

    def __post_init__(self):
        if not 0.0 <= self.azimuth < 360.0:
            raise RenderError(f"azimuth must be in [0,360), got {self.azimuth}")


@dataclass(frozen=True)
class ViewImage:
    pixels: np.ndarray  # (H, W) float32 in [0, 1], background exactly 0
    azimuth: float

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ViewSet:
    model_id: str
    views: tuple[ViewImage, ...] = field(default_factory=tuple)

    def __post_init__(self):
        azs = [v.azimuth for v in self.views]
        if azs != sorted(azs):
            raise RenderError("views must be ordered by ascending azimuth")


def camera_axes(azimuth: float, elevation: float):
    """Unit camera direction (origin -> camera), screen right and screen up."""
    az = math.radians(azimuth)
    el = math.radians(elevation)
    c = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    r = np.array([-math.sin(az), math.cos(az), 0.0])
    u = np.cross(c, r)
    return c, r, u


@njit(cache=True)
def _raster(sx, sy, depth, shade, image, zbuf):
    # sx, sy: (F, 3) pixel coordinates; depth: (F, 3) distance toward camera
    # (larger = nearer); shade: (F,) intensity. Z-buffer keeps the nearest.
    H, W = image.shape
    for f in range(sx.shape[0]):
        x0, x1, x2 = sx[f, 0], sx[f, 1], sx[f, 2]
        y0, y1, y2 = sy[f, 0], sy[f, 1], sy[f, 2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(math.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(math.floor(max(x0, x1, x2))), W - 1)
        ymin = max(int(math.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(math.floor(max(y0, y1, y2))), H - 1)
        inv = 1.0 / area
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) * inv
                w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) * inv
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = w0 * depth[f, 0] + w1 * depth[f, 1] + w2 * depth[f, 2]
                if z > zbuf[py, px]:
                    zbuf[py, px] = z
                    image[py, px] = shade[f]


def render_view(m: NormalizedMesh, vp: Viewpoint, resolution: int = 64) -> ViewImage:
    """Orthographic z-buffered render with double-sided headlight shading."""
    if resolution % 16 != 0:
        raise RenderError(f"resolution must be divisible by 16, got {resolution}")
    c, r, u = camera_axes(vp.azimuth, vp.elevation)
    v = m.vertices
    # pixel j center sits at camera coordinate -E + (j+0.5) * 2E/res
    scale = resolution / (2.0 * VIEW_EXTENT)
    sx = (v @ r + VIEW_EXTENT) * scale - 0.5
    sy = (VIEW_EXTENT - v @ u) * scale - 0.5  # row 0 at the top
    depth = v @ c

    tri = m.faces
    p0, p1, p2 = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    n = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(n, axis=1)
    norms[norms == 0.0] = 1.0
    shade = AMBIENT + (1.0 - AMBIENT) * np.abs(n @ c) / norms

    image = np.zeros((resolution, resolution), dtype=np.float64)
    zbuf = np.full((resolution, resolution), -np.inf)
    _raster(sx[tri], sy[tri], depth[tri], shade, image, zbuf)
    return ViewImage(image.astype(np.float32), vp.azimuth)


def render_turntable(
    m: NormalizedMesh,
    model_id: str = "",
    n_views: int = 30,
    resolution: int = 64,
    elevation: float = 30.0,
) -> ViewSet:
    """Render n_views equally spaced azimuths (default 30 -> one every 12 degrees)."""
    if n_views < 1:
        raise RenderError(f"n_views must be >= 1, got {n_views}")
    step = 360.0 / n_views
    views = tuple(
        render_view(m, Viewpoint(i * step, elevation), resolution)
        for i in range(n_views)
    )
    return ViewSet(model_id, views)


def write_pgm(view: ViewImage, path: str | Path) -> None:
    """Binary PGM (P5), 8-bit, intensity = round(255 * pixel)."""
    h, w = view.pixels.shape
    data = np.rint(view.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path: str | Path, azimuth: float = 0.0) -> ViewImage:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise RenderError(f"{path}: not a binary PGM (P5) file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        raw = np.frombuffer(f.read(w * h), dtype=np.uint8)
    pixels = (raw.reshape(h, w).astype(np.float32)) / maxval
    return ViewImage(pixels, azimuth)


def view_filename(model_id: str, index: int) -> str:
    return f"{model_id}_v{index:02d}.pgm"
