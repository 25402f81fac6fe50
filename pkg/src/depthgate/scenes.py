"""Synthetic desk-scale scenes rendered to dense depth maps.

The camera sits at the origin looking down +z. A ray through pixel
``(u, v)`` has direction ``((u - cx)/fx, (v - cy)/fy, 1)``, so the ray
parameter equals the z coordinate of the hit point and "depth" always
means distance along +z. Pixels that miss every primitive, or whose
nearest hit lies beyond ``far_clip``, are invalid and carry ``+inf`` as
the stored sentinel.

Primitives are deliberately minimal: spheres, axis-aligned boxes, and
frontal planes. That is enough to build scenes whose depth structure is
rich while the intersection math stays analytically checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

INVALID_DEPTH = np.inf
_T_EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if not (0.0 <= self.cx < self.width) or not (0.0 <= self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}")


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    object_id: int

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ConfigError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box described by center and half extents."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    object_id: int

    def __post_init__(self):
        if min(self.half_extents) <= 0.0:
            raise ConfigError(f"box half extents must be positive, got {self.half_extents}")


@dataclass(frozen=True)
class Plane:
    """Frontal plane z = depth, optionally limited to an axis-aligned rectangle."""

    depth: float
    object_id: int
    center_xy: tuple[float, float] = (0.0, 0.0)
    half_extents_xy: tuple[float, float] | None = None

    def __post_init__(self):
        if self.half_extents_xy is not None and min(self.half_extents_xy) <= 0.0:
            raise ConfigError(f"plane half extents must be positive, got {self.half_extents_xy}")


Primitive = Sphere | Box | Plane


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        ids = [p.object_id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"object ids must be unique, got {ids}")


@dataclass
class DepthMap:
    """Dense depth raster with a validity mask.

    Invalid pixels hold exactly ``INVALID_DEPTH``; valid pixels hold a
    depth inside ``(0, far_clip]``. Both facts are enforced here so any
    DepthMap in the system can be trusted downstream.
    """

    intrinsics: CameraIntrinsics
    depth: np.ndarray
    valid: np.ndarray
    far_clip: float = 10.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.depth.shape != shape or self.valid.shape != shape:
            raise ShapeError(
                f"depth/valid shape {self.depth.shape}/{self.valid.shape} "
                f"does not match intrinsics {shape}")
        if self.far_clip <= 0.0:
            raise ConfigError(f"far_clip must be positive, got {self.far_clip}")
        d = self.depth[self.valid]
        if d.size and (not np.all(d > 0.0) or not np.all(d <= self.far_clip)):
            raise ShapeError("valid pixels must have depth in (0, far_clip]")
        if not np.all(np.isinf(self.depth[~self.valid])):
            raise ShapeError("invalid pixels must carry the +inf sentinel")


def _ray_grid(intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    dx = (u[None, :] - intr.cx) / intr.fx
    dy = (v[:, None] - intr.cy) / intr.fy
    return np.broadcast_to(dx, (intr.height, intr.width)).copy(), \
        np.broadcast_to(dy, (intr.height, intr.width)).copy()


def _hit_sphere(dx, dy, s: Sphere) -> np.ndarray:
    cx, cy, cz = s.center
    a = dx * dx + dy * dy + 1.0
    b = -2.0 * (dx * cx + dy * cy + cz)
    c = cx * cx + cy * cy + cz * cz - s.radius * s.radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _T_EPS, t_near, t_far)
    return np.where(hit & (t > _T_EPS), t, np.inf)


def _hit_box(dx, dy, box: Box) -> np.ndarray:
    t_lo = np.full(dx.shape, -np.inf)
    t_hi = np.full(dx.shape, np.inf)
    for d_axis, c_axis, h_axis in ((dx, box.center[0], box.half_extents[0]),
                                   (dy, box.center[1], box.half_extents[1]),
                                   (None, box.center[2], box.half_extents[2])):
        lo, hi = c_axis - h_axis, c_axis + h_axis
        if d_axis is None:
            t_lo = np.maximum(t_lo, lo)
            t_hi = np.minimum(t_hi, hi)
            continue
        with np.errstate(divide="ignore"):
            t1 = np.where(d_axis != 0.0, lo / d_axis, np.where(lo <= 0.0, -np.inf, np.inf))
            t2 = np.where(d_axis != 0.0, hi / d_axis, np.where(hi >= 0.0, np.inf, -np.inf))
        t_lo = np.maximum(t_lo, np.minimum(t1, t2))
        t_hi = np.minimum(t_hi, np.maximum(t1, t2))
    hit = (t_lo <= t_hi) & (t_hi > _T_EPS)
    t = np.where(t_lo > _T_EPS, t_lo, t_hi)
    return np.where(hit, t, np.inf)


def _hit_plane(dx, dy, p: Plane) -> np.ndarray:
    if p.depth <= _T_EPS:
        return np.full(dx.shape, np.inf)
    t = np.full(dx.shape, p.depth)
    if p.half_extents_xy is not None:
        px, py = p.center_xy
        hx, hy = p.half_extents_xy
        inside = (np.abs(t * dx - px) <= hx) & (np.abs(t * dy - py) <= hy)
        t = np.where(inside, t, np.inf)
    return t


def render_depth(scene: Scene, intr: CameraIntrinsics, far_clip: float = 10.0) -> DepthMap:
    """Nearest-hit depth along +z for a ray through every pixel center."""
    dx, dy = _ray_grid(intr)
    depth = np.full((intr.height, intr.width), np.inf)
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            t = _hit_sphere(dx, dy, prim)
        elif isinstance(prim, Box):
            t = _hit_box(dx, dy, prim)
        else:
            t = _hit_plane(dx, dy, prim)
        depth = np.minimum(depth, t)
    valid = np.isfinite(depth) & (depth <= far_clip)
    depth = np.where(valid, depth, INVALID_DEPTH)
    return DepthMap(intrinsics=intr, depth=depth, valid=valid, far_clip=far_clip)


def add_depth_noise(dm: DepthMap, sigma: float, dropout: float,
                    seed: "int | np.random.SeedSequence") -> DepthMap:
    """Multiplicative Gaussian noise plus random pixel dropout.

    Draw order is fixed so tests can replay the generator: one
    ``standard_normal`` array over the full raster first, one ``random``
    array second, both applied to valid pixels only. Perturbed depths that
    leave ``(0, far_clip]`` are invalidated rather than clamped. With
    ``sigma == 0`` and ``dropout == 0`` the map is returned unchanged,
    bit for bit.
    """
    if sigma < 0.0 or not (0.0 <= dropout < 1.0):
        raise ConfigError(f"need sigma >= 0 and dropout in [0, 1), got {sigma}, {dropout}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal(dm.depth.shape)
    drop = rng.random(dm.depth.shape)
    factor = 1.0 + sigma * gauss
    depth = np.where(dm.valid, dm.depth * factor, INVALID_DEPTH)
    valid = dm.valid & (drop >= dropout) & (depth > 0.0) & (depth <= dm.far_clip)
    depth = np.where(valid, depth, INVALID_DEPTH)
    return DepthMap(intrinsics=dm.intrinsics, depth=depth, valid=valid, far_clip=dm.far_clip)


def render_id_raster(scene: Scene, height: int, width: int, scale: float) -> np.ndarray:
    """Orthographic object-id raster with depth discarded.

    Pixel ``(u, v)`` maps to the lateral point ``((u - width/2)/scale,
    (v - height/2)/scale)`` and is painted with an intensity derived from
    the id of the covering primitive, later primitives over earlier ones.
    Planes are treated as background and never painted. Because depth is
    ignored entirely, two scenes differing only in object depth rasterize
    to byte-identical images.
    """
    if scale <= 0.0:
        raise ConfigError(f"raster scale must be positive, got {scale}")
    x = (np.arange(width, dtype=np.float64)[None, :] - width / 2.0) / scale
    y = (np.arange(height, dtype=np.float64)[:, None] - height / 2.0) / scale
    img = np.zeros((height, width))
    max_id = max((p.object_id for p in scene.primitives), default=0)
    for prim in scene.primitives:
        intensity = (prim.object_id + 1.0) / (max_id + 1.0)
        if isinstance(prim, Sphere):
            cx, cy, _ = prim.center
            mask = (x - cx) ** 2 + (y - cy) ** 2 <= prim.radius ** 2
        elif isinstance(prim, Box):
            cx, cy, _ = prim.center
            hx, hy, _ = prim.half_extents
            mask = (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy)
        else:
            continue
        img = np.where(mask, intensity, img)
    return img
