"""Point clouds lifted from depth maps, and the operations that shape them.

Back-projection inverts the pinhole model used by the renderer: a valid
pixel ``(u, v)`` with depth ``z`` becomes the camera-frame point
``((u - cx) z / fx, (v - cy) z / fy, z)``. Points are emitted in
row-major pixel order so the mapping between pixels and rows is stable.

The cleanup chain mirrors a conventional capture pipeline: statistical
outlier removal by mean k-nearest-neighbor distance, normalization into
the unit ball, then farthest point sampling down to a fixed budget. All
of it is deterministic; the only randomized variant (uniform sampling)
takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCloudError,
    EmptyInputError,
    InsufficientPointsError,
    ParseError,
    ShapeError,
)
from .scenes import DepthMap


@dataclass
class PointCloud:
    """Points in the camera frame with a per-point source view tag."""

    points: np.ndarray
    source_view: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.source_view = np.asarray(self.source_view, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeError(f"points must be [M, 3], got {self.points.shape}")
        if self.source_view.shape != (self.points.shape[0],):
            raise ShapeError(
                f"source_view shape {self.source_view.shape} does not match "
                f"{self.points.shape[0]} points")
        if self.points.size and not np.isfinite(self.points).all():
            raise ShapeError("points must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


def backproject(dm: DepthMap, view: int = 0) -> PointCloud:
    """Lift every valid pixel to a 3-d point, row-major over the raster."""
    intr = dm.intrinsics
    vs, us = np.nonzero(dm.valid)
    z = dm.depth[vs, us]
    x = (us.astype(np.float64) - intr.cx) * z / intr.fx
    y = (vs.astype(np.float64) - intr.cy) * z / intr.fy
    pts = np.stack([x, y, z], axis=1)
    return PointCloud(points=pts, source_view=np.full(len(z), view, dtype=np.int64))


def project(points: np.ndarray, dm_or_intr) -> np.ndarray:
    """Forward pinhole map to ``(u, v, z)`` rows; inverse of :func:`backproject`."""
    intr = dm_or_intr.intrinsics if isinstance(dm_or_intr, DepthMap) else dm_or_intr
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be [M, 3], got {pts.shape}")
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise ShapeError("projection needs strictly positive depth")
    u = pts[:, 0] * intr.fx / z + intr.cx
    v = pts[:, 1] * intr.fy / z + intr.cy
    return np.stack([u, v, z], axis=1)


def merge_views(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds, preserving order and per-point view tags."""
    if not clouds:
        raise EmptyInputError("merge_views needs at least one cloud")
    pts = np.concatenate([c.points for c in clouds], axis=0)
    tags = np.concatenate([c.source_view for c in clouds], axis=0)
    return PointCloud(points=pts, source_view=tags)


def split_by_view(cloud: PointCloud) -> dict[int, PointCloud]:
    out: dict[int, PointCloud] = {}
    for view in np.unique(cloud.source_view):
        mask = cloud.source_view == view
        out[int(view)] = PointCloud(points=cloud.points[mask],
                                    source_view=cloud.source_view[mask])
    return out


def knn_mean_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its k nearest neighbors (brute force)."""
    m = points.shape[0]
    if not 0 < k < m:
        raise InsufficientPointsError(f"need k in (0, M), got k={k} for M={m}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    nearest = np.partition(dist, k - 1, axis=1)[:, :k]
    return nearest.mean(axis=1)


def filter_outliers(cloud: PointCloud, k: int = 8, alpha: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + alpha * std.

    The statistic is computed over the whole cloud in one pass, so the
    result does not depend on point order beyond ties at the threshold.
    Requires strictly more than k points.
    """
    m = len(cloud)
    if m <= k:
        raise InsufficientPointsError(f"filter_outliers needs more than k={k} points, got {m}")
    stat = knn_mean_distances(cloud.points, k)
    keep = stat <= stat.mean() + alpha * stat.std()
    return PointCloud(points=cloud.points[keep], source_view=cloud.source_view[keep])


def normalize(cloud: PointCloud) -> PointCloud:
    """Translate the centroid to the origin and scale the max radius to 1."""
    if len(cloud) == 0:
        raise EmptyInputError("normalize needs a non-empty cloud")
    centered = cloud.points - cloud.points.mean(axis=0)
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    if radius == 0.0:
        raise DegenerateCloudError(
            f"cloud of {len(cloud)} coincident points has no extent to normalize")
    return PointCloud(points=centered / radius, source_view=cloud.source_view.copy())


def sample_fps(cloud: PointCloud, m: int, seed_index: int = 0) -> tuple[PointCloud, np.ndarray]:
    """Greedy farthest point sampling; returns the subcloud and chosen indices.

    Starts from ``seed_index``, then repeatedly picks the point with the
    largest distance to the selected set, breaking exact ties toward the
    lowest index. Runtime is O(M * m).
    """
    big = len(cloud)
    if not 1 <= m <= big:
        raise InsufficientPointsError(f"cannot sample {m} points from a cloud of {big}")
    if not 0 <= seed_index < big:
        raise ShapeError(f"seed index {seed_index} out of range for {big} points")
    pts = cloud.points
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    diff = pts - pts[seed_index]
    dist = np.sqrt((diff * diff).sum(axis=1))
    for i in range(1, m):
        nxt = int(np.argmax(dist))  # first max, i.e. lowest index on ties
        chosen[i] = nxt
        diff = pts - pts[nxt]
        dist = np.minimum(dist, np.sqrt((diff * diff).sum(axis=1)))
    return PointCloud(points=pts[chosen], source_view=cloud.source_view[chosen]), chosen


def sample_uniform(cloud: PointCloud, m: int, seed: int) -> tuple[PointCloud, np.ndarray]:
    """Seeded uniform subsampling without replacement (ablation alternative)."""
    big = len(cloud)
    if not 1 <= m <= big:
        raise InsufficientPointsError(f"cannot sample {m} points from a cloud of {big}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(big, size=m, replace=False)
    return PointCloud(points=cloud.points[chosen], source_view=cloud.source_view[chosen]), chosen


# ---------------------------------------------------------------------------
# ASCII PLY with double-precision vertices

def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """ASCII PLY with 17-significant-digit coordinates (lossless for float64)."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property int source_view",
        "end_header",
    ]
    for p, tag in zip(cloud.points, cloud.source_view):
        lines.append(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {int(tag)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path: str | Path) -> PointCloud:
    """Parse the PLY profile written by :func:`write_ply`.

    Only that profile is accepted; anything else raises ParseError with
    the 1-based line number where parsing failed.
    """
    lines = Path(path).read_text(encoding="ascii").splitlines()

    def fail(lineno: int, why: str):
        raise ParseError(f"{path}: line {lineno}: {why}", location=lineno)

    expected = ["ply", "format ascii 1.0"]
    for i, want in enumerate(expected):
        if i >= len(lines) or lines[i].strip() != want:
            got = lines[i].strip() if i < len(lines) else "<eof>"
            fail(i + 1, f"expected {want!r}, got {got!r}")
    n_vertex = None
    props: list[str] = []
    body_at = None
    for i in range(2, len(lines)):
        token = lines[i].strip()
        if token.startswith("comment"):
            continue
        if token.startswith("element vertex "):
            try:
                n_vertex = int(token.split()[-1])
            except ValueError:
                fail(i + 1, f"bad vertex count in {token!r}")
            if n_vertex < 0:
                fail(i + 1, f"negative vertex count {n_vertex}")
        elif token.startswith("element "):
            fail(i + 1, f"unsupported element {token!r}")
        elif token.startswith("property "):
            props.append(token)
        elif token == "end_header":
            body_at = i + 1
            break
        else:
            fail(i + 1, f"unexpected header line {token!r}")
    if body_at is None:
        fail(len(lines), "missing end_header")
    if n_vertex is None:
        fail(body_at, "missing element vertex declaration")
    want_props = ["property double x", "property double y", "property double z",
                  "property int source_view"]
    if props != want_props:
        fail(body_at, f"unsupported property list {props}")
    body = lines[body_at:]
    if len(body) < n_vertex:
        fail(len(lines) + 1, f"expected {n_vertex} vertex lines, found {len(body)}")
    if len(body) > n_vertex and any(s.strip() for s in body[n_vertex:]):
        fail(body_at + n_vertex + 1, "trailing data after vertex list")
    pts = np.empty((n_vertex, 3))
    tags = np.empty(n_vertex, dtype=np.int64)
    for j in range(n_vertex):
        fields = body[j].split()
        if len(fields) != 4:
            fail(body_at + j + 1, f"expected 4 fields, got {len(fields)}")
        try:
            pts[j] = [float(fields[0]), float(fields[1]), float(fields[2])]
            tags[j] = int(fields[3])
        except ValueError:
            fail(body_at + j + 1, f"unparseable vertex line {body[j]!r}")
    return PointCloud(points=pts, source_view=tags)
