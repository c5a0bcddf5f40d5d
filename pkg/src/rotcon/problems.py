"""Problem generators and data ingestion.

Rotation-averaging instances (one random rotation per agent), multi-view
pose-estimation instances built from point clouds, and small readers for
CSV / OBJ-vertex clouds with a seeded synthetic substitute.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ProblemError(ValueError):
    """Raised for invalid generator arguments or unreadable cloud files."""


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_rotation(n: int, seed=None) -> np.ndarray:
    """Draw a rotation uniformly (Haar) from SO(n).

    QR of a Gaussian matrix with the R-factor sign fix gives Haar on O(n);
    flipping the last column on det = -1 lands the draw in SO(n).
    """
    if n < 2:
        raise ProblemError(f"rotation dimension must be >= 2, got {n}")
    rng = _as_rng(seed)
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    q = q * sign
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


@dataclass(frozen=True)
class PointCloud:
    """n x m coordinate matrix with its centroid recorded for re-centering."""

    points: np.ndarray
    centroid: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]


def _make_cloud(points: np.ndarray) -> PointCloud:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] < 1:
        raise ProblemError(f"expected an n x m coordinate matrix, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ProblemError("point cloud has non-finite coordinates")
    return PointCloud(points=points, centroid=points.mean(axis=1))


def synthetic_cloud(m: int, n: int = 3, seed=0) -> PointCloud:
    """Uniform points in the unit cube; stand-in for mesh assets."""
    if m < 1:
        raise ProblemError(f"need at least one point, got m={m}")
    rng = _as_rng(seed)
    return _make_cloud(rng.uniform(0.0, 1.0, size=(n, m)))


def load_point_cloud(path, normalize: bool = False) -> PointCloud:
    """Read a cloud from CSV (one comma-separated point per line) or OBJ.

    For OBJ only ``v x y z`` vertex lines are used; faces and other
    elements are ignored.  With ``normalize`` the cloud is scaled into the
    unit bounding box.
    """
    path = Path(path)
    if not path.exists():
        raise ProblemError(f"no such file: {path}")
    rows = []
    is_obj = path.suffix.lower() == ".obj"
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if is_obj:
            parts = line.split()
            if parts[0] != "v":
                continue
            fields = parts[1:4]
        else:
            fields = [f for f in line.replace(",", " ").split() if f]
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ProblemError(f"{path}:{lineno}: cannot parse coordinates from {raw!r}") from exc
    if not rows:
        raise ProblemError(f"{path}: no points found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ProblemError(f"{path}: inconsistent coordinate counts {sorted(widths)}")
    pts = np.array(rows, dtype=float).T
    if normalize:
        span = pts.max(axis=1) - pts.min(axis=1)
        span[span == 0] = 1.0
        pts = (pts - pts.min(axis=1, keepdims=True)) / span.max()
    return _make_cloud(pts)


@dataclass(frozen=True)
class ProblemInstance:
    """Per-agent data matrices D^i, optionally with provenance.

    For pose problems B holds each agent's model points and C its observed
    points, with D^i = C^i B^i^T exactly; R_true is the generating rotation
    when one exists.
    """

    n: int
    D: np.ndarray  # (N, n, n)
    R_true: np.ndarray | None = None
    B: tuple[np.ndarray, ...] | None = None
    C: tuple[np.ndarray, ...] | None = None

    @property
    def N(self) -> int:
        return self.D.shape[0]

    def data_sum(self) -> np.ndarray:
        return self.D.sum(axis=0)


def averaging_instance(n: int, N: int, seed=None) -> ProblemInstance:
    """Rotation averaging: agent i holds D^i = R^i_0, a random initial attitude."""
    if N < 1:
        raise ProblemError(f"need at least one agent, got N={N}")
    rng = _as_rng(seed)
    D = np.array([random_rotation(n, rng) for _ in range(N)])
    return ProblemInstance(n=n, D=D)


def pose_instance(model: PointCloud, N: int, sigma: float, seed=None) -> ProblemInstance:
    """Multi-sensor pose estimation from a rotated, noise-corrupted cloud.

    A random ground-truth rotation is applied to the model and i.i.d.
    Gaussian noise (std ``sigma``) added per coordinate.  Model and
    observations are re-centered by their global centroids (so a single
    rotation relates them without translation), then the point indices are
    split evenly across N agents: B^i model chunk, C^i observed chunk,
    D^i = C^i B^i^T.
    """
    if N < 1:
        raise ProblemError(f"need at least one agent, got N={N}")
    if N > model.m:
        raise ProblemError(f"cannot split {model.m} points across {N} agents")
    if sigma < 0:
        raise ProblemError(f"noise level must be >= 0, got {sigma}")
    rng = _as_rng(seed)
    n = model.n
    r_true = random_rotation(n, rng)
    observed = r_true @ model.points
    if sigma > 0:
        observed = observed + sigma * rng.standard_normal(observed.shape)
    model_c = model.points - model.points.mean(axis=1, keepdims=True)
    observed_c = observed - observed.mean(axis=1, keepdims=True)
    chunks = np.array_split(np.arange(model.m), N)
    B = tuple(model_c[:, idx] for idx in chunks)
    C = tuple(observed_c[:, idx] for idx in chunks)
    D = np.array([c @ b.T for b, c in zip(B, C)])
    return ProblemInstance(n=n, D=D, R_true=r_true, B=B, C=C)
