"""K-means view selection: reduce a turntable view set to k representative views."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .renderer import ViewSet

MVST_MAGIC = b"MVST"


class ViewSelectError(ValueError):
    pass


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray  # (k, D)
    assignments: np.ndarray  # (n,) cluster index per point
    inertia: float  # sum of squared point-to-centroid distances
    inertia_history: tuple[float, ...] = ()  # one value per Lloyd iteration


@dataclass(frozen=True)
class ViewStack:
    """k selected views stacked as channels in canonical (brightest-first) order.

    Channels are ordered by decreasing total pixel mass so that channel
    semantics line up across differently oriented models; the azimuth each
    channel came from is recorded in source_azimuths.
    """

    model_id: str
    channels: np.ndarray  # (k, H, W) float32 in [0, 1]
    source_azimuths: tuple[float, ...]

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != len(self.source_azimuths):
            raise ViewSelectError("channels must be (k,H,W) matching source_azimuths")
        if len(set(self.source_azimuths)) != len(self.source_azimuths):
            raise ViewSelectError("source azimuths must be distinct")

    @property
    def k(self) -> int:
        return self.channels.shape[0]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    for _ in range(k - 1):
        d2 = _sq_dists(points, points[chosen]).min(axis=1)
        total = d2.sum()
        if total <= 0.0:  # all remaining points coincide with a centroid
            chosen.append(int(rng.integers(n)))
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Stops when assignments are stable or max_iters is reached. An empty
    cluster is re-seeded with the point farthest from its assigned centroid.
    Nearest-centroid ties break toward the lowest centroid index.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ViewSelectError(f"points must be 2-D, got shape {points.shape}")
    n = len(points)
    if not 1 <= k <= n:
        raise ViewSelectError(f"need n >= k >= 1, got n={n}, k={k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_dists(points, centroids)
        new_assign = d2.argmin(axis=1)
        # refill empty clusters with the globally farthest-from-centroid point
        for c in range(k):
            if not np.any(new_assign == c):
                far = d2[np.arange(n), new_assign].argmax()
                new_assign[far] = c
                d2[far, :] = -1.0  # now alone in its cluster; exclude from refills
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(k):
            centroids[c] = points[assignments == c].mean(axis=0)
        history.append(float(_sq_dists(points, centroids)[np.arange(n), assignments].sum()))
    inertia = float(_sq_dists(points, centroids)[np.arange(n), assignments].sum())
    return KMeansResult(centroids, assignments, inertia, tuple(history))


def stack_seed(model_id: str, run_seed: int) -> int:
    """Deterministic per-model k-means seed: 64-bit hash of the id XOR run seed."""
    h = int.from_bytes(hashlib.blake2b(model_id.encode(), digest_size=8).digest(), "little")
    return (h ^ run_seed) & (2**64 - 1)


def select_representatives(vs: ViewSet, k: int, seed: int) -> ViewStack:
    """Cluster flattened view pixels; keep each cluster's member nearest its centroid."""
    n = len(vs.views)
    if n < k:
        raise ViewSelectError(f"need at least k={k} views, got {n}")
    points = np.stack([v.pixels.reshape(-1).astype(np.float64) for v in vs.views])
    result = kmeans(points, k, stack_seed(vs.model_id, seed))
    reps: list[int] = []
    for c in range(k):
        members = np.flatnonzero(result.assignments == c)
        d = np.linalg.norm(points[members] - result.centroids[c], axis=1)
        reps.append(int(members[d.argmin()]))  # argmin tie -> lowest azimuth
    reps.sort()  # ascending azimuth breaks brightness ties deterministically
    # Canonical channel order: brightest view first.  Brightness is a pose
    # cue the clustering ignores, so sorting on it aligns channel semantics
    # across differently oriented models of one class.
    masses = np.array([float(vs.views[i].pixels.sum()) for i in reps])
    reps = [reps[j] for j in np.argsort(-masses, kind="stable")]
    channels = np.stack([vs.views[i].pixels for i in reps])
    azimuths = tuple(vs.views[i].azimuth for i in reps)
    return ViewStack(vs.model_id, channels, azimuths)


def write_stack(stack: ViewStack, path: str | Path) -> None:
    k, h, w = stack.channels.shape
    with open(path, "wb") as f:
        f.write(MVST_MAGIC)
        f.write(struct.pack("<III", k, h, w))
        f.write(stack.channels.astype("<f4").tobytes())
        f.write(np.asarray(stack.source_azimuths, dtype="<f4").tobytes())


def read_stack(path: str | Path, model_id: str | None = None) -> ViewStack:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MVST_MAGIC:
        raise ViewSelectError(f"{path}: bad magic {raw[:4]!r}")
    k, h, w = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw[16:], dtype="<f4")
    if body.size != k * h * w + k:
        raise ViewSelectError(f"{path}: truncated stack file")
    channels = body[: k * h * w].reshape(k, h, w).copy()
    azimuths = tuple(float(a) for a in body[k * h * w :])
    return ViewStack(model_id if model_id is not None else path.stem, channels, azimuths)
