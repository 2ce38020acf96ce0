"""Triangle mesh handling: OBJ parsing, normalization, random rotation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


class MeshError(ValueError):
    """Raised for malformed OBJ input or invalid mesh geometry."""


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: vertices (V, 3) float64, faces (F, 3) int64, 0-based."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 1:
            raise MeshError(f"vertices must be (V,3) with V >= 1, got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) < 1:
            raise MeshError(f"faces must be (F,3) with F >= 1, got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh contains NaN or infinite coordinates")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError(
                f"face index out of range: valid [0, {len(v) - 1}], "
                f"got [{f.min()}, {f.max()}]"
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.faces.shape == other.faces.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.faces, other.faces)
        )


# A NormalizedMesh is a Mesh whose centroid is at the origin and whose
# farthest vertex sits at distance 1; see is_normalized().
NormalizedMesh = Mesh


def is_normalized(m: Mesh, tol: float = 1e-6) -> bool:
    centroid = m.vertices.mean(axis=0)
    radii = np.linalg.norm(m.vertices, axis=1)
    return np.linalg.norm(centroid) <= tol and abs(radii.max() - 1.0) <= tol


def _parse_index(token: str, n_vertices: int, line_no: int) -> int:
    # `a/b/c` keeps only the vertex index a; OBJ indices are 1-based,
    # negative indices count back from the current vertex list end.
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshError(f"line {line_no}: bad face index {token!r}") from None
    if idx == 0:
        raise MeshError(f"line {line_no}: OBJ indices are 1-based, got 0")
    resolved = idx - 1 if idx > 0 else n_vertices + idx
    if not 0 <= resolved < n_vertices:
        raise MeshError(
            f"line {line_no}: face index {idx} out of range "
            f"(have {n_vertices} vertices)"
        )
    return resolved


def parse_obj(source: str | Iterable[str]) -> Mesh:
    """Parse the supported OBJ subset: `v` and `f` lines, fan triangulation.

    All other directives (vn, vt, o, g, s, mtllib, usemtl, comments) are
    ignored. Faces with n >= 3 indices become n-2 triangles fanned around
    the first index.
    """
    lines = source.splitlines() if isinstance(source, str) else source
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for line_no, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {line_no}: vertex needs 3 coordinates")
            try:
                vertices.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshError(
                    f"line {line_no}: malformed vertex literal in {raw!r}"
                ) from None
        elif tag == "f":
            idx = [_parse_index(t, len(vertices), line_no) for t in parts[1:]]
            if len(idx) < 3:
                raise MeshError(f"line {line_no}: face needs at least 3 indices")
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
        # any other line type is ignored
    if not faces:
        raise MeshError("no faces found in OBJ input")
    return Mesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64))


def serialize_obj(m: Mesh) -> str:
    """Write a mesh back to the supported OBJ subset (v/f lines, 1-based)."""
    out = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in m.vertices]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.faces]
    return "\n".join(out) + "\n"


def normalize_mesh(m: Mesh) -> NormalizedMesh:
    """Center on the vertex centroid and scale so the farthest vertex has norm 1."""
    centered = m.vertices - m.vertices.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius <= 0.0:
        raise MeshError("degenerate mesh: all vertices coincide")
    return Mesh(centered / radius, m.faces)


def rotation_from_seed(seed: int) -> np.ndarray:
    """Uniform random rotation matrix from a normalized 4D Gaussian quaternion."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis by `angle` radians."""
    x, y, z = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def perturb_mesh(m: NormalizedMesh, seed: int) -> NormalizedMesh:
    """Apply one seeded uniform random rotation; normalization is preserved."""
    return Mesh(m.vertices @ rotation_from_seed(seed).T, m.faces)
