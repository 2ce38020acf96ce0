"""Corpus management: manifests, stratified splits, synthetic primitives."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Mesh, axis_angle_rotation, serialize_obj

SPLITS = ("train", "val", "test")
PRIMITIVES = ("cube", "sphere", "cylinder", "cone", "torus", "pyramid")


class DatasetError(ValueError):
    pass


@dataclass
class ManifestEntry:
    model_id: str
    class_label: str
    split: str
    mesh_path: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"bad split {self.split!r} for {self.model_id}")


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[str, ...] = PRIMITIVES
    per_class: int = 20
    seed: int = 0
    scale_range: tuple[float, float] = (0.45, 1.0)  # per-axis anisotropic scale
    noise: float = 0.02  # vertex jitter amplitude (pre-normalization units)
    tilt: float = 90.0  # max per-instance orientation jitter, degrees

    def __post_init__(self):
        unknown = set(self.classes) - set(PRIMITIVES)
        if unknown:
            raise DatasetError(f"unknown classes {sorted(unknown)}")
        if len(self.classes) < 2 or self.per_class < 4:
            raise DatasetError("need >= 2 classes and >= 4 instances per class")
        if not 0.0 <= self.tilt <= 180.0:
            raise DatasetError(f"tilt must be in [0, 180], got {self.tilt}")


# -- primitive meshes (z-up, roughly unit size; normalized later) -----------

def _cube() -> Mesh:
    v = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
    )
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
        (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3),
    ]
    f = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(v, np.array(f))


def _pyramid() -> Mesh:
    v = np.array(
        [[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0], [0, 0, 1.4]], dtype=float
    )
    f = [(0, 2, 1), (0, 3, 2), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    return Mesh(v, np.array(f))


def _sphere(sectors: int = 16, stacks: int = 10) -> Mesh:
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, stacks):
        phi = math.pi * i / stacks
        for j in range(sectors):
            th = 2 * math.pi * j / sectors
            verts.append(
                [math.sin(phi) * math.cos(th), math.sin(phi) * math.sin(th), math.cos(phi)]
            )
    verts.append([0.0, 0.0, -1.0])
    bottom = len(verts) - 1
    ring = lambda i: 1 + (i - 1) * sectors
    faces = []
    for j in range(sectors):
        faces.append((0, ring(1) + j, ring(1) + (j + 1) % sectors))
    for i in range(1, stacks - 1):
        for j in range(sectors):
            a, b = ring(i) + j, ring(i) + (j + 1) % sectors
            c, d = ring(i + 1) + j, ring(i + 1) + (j + 1) % sectors
            faces += [(a, c, b), (b, c, d)]
    for j in range(sectors):
        faces.append((bottom, ring(stacks - 1) + (j + 1) % sectors, ring(stacks - 1) + j))
    return Mesh(np.array(verts), np.array(faces))


def _cylinder(sectors: int = 20) -> Mesh:
    top, bot = [], []
    for j in range(sectors):
        th = 2 * math.pi * j / sectors
        top.append([math.cos(th), math.sin(th), 1.0])
        bot.append([math.cos(th), math.sin(th), -1.0])
    verts = top + bot + [[0, 0, 1.0], [0, 0, -1.0]]
    ct, cb = 2 * sectors, 2 * sectors + 1
    faces = []
    for j in range(sectors):
        jn = (j + 1) % sectors
        faces += [(j, sectors + j, jn), (jn, sectors + j, sectors + jn)]
        faces.append((ct, j, jn))
        faces.append((cb, sectors + jn, sectors + j))
    return Mesh(np.array(verts, dtype=float), np.array(faces))


def _cone(sectors: int = 20) -> Mesh:
    verts = [
        [math.cos(2 * math.pi * j / sectors), math.sin(2 * math.pi * j / sectors), -1.0]
        for j in range(sectors)
    ]
    verts += [[0, 0, 1.2], [0, 0, -1.0]]
    apex, center = sectors, sectors + 1
    faces = []
    for j in range(sectors):
        jn = (j + 1) % sectors
        faces.append((j, jn, apex))
        faces.append((center, jn, j))
    return Mesh(np.array(verts, dtype=float), np.array(faces))


def _torus(major: float = 0.7, minor: float = 0.34, nu: int = 18, nv: int = 10) -> Mesh:
    verts, faces = [], []
    for i in range(nu):
        u = 2 * math.pi * i / nu
        for j in range(nv):
            v = 2 * math.pi * j / nv
            r = major + minor * math.cos(v)
            verts.append([r * math.cos(u), r * math.sin(u), minor * math.sin(v)])
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = i * nv + (j + 1) % nv
            d = ((i + 1) % nu) * nv + (j + 1) % nv
            faces += [(a, b, c), (c, b, d)]
    return Mesh(np.array(verts), np.array(faces))


_BUILDERS = {
    "cube": _cube, "sphere": _sphere, "cylinder": _cylinder,
    "cone": _cone, "torus": _torus, "pyramid": _pyramid,
}


def make_primitive(name: str) -> Mesh:
    return _BUILDERS[name]()


def jitter_mesh(m: Mesh, spec: SynthSpec, rng: np.random.Generator) -> Mesh:
    lo, hi = spec.scale_range
    scale = rng.uniform(lo, hi, size=3)
    v = m.vertices * scale
    if spec.tilt > 0:
        axis = rng.standard_normal(3)
        angle = rng.uniform(0.0, math.radians(spec.tilt))
        v = v @ axis_angle_rotation(axis, angle).T
    if spec.noise > 0:
        v = v + rng.standard_normal(v.shape) * spec.noise
    return Mesh(v, m.faces)


def generate_synthetic(spec: SynthSpec, out_dir: str | Path) -> list[ManifestEntry]:
    """Write one jittered OBJ per instance; entries start in the train split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(spec.seed).spawn(len(spec.classes) * spec.per_class)
    entries: list[ManifestEntry] = []
    i = 0
    for cls in spec.classes:
        base = make_primitive(cls)
        for n in range(spec.per_class):
            rng = np.random.default_rng(children[i])
            i += 1
            mesh = jitter_mesh(base, spec, rng)
            model_id = f"{cls}_{n:03d}"
            path = out_dir / f"{model_id}.obj"
            path.write_text(serialize_obj(mesh))
            entries.append(ManifestEntry(model_id, cls, "train", str(path)))
    return entries


# -- splits ------------------------------------------------------------------

def split_dataset(
    entries: list[ManifestEntry],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> list[ManifestEntry]:
    """Class-stratified split with largest-remainder rounding.

    Each class is shuffled with a seeded RNG, then assigned contiguously.
    Any nonzero-ratio split left empty for a class is given one item from
    that class's largest split when the class is big enough.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {ratios}")
    by_class: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        by_class.setdefault(e.class_label, []).append(e)
    ss = np.random.SeedSequence(seed).spawn(len(by_class))
    out: list[ManifestEntry] = []
    for child, cls in zip(ss, sorted(by_class)):
        group = by_class[cls]
        if not group:
            raise DatasetError(f"empty class {cls!r}")
        order = np.random.default_rng(child).permutation(len(group))
        n = len(group)
        ideal = [r * n for r in ratios]
        counts = [int(x) for x in ideal]
        remainders = sorted(
            range(3), key=lambda s: (-(ideal[s] - counts[s]), s)
        )
        for s in remainders[: n - sum(counts)]:
            counts[s] += 1
        for s in range(3):
            if ratios[s] > 0 and counts[s] == 0:
                donor = max(range(3), key=lambda d: counts[d])
                if counts[donor] >= 2:
                    counts[donor] -= 1
                    counts[s] += 1
        pos = 0
        for split, c in zip(SPLITS, counts):
            for idx in order[pos : pos + c]:
                e = group[idx]
                out.append(ManifestEntry(e.model_id, e.class_label, split, e.mesh_path))
            pos += c
    return out


# -- manifest I/O -------------------------------------------------------------

MANIFEST_FIELDS = ["model_id", "class_label", "split", "mesh_path"]


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        for e in entries:
            w.writerow(
                {
                    "model_id": e.model_id, "class_label": e.class_label,
                    "split": e.split, "mesh_path": e.mesh_path,
                }
            )


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DatasetError(f"manifest missing columns {sorted(missing)}")
        for row in reader:
            if row["model_id"] in seen:
                raise DatasetError(f"duplicate model id {row['model_id']!r}")
            seen.add(row["model_id"])
            entries.append(
                ManifestEntry(
                    row["model_id"], row["class_label"], row["split"], row["mesh_path"]
                )
            )
    return entries
