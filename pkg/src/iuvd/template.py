"""Part-based body templates with per-part UV charts.

A template is a list of part meshes, each a triangle mesh carrying 3D
vertices, unit vertex normals and per-corner UV coordinates in [0,1]^2.
Charts must be injective per part: no two triangles of one part may
cover the same UV point.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import TemplateError

_PART_GROUP_RE = re.compile(r"^part_(\d+)$")


@dataclass
class Camera:
    """Weak-perspective camera; +Z points toward the camera."""

    kind: str = "weak-perspective"
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise TemplateError("camera scale must be positive")

    def project(self, points):
        """Project (n,3) world points to (n,2) image coordinates."""
        p = np.asarray(points, dtype=np.float64)
        return p[:, :2] * self.scale + np.asarray(self.translation, dtype=np.float64)


@dataclass
class PartMesh:
    part_index: int
    vertices_xyz: np.ndarray   # (n,3) float64, meters
    vertex_normals: np.ndarray  # (n,3) unit float64
    faces: np.ndarray          # (m,3) int32
    face_uv: np.ndarray        # (m,3,2) float64 in [0,1]^2

    def triangle_xyz(self):
        return self.vertices_xyz[self.faces]

    def areas_xyz(self):
        t = self.triangle_xyz()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def areas_uv(self):
        """Unsigned UV triangle areas."""
        return np.abs(self.signed_areas_uv())

    def signed_areas_uv(self):
        uv = self.face_uv
        e1 = uv[:, 1] - uv[:, 0]
        e2 = uv[:, 2] - uv[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass
class TemplateModel:
    parts: list[PartMesh]
    passthrough_parts: set[int] = field(default_factory=set)
    camera: Camera | None = None

    @property
    def part_count(self):
        return len(self.parts)

    def part(self, index):
        for p in self.parts:
            if p.part_index == index:
                return p
        raise TemplateError(f"no part with index {index}")

    def bounds(self):
        lo = np.min([p.vertices_xyz.min(axis=0) for p in self.parts], axis=0)
        hi = np.max([p.vertices_xyz.max(axis=0) for p in self.parts], axis=0)
        return lo, hi

    def all_triangles(self):
        """(t,3,3) stack of all parts' triangles, part-major order."""
        return np.concatenate([p.triangle_xyz() for p in self.parts], axis=0)


def compute_vertex_normals(vertices, faces):
    """Area-weighted average of face normals, normalized per vertex."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])  # 2*area*unit
    normals = np.zeros_like(v)
    for corner in range(3):
        np.add.at(normals, f[:, corner], fn)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    lens[lens < 1e-30] = 1.0
    return normals / lens


# ---------------------------------------------------------------------------
# procedural templates
# ---------------------------------------------------------------------------

def _lathe_part(part_index, stations, segments, center):
    """Surface of revolution around the local +Y axis.

    ``stations`` is a list of (y, radius, v, ny, nrad) rows ordered bottom
    to top; the first and last rows must have radius 0 (the poles).
    Returns a watertight PartMesh with a cylindrical chart: u is the
    azimuth fraction, v the supplied profile coordinate.
    """
    stations = np.asarray(stations, dtype=np.float64)
    if stations[0, 1] != 0.0 or stations[-1, 1] != 0.0:
        raise TemplateError("lathe profile must start and end on the axis")
    n = int(segments)
    rings = stations[1:-1]
    nrings = len(rings)
    phi = 2.0 * math.pi * np.arange(n) / n
    cx, sx = np.cos(phi), np.sin(phi)

    verts = np.empty((2 + nrings * n, 3))
    normals = np.empty_like(verts)
    verts[0] = (0.0, stations[0, 0], 0.0)
    normals[0] = (0.0, -1.0, 0.0) if stations[0, 3] <= 0 else (0.0, 1.0, 0.0)
    verts[1] = (0.0, stations[-1, 0], 0.0)
    normals[1] = (0.0, stations[-1, 3], 0.0)
    for j, (y, rad, _v, ny, nrad) in enumerate(rings):
        base = 2 + j * n
        verts[base:base + n, 0] = rad * cx
        verts[base:base + n, 1] = y
        verts[base:base + n, 2] = rad * sx
        normals[base:base + n, 0] = nrad * cx
        normals[base:base + n, 1] = ny
        normals[base:base + n, 2] = nrad * sx
    nl = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / nl

    u_edges = np.arange(n + 1) / n  # last column keeps u=1.0 in UV
    u_mid = 0.5 * (u_edges[:-1] + u_edges[1:])
    vcoord = stations[:, 2]

    faces = []
    uvs = []

    def ring_vertex(j, k):
        return 2 + j * n + (k % n)

    # bottom fan: pole, ring 0
    for k in range(n):
        faces.append((0, ring_vertex(0, k), ring_vertex(0, k + 1)))
        uvs.append(((u_mid[k], vcoord[0]),
                    (u_edges[k], vcoord[1]),
                    (u_edges[k + 1], vcoord[1])))
    # quad strips
    for j in range(nrings - 1):
        va, vb = vcoord[1 + j], vcoord[2 + j]
        for k in range(n):
            a = ring_vertex(j, k)
            b = ring_vertex(j, k + 1)
            c = ring_vertex(j + 1, k + 1)
            d = ring_vertex(j + 1, k)
            ua, ub = u_edges[k], u_edges[k + 1]
            faces.append((a, c, b))
            uvs.append(((ua, va), (ub, vb), (ub, va)))
            faces.append((a, d, c))
            uvs.append(((ua, va), (ua, vb), (ub, vb)))
    # top fan
    for k in range(n):
        faces.append((1, ring_vertex(nrings - 1, k + 1), ring_vertex(nrings - 1, k)))
        uvs.append(((u_mid[k], vcoord[-1]),
                    (u_edges[k + 1], vcoord[-2]),
                    (u_edges[k], vcoord[-2])))

    verts = verts + np.asarray(center, dtype=np.float64)
    return PartMesh(
        part_index=part_index,
        vertices_xyz=verts,
        vertex_normals=normals,
        faces=np.asarray(faces, dtype=np.int32),
        face_uv=np.asarray(uvs, dtype=np.float64),
    )


def capsule_profile(radius, length, segments, cap_rings=None, cyl_rings=None):
    """Profile stations of a capsule: hemisphere, cylinder, hemisphere."""
    r, L = float(radius), float(length)
    if cap_rings is None:
        cap_rings = max(2, segments // 4)
    if cyl_rings is None:
        circ_step = 2.0 * math.pi * r / segments
        cyl_rings = max(1, int(round(L / circ_step))) if L > 0 else 1
    total = math.pi * r + L
    rows = [(-L / 2 - r, 0.0, 0.0, -1.0, 0.0)]
    for i in range(1, cap_rings + 1):
        th = -math.pi / 2 + (i / cap_rings) * (math.pi / 2)
        s = r * (th + math.pi / 2)
        rows.append((-L / 2 + r * math.sin(th), r * math.cos(th), s / total,
                     math.sin(th), math.cos(th)))
    for i in range(1, cyl_rings + 1):
        y = -L / 2 + (i / cyl_rings) * L
        s = r * math.pi / 2 + (y + L / 2)
        rows.append((y, r, s / total, 0.0, 1.0))
    for i in range(1, cap_rings + 1):
        th = (i / cap_rings) * (math.pi / 2)
        s = r * math.pi / 2 + L + r * th
        rows.append((L / 2 + r * math.sin(th), r * math.cos(th), s / total,
                     math.sin(th), math.cos(th)))
    return rows


def capsule_vertex_count(segments, cap_rings, cyl_rings):
    """Vertices produced by ``_lathe_part`` for a capsule profile."""
    nrings = 2 * cap_rings + cyl_rings - 1
    return 2 + segments * nrings


@dataclass
class ToyMannequinConfig:
    """Six capsules: torso, head, two arms, two legs. Sizes in meters."""

    segments: int = 32
    torso: tuple[float, float] = (0.15, 0.45)   # (radius, cylinder length)
    head: tuple[float, float] = (0.10, 0.08)
    arm: tuple[float, float] = (0.05, 0.55)
    leg: tuple[float, float] = (0.07, 0.46)
    passthrough: tuple[int, ...] = ()


TOY_PART_NAMES = ("torso", "head", "arm_l", "arm_r", "leg_l", "leg_r")


def generate_toy_mannequin(config=None):
    """Procedural six-part stand-in body, about 1.7 m tall, parts disjoint."""
    cfg = config or ToyMannequinConfig()
    if cfg.segments < 4:
        raise TemplateError("tessellation must be at least 4 segments")
    rt, lt = cfg.torso
    rh, lh = cfg.head
    ra, la = cfg.arm
    rl, ll = cfg.leg
    torso_top = 1.05 + lt / 2 + rt
    layout = [
        (0, rt, lt, (0.0, 1.05, 0.0)),
        (1, rh, lh, (0.0, torso_top + 0.01 + lh / 2 + rh, 0.0)),
        (2, ra, la, (-(rt + ra + 0.06), 1.06, 0.0)),
        (3, ra, la, (rt + ra + 0.06, 1.06, 0.0)),
        (4, rl, ll, (-(rl + 0.015), 1.05 - lt / 2 - rt - 0.005 - ll / 2 - rl, 0.0)),
        (5, rl, ll, (rl + 0.015, 1.05 - lt / 2 - rt - 0.005 - ll / 2 - rl, 0.0)),
    ]
    parts = [
        _lathe_part(idx, capsule_profile(r, L, cfg.segments), cfg.segments, center)
        for idx, r, L, center in layout
    ]
    return TemplateModel(parts=parts, passthrough_parts=set(cfg.passthrough))


def generate_uv_sphere(radius=0.5, segments=48, rings=None, center=(0.0, 0.0, 0.0),
                       faceted=False):
    """Single-part sphere with a cylindrical chart (u azimuth, v latitude).

    With ``faceted=True`` every face gets private vertices whose normals
    equal the face normal; lifting a chart point along its normal then
    lands exactly above its own facet, which makes the UV-chart lift and
    the nearest-point feature path agree to rounding.
    """
    if segments < 4:
        raise TemplateError("tessellation must be at least 4 segments")
    rings = rings or max(2, segments // 2)
    r = float(radius)
    rows = [(-r, 0.0, 0.0, -1.0, 0.0)]
    for j in range(1, rings):
        th = -math.pi / 2 + j * math.pi / rings
        rows.append((r * math.sin(th), r * math.cos(th), j / rings,
                     math.sin(th), math.cos(th)))
    rows.append((r, 0.0, 1.0, 1.0, 0.0))
    part = _lathe_part(0, rows, segments, center)
    if faceted:
        part = _facet_part(part)
    return TemplateModel(parts=[part])


def _facet_part(part):
    """Split shared vertices so each face is flat-shaded with its own normal."""
    tri = part.triangle_xyz()
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    fn /= np.linalg.norm(fn, axis=1, keepdims=True)
    m = len(part.faces)
    return PartMesh(
        part_index=part.part_index,
        vertices_xyz=tri.reshape(-1, 3),
        vertex_normals=np.repeat(fn, 3, axis=0),
        faces=np.arange(3 * m, dtype=np.int32).reshape(-1, 3),
        face_uv=part.face_uv.copy(),
    )


# ---------------------------------------------------------------------------
# UV chart scaling
# ---------------------------------------------------------------------------

def chart_area_ratios(template):
    """Per-part ratio of average 3D triangle area to average UV triangle area."""
    ratios = []
    for p in template.parts:
        uv_areas = p.areas_uv()
        if np.any(uv_areas <= 0.0):
            raise TemplateError(f"part {p.part_index} has a zero-area UV triangle")
        ratios.append(float(np.mean(p.areas_xyz()) / np.mean(uv_areas)))
    return np.asarray(ratios)


def scale_uv_charts(template, mode="linear"):
    """Rescale each part's chart about its UV centroid.

    ``linear`` multiplies part i's UV coordinates by r_i / max(r),
    where r_i is the 3D-to-UV average-triangle-area ratio; the part with
    the largest ratio is untouched. ``sqrt`` uses the square root of the
    same factor, which makes the post-scale area ratios equal across
    parts instead of merely ordered.
    """
    if mode not in ("linear", "sqrt"):
        raise TemplateError(f"unknown uv scale mode: {mode}")
    ratios = chart_area_ratios(template)
    factors = ratios / ratios.max()
    if mode == "sqrt":
        factors = np.sqrt(factors)
    parts = []
    for p, s in zip(template.parts, factors):
        centroid = p.face_uv.reshape(-1, 2).mean(axis=0)
        uv = centroid + (p.face_uv - centroid) * s
        np.clip(uv, 0.0, 1.0, out=uv)
        parts.append(PartMesh(p.part_index, p.vertices_xyz.copy(),
                              p.vertex_normals.copy(), p.faces.copy(), uv))
    return TemplateModel(parts=parts,
                         passthrough_parts=set(template.passthrough_parts),
                         camera=template.camera)


# ---------------------------------------------------------------------------
# chart injectivity check
# ---------------------------------------------------------------------------

def _triangles_overlap(t1, t2, eps):
    """True if the interiors of two UV triangles intersect (SAT)."""
    best = math.inf
    for tri in (t1, t2):
        for k in range(3):
            ex, ey = tri[(k + 1) % 3] - tri[k]
            ax, ay = -ey, ex
            p1 = t1[:, 0] * ax + t1[:, 1] * ay
            p2 = t2[:, 0] * ax + t2[:, 1] * ay
            pen = min(p1.max(), p2.max()) - max(p1.min(), p2.min())
            norm = math.hypot(ax, ay)
            if norm < 1e-300:
                continue
            best = min(best, pen / norm)
            if best <= eps:
                return False
    return best > eps


def validate_charts(template):
    """Raise if any part's UV chart maps two triangles over the same region."""
    from .errors import ChartOverlapError

    for p in template.parts:
        uv = p.face_uv
        areas = p.areas_uv()
        live = np.nonzero(areas > 1e-16)[0]
        if len(live) < 2:
            continue
        lo = uv[live].min(axis=1)
        hi = uv[live].max(axis=1)
        span = max(float((hi - lo).max()), 1e-9)
        # bucket triangles on a coarse grid to prune candidate pairs
        cell = max(span, 1e-9)
        ncell = max(1, int(1.0 / cell)) if cell < 1 else 1
        buckets = {}
        eps = 1e-10
        for ii, t in enumerate(live):
            x0, y0 = np.floor(lo[t] * ncell).astype(int)
            x1, y1 = np.floor(hi[t] * ncell).astype(int)
            for gx in range(x0, x1 + 1):
                for gy in range(y0, y1 + 1):
                    buckets.setdefault((gx, gy), []).append(t)
        seen = set()
        for members in buckets.values():
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    a, b = members[i], members[j]
                    if (a, b) in seen:
                        continue
                    seen.add((a, b))
                    if (hi[np.searchsorted(live, a)] < lo[np.searchsorted(live, b)]).any() or \
                       (hi[np.searchsorted(live, b)] < lo[np.searchsorted(live, a)]).any():
                        continue
                    if _triangles_overlap(uv[a], uv[b], eps):
                        raise ChartOverlapError(p.part_index)


# ---------------------------------------------------------------------------
# OBJ + manifest I/O
# ---------------------------------------------------------------------------

def save_template(template, path, manifest_path=None):
    """Write a part-grouped OBJ plus a JSON manifest sidecar."""
    lines = []
    v_off = 0
    vt_off = 0
    for p in template.parts:
        lines.append(f"g part_{p.part_index}")
        for v in p.vertices_xyz:
            lines.append("v %.17g %.17g %.17g" % tuple(v))
        for n in p.vertex_normals:
            lines.append("vn %.17g %.17g %.17g" % tuple(n))
        for tri_uv in p.face_uv:
            for uv in tri_uv:
                lines.append("vt %.17g %.17g" % tuple(uv))
        for fi, tri in enumerate(p.faces):
            refs = []
            for c in range(3):
                vi = v_off + int(tri[c]) + 1
                ti = vt_off + fi * 3 + c + 1
                refs.append(f"{vi}/{ti}/{vi}")
            lines.append("f " + " ".join(refs))
        v_off += len(p.vertices_xyz)
        vt_off += len(p.faces) * 3
    path = str(path)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    manifest = {
        "parts": [f"part_{p.part_index}" for p in template.parts],
        "passthrough": sorted(template.passthrough_parts),
    }
    if template.camera is not None:
        manifest["camera"] = {
            "kind": template.camera.kind,
            "scale": template.camera.scale,
            "translation": list(template.camera.translation),
        }
    mpath = manifest_path or (path + ".json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_template(path, manifest=None):
    """Read a part-grouped OBJ; see ``save_template`` for the layout.

    Missing vertex normals are rebuilt by area-weighted face-normal
    averaging. Faces without UV references are a hard error, as is any
    pair of overlapping UV triangles inside one part.
    """
    positions = []
    texcoords = []
    normals = []
    # part index -> list of (vertex idx triple, vt idx triple, vn idx triple or None)
    part_faces = {}
    current = None
    nonmanifold_warned = False
    edge_use = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v":
                positions.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vt":
                texcoords.append([float(x) for x in tok[1:3]])
            elif tok[0] == "vn":
                normals.append([float(x) for x in tok[1:4]])
            elif tok[0] == "g":
                m = _PART_GROUP_RE.match(tok[1]) if len(tok) > 1 else None
                if not m:
                    raise TemplateError(f"group name {tok[1:]!r} is not part_<k>")
                current = int(m.group(1))
                part_faces.setdefault(current, [])
            elif tok[0] == "f":
                if current is None:
                    raise TemplateError("face found before any part_<k> group")
                vi, ti, ni = [], [], []
                for ref in tok[1:4]:
                    fields = ref.split("/")
                    vi.append(int(fields[0]) - 1)
                    if len(fields) < 2 or fields[1] == "":
                        raise TemplateError("template lacks UV parameterization")
                    ti.append(int(fields[1]) - 1)
                    if len(fields) > 2 and fields[2] != "":
                        ni.append(int(fields[2]) - 1)
                part_faces[current].append((vi, ti, ni if len(ni) == 3 else None))
                for k in range(3):
                    e = (min(vi[k], vi[(k + 1) % 3]), max(vi[k], vi[(k + 1) % 3]))
                    edge_use[e] = edge_use.get(e, 0) + 1
    if not part_faces:
        raise TemplateError(f"no part groups in {path}")
    if not texcoords:
        raise TemplateError("template lacks UV parameterization")
    if not nonmanifold_warned and edge_use and max(edge_use.values()) > 2:
        warnings.warn("template has non-manifold edges; faces retained")

    positions = np.asarray(positions, dtype=np.float64)
    texcoords = np.asarray(texcoords, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64) if normals else None

    parts = []
    for pid in sorted(part_faces):
        rows = part_faces[pid]
        if not rows:
            continue
        used = sorted({i for vi, _, _ in rows for i in vi})
        remap = {g: l for l, g in enumerate(used)}
        verts = positions[used]
        faces = np.asarray([[remap[i] for i in vi] for vi, _, _ in rows], dtype=np.int32)
        uv = np.asarray([[texcoords[t] for t in ti] for _, ti, _ in rows], dtype=np.float64)
        if normals is not None and all(r[2] is not None for r in rows):
            vn = np.zeros((len(used), 3))
            for vi, _, ni in rows:
                for c in range(3):
                    vn[remap[vi[c]]] = normals[ni[c]]
        else:
            vn = compute_vertex_normals(verts, faces)
        lens = np.linalg.norm(vn, axis=1, keepdims=True)
        lens[lens < 1e-30] = 1.0
        parts.append(PartMesh(pid, verts, vn / lens, faces, uv))

    manifest_data = {}
    mpath = manifest if isinstance(manifest, str) else str(path) + ".json"
    try:
        with open(mpath) as fh:
            manifest_data = json.load(fh)
    except FileNotFoundError:
        if isinstance(manifest, str):
            raise TemplateError(f"manifest not found: {manifest}") from None
    if isinstance(manifest, dict):
        manifest_data = manifest

    camera = None
    if "camera" in manifest_data:
        c = manifest_data["camera"]
        camera = Camera(kind=c.get("kind", "weak-perspective"),
                        scale=float(c.get("scale", 1.0)),
                        translation=tuple(c.get("translation", (0.0, 0.0))))
    model = TemplateModel(
        parts=parts,
        passthrough_parts=set(manifest_data.get("passthrough", ())),
        camera=camera,
    )
    validate_charts(model)
    return model
