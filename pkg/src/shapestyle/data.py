"""Synthetic disentangled shape/pose mesh factory.

A fixed-connectivity capsule humanoid stands in for a registered body-scan
corpus: a closed genus-0 surface built from a torso/head ring stack with leg
and arm tubes spliced in, deformed by per-part shape multipliers and posed by
a 12-joint kinematic chain with linear blend skinning. Shape x pose grids are
fully crossed so every transfer has an exact ground-truth mesh.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, save_mesh

# ---------------------------------------------------------------------------
# template geometry constants (meters, rest pose, unit shape parameters)

_STACK_PROFILE = [  # (z, rx, ry): pelvis -> chest -> neck -> head -> crown rim
    (0.78, 0.190, 0.120),
    (0.95, 0.170, 0.110),
    (1.10, 0.165, 0.105),
    (1.28, 0.190, 0.120),
    (1.40, 0.195, 0.125),
    (1.47, 0.075, 0.075),
    (1.53, 0.070, 0.070),
    (1.60, 0.100, 0.110),
    (1.70, 0.095, 0.105),
    (1.77, 0.040, 0.045),
]
_CROWN_Z = 1.80

_LEG_PROFILE = [  # (z, r) below the pelvis ring
    (0.70, 0.080),
    (0.60, 0.072),
    (0.48, 0.058),
    (0.36, 0.060),
    (0.10, 0.040),
    (0.03, 0.030),
]
_FOOT_Z = 0.0
_HIP_X = 0.095
_PELVIS_Z = 0.78
_CROTCH_Z = 0.76

_ARM_PROFILE = [  # (|x|, r) beyond the shoulder splice
    (0.26, 0.055),
    (0.34, 0.050),
    (0.43, 0.045),
    (0.52, 0.042),
    (0.62, 0.035),
    (0.70, 0.028),
]
_HAND_X = 0.745

_WAIST_Z = 1.06
_NECK_Z = 1.47
_SHOULDER_Z = 1.40
_ELBOW_X = 0.43
_HIP_PIVOT_Z = 0.70
_KNEE_Z = 0.48

# ring size k, subdivisions per profile interval (stack, leg, arm)
_RESOLUTIONS = {
    0: (8, 1, 1, 0),
    1: (8, 2, 2, 1),
    2: (12, 2, 2, 2),
    3: (16, 3, 3, 3),
    4: (16, 5, 5, 5),
}

SHAPE_PARAM_NAMES = (
    "height",
    "torso_width",
    "torso_depth",
    "head_size",
    "arm_radius",
    "arm_length",
    "leg_radius",
    "leg_length",
)
SHAPE_PARAM_BOUNDS = (0.6, 1.6)
_SHAPE_SAMPLE_RANGE = (0.7, 1.4)

POSE_PARAM_NAMES = (
    "waist_bend",
    "neck_bend",
    "shoulder_swing_r",
    "shoulder_drop_r",
    "elbow_bend_r",
    "shoulder_swing_l",
    "shoulder_drop_l",
    "elbow_bend_l",
    "hip_swing_r",
    "knee_bend_r",
    "hip_swing_l",
    "knee_bend_l",
)
POSE_RANGES = np.array(
    [
        (-0.35, 0.35),
        (-0.40, 0.40),
        (-1.10, 1.10),
        (-0.10, 1.20),
        (0.00, 1.80),
        (-1.10, 1.10),
        (-0.10, 1.20),
        (0.00, 1.80),
        (-0.80, 0.80),
        (0.00, 1.50),
        (-0.80, 0.80),
        (0.00, 1.50),
    ]
)

DESK_GRID = (4, 6)
FULL_GRID = (18, 21)

# vertex region tags
_R_STACK, _R_CROTCH, _R_LEG_L, _R_LEG_R, _R_ARM_L, _R_ARM_R = range(6)

# bone ids
_B_ROOT, _B_CHEST, _B_HEAD = 0, 1, 2
_B_THIGH_L, _B_SHIN_L, _B_THIGH_R, _B_SHIN_R = 3, 4, 5, 6
_B_UARM_L, _B_FARM_L, _B_UARM_R, _B_FARM_R = 7, 8, 9, 10
_NUM_BONES = 11


def _subdivided_profile(profile, subdiv):
    """Insert `subdiv` evenly spaced stations inside every profile interval."""
    stations = []
    for (a, b) in zip(profile[:-1], profile[1:]):
        stations.append(a)
        for j in range(1, subdiv + 1):
            t = j / (subdiv + 1)
            stations.append(tuple((1 - t) * np.array(a) + t * np.array(b)))
    stations.append(profile[-1])
    return stations


def _smooth_step(t, center, half_width):
    """Linear 0->1 ramp over [center - half_width, center + half_width]."""
    return np.clip((np.asarray(t, dtype=np.float64) - center) / (2 * half_width) + 0.5, 0.0, 1.0)


@dataclass
class HumanoidTemplate:
    """Rest-pose template mesh plus the rigging needed to shape and pose it."""

    resolution: int
    mesh: Mesh
    regions: np.ndarray  # (N,) vertex region tags
    skin_weights: np.ndarray  # (N, num_bones), rows sum to 1
    pivot_ids: dict  # joint name -> vertex id array (pivot = mean position)
    arm_attach_x: float  # |x| of the shoulder splice center
    shoulder_z: float

    @property
    def num_vertices(self) -> int:
        return self.mesh.num_vertices

    @property
    def template_id(self) -> str:
        return self.mesh.template_id


def _attach_tube(verts, faces, regions, cycle, origin, direction, stations, apex_dist, tag):
    """Extrude a closed tube from an existing boundary cycle and cap it.

    `cycle` lists vertex ids in the stitching order (opposite the hole's
    remaining boundary orientation); stations are (distance, radius) pairs
    along `direction` from `origin`.
    """
    direction = np.asarray(direction, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    u = np.array([0.0, 1.0, 0.0]) - direction * direction[1]
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    rel = np.array([verts[i] for i in cycle]) - origin
    phis = np.arctan2(rel @ v, rel @ u)
    prev = list(cycle)
    ring_ids = []
    for dist, radius in stations:
        center = origin + direction * dist
        ring = []
        for phi in phis:
            verts.append(center + radius * (math.cos(phi) * u + math.sin(phi) * v))
            regions.append(tag)
            ring.append(len(verts) - 1)
        m = len(prev)
        for i in range(m):
            a, b = prev[i], prev[(i + 1) % m]
            c, d = ring[(i + 1) % m], ring[i]
            faces.append((a, b, c))
            faces.append((a, c, d))
        prev = ring
        ring_ids.append(ring)
    verts.append(origin + direction * apex_dist)
    regions.append(tag)
    apex = len(verts) - 1
    m = len(prev)
    for i in range(m):
        faces.append((prev[i], prev[(i + 1) % m], apex))
    return ring_ids, apex


def build_template(resolution: int = 1) -> HumanoidTemplate:
    """Construct the closed capsule-humanoid template at a resolution level.

    Deterministic: equal levels give bit-identical meshes. Levels map to
    300-2000 vertices; the surface is a single watertight genus-0 mesh.
    """
    if resolution not in _RESOLUTIONS:
        raise ValueError(
            f"resolution must be one of {sorted(_RESOLUTIONS)}, got {resolution}"
        )
    k, sub_stack, sub_leg, sub_arm = _RESOLUTIONS[resolution]

    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    regions: list[int] = []

    # torso + head ring stack, bottom (pelvis) to top (crown rim)
    stack = _subdivided_profile(_STACK_PROFILE, sub_stack)
    thetas = 2 * np.pi * (np.arange(k) + 0.5) / k
    ring_of = []
    for z, rx, ry in stack:
        ring = []
        for th in thetas:
            verts.append(np.array([rx * math.cos(th), ry * math.sin(th), z]))
            regions.append(_R_STACK)
            ring.append(len(verts) - 1)
        ring_of.append(ring)
    n_rings = len(ring_of)
    stack_z = np.array([s[0] for s in stack])

    # shoulder splice band: highest band comfortably below the neck taper
    candidates = [r for r in range(n_rings - 1) if stack_z[r + 1] <= _NECK_Z - 0.015]
    hole_band = min(candidates, key=lambda r: abs(0.5 * (stack_z[r] + stack_z[r + 1]) - _SHOULDER_Z))
    hole_cols = {k - 1, k // 2 - 1}  # right side and left side wall quads

    for r in range(n_rings - 1):
        for i in range(k):
            if r == hole_band and i in hole_cols:
                continue
            a, b = ring_of[r][i], ring_of[r][(i + 1) % k]
            c, d = ring_of[r + 1][(i + 1) % k], ring_of[r + 1][i]
            faces.append((a, b, c))
            faces.append((a, c, d))

    # crown cap
    verts.append(np.array([0.0, 0.0, _CROWN_Z]))
    regions.append(_R_STACK)
    crown = len(verts) - 1
    top = ring_of[-1]
    for i in range(k):
        faces.append((top[i], top[(i + 1) % k], crown))

    # pants: split the pelvis ring into two leg openings joined at two
    # crotch vertices, then drop a tube per leg
    bottom = ring_of[0]
    ry0 = _STACK_PROFILE[0][2]
    verts.append(np.array([0.0, 0.45 * ry0, _CROTCH_Z]))
    regions.append(_R_CROTCH)
    c_front = len(verts) - 1
    verts.append(np.array([0.0, -0.45 * ry0, _CROTCH_Z]))
    regions.append(_R_CROTCH)
    c_back = len(verts) - 1

    q, h = (k + 2) // 4, k // 2
    left_cycle = [c_front, c_back] + [bottom[i] for i in range(q + h - 1, q - 1, -1)]
    right_cycle = (
        [bottom[i] for i in range(q - 1, -1, -1)]
        + [bottom[i] for i in range(k - 1, q + h - 1, -1)]
        + [c_back, c_front]
    )
    faces.append((bottom[q], bottom[q - 1], c_front))
    faces.append((bottom[(q + h) % k], bottom[q + h - 1], c_back))

    leg_stations = [(_PELVIS_Z - z, r) for z, r in _subdivided_profile(_LEG_PROFILE, sub_leg)]
    leg_rings = {}
    for side, cycle, tag in ((-1, left_cycle, _R_LEG_L), (+1, right_cycle, _R_LEG_R)):
        rings, _ = _attach_tube(
            verts, faces, regions, cycle,
            origin=(side * _HIP_X, 0.0, _PELVIS_Z), direction=(0.0, 0.0, -1.0),
            stations=leg_stations, apex_dist=_PELVIS_Z - _FOOT_Z, tag=tag,
        )
        leg_rings[side] = rings

    # arms: remove one wall quad per side and extrude a square tube along +-x
    r = hole_band
    right_hole = [ring_of[r][k - 1], ring_of[r][0], ring_of[r + 1][0], ring_of[r + 1][k - 1]]
    left_hole = [ring_of[r][k // 2 - 1], ring_of[r][k // 2], ring_of[r + 1][k // 2], ring_of[r + 1][k // 2 - 1]]
    hole_pts = np.array([verts[i] for i in right_hole])
    arm_attach_x = float(np.mean(np.abs(hole_pts[:, 0])))
    shoulder_z = float(np.mean(hole_pts[:, 2]))

    arm_profile = _subdivided_profile(_ARM_PROFILE, sub_arm)
    arm_stations = [(x - arm_attach_x, r_) for x, r_ in arm_profile]
    arm_rings = {}
    for side, cycle, tag in ((+1, right_hole, _R_ARM_R), (-1, left_hole, _R_ARM_L)):
        rings, _ = _attach_tube(
            verts, faces, regions, cycle,
            origin=(side * arm_attach_x, 0.0, shoulder_z), direction=(side, 0.0, 0.0),
            stations=arm_stations, apex_dist=_HAND_X - arm_attach_x, tag=tag,
        )
        arm_rings[side] = rings

    vertices = np.array(verts)
    faces_arr = np.array(faces, dtype=np.int64)
    nv = len(vertices)
    if not (300 <= nv <= 2000):
        raise ValueError(f"resolution {resolution} yields {nv} vertices, outside [300, 2000]")
    mesh = Mesh(
        vertices=vertices,
        faces=faces_arr,
        template_id=f"capsule-humanoid-r{resolution}-v{nv}",
    )

    regions_arr = np.array(regions, dtype=np.int64)

    # joint pivot vertex sets; pivots follow any shape deformation of the verts
    stack_ring_near = lambda z: ring_of[int(np.argmin(np.abs(stack_z - z)))]
    leg_ring_near = lambda side, z: leg_rings[side][
        int(np.argmin([abs(_PELVIS_Z - d - z) for d, _ in leg_stations]))
    ]
    arm_ring_near = lambda side, x: arm_rings[side][
        int(np.argmin([abs(d + arm_attach_x - x) for d, _ in arm_stations]))
    ]
    pivot_ids = {
        "waist": np.array(stack_ring_near(_WAIST_Z)),
        "neck": np.array(stack_ring_near(_NECK_Z)),
        "shoulder_r": np.array(right_hole),
        "shoulder_l": np.array(left_hole),
        "elbow_r": np.array(arm_ring_near(+1, _ELBOW_X)),
        "elbow_l": np.array(arm_ring_near(-1, _ELBOW_X)),
        "hip_r": np.array(leg_ring_near(+1, _HIP_PIVOT_Z)),
        "hip_l": np.array(leg_ring_near(-1, _HIP_PIVOT_Z)),
        "knee_r": np.array(leg_ring_near(+1, _KNEE_Z)),
        "knee_l": np.array(leg_ring_near(-1, _KNEE_Z)),
    }

    skin = _skin_weights(vertices, regions_arr, arm_attach_x, shoulder_z)
    return HumanoidTemplate(
        resolution=resolution,
        mesh=mesh,
        regions=regions_arr,
        skin_weights=skin,
        pivot_ids=pivot_ids,
        arm_attach_x=arm_attach_x,
        shoulder_z=shoulder_z,
    )


def _skin_weights(vertices, regions, arm_attach_x, shoulder_z):
    """Two-bone linear blends near each joint, computed on rest coordinates."""
    x, z = vertices[:, 0], vertices[:, 2]
    n = len(vertices)

    a_chest = _smooth_step(z, _WAIST_Z, 0.09)
    b_head = _smooth_step(z, _NECK_Z + 0.015, 0.035)

    # arm influence: sign-resolved ramp along x, gated near shoulder height
    # for torso-wall vertices so lower chest rings stay on the torso
    box_z = _smooth_step(z, shoulder_z - 0.06, 0.03) * (1.0 - _smooth_step(z, shoulder_z + 0.06, 0.03))
    a_arm = {}
    b_elbow = {}
    for side, region in ((+1, _R_ARM_R), (-1, _R_ARM_L)):
        ramp = _smooth_step(side * x, arm_attach_x, 0.05)
        gate = np.where(regions == region, 1.0, box_z)
        a_arm[side] = ramp * gate
        b_elbow[side] = _smooth_step(side * x, _ELBOW_X, 0.045)

    # leg influence: downward ramp below the hip line, side resolved by
    # region for tube vertices and by x sign for pelvis-ring vertices
    a_leg_all = 1.0 - _smooth_step(z, 0.74, 0.05)
    a_leg = {}
    for side, region in ((+1, _R_LEG_R), (-1, _R_LEG_L)):
        on_side = np.where(
            regions == region,
            1.0,
            np.where((regions == _R_STACK) & (side * x > 0.0), 1.0, 0.0),
        )
        a_leg[side] = a_leg_all * on_side
    b_knee = 1.0 - _smooth_step(z, _KNEE_Z, 0.045)

    w = np.zeros((n, _NUM_BONES))
    chest_chain = a_chest
    head_f = b_head
    arm_r, arm_l = a_arm[+1], a_arm[-1]
    w[:, _B_HEAD] = chest_chain * head_f
    w[:, _B_UARM_R] = chest_chain * arm_r * (1 - b_elbow[+1])
    w[:, _B_FARM_R] = chest_chain * arm_r * b_elbow[+1]
    w[:, _B_UARM_L] = chest_chain * arm_l * (1 - b_elbow[-1])
    w[:, _B_FARM_L] = chest_chain * arm_l * b_elbow[-1]
    w[:, _B_CHEST] = chest_chain * np.clip(1 - head_f - arm_r - arm_l, 0.0, 1.0)
    w[:, _B_THIGH_R] = a_leg[+1] * (1 - b_knee)
    w[:, _B_SHIN_R] = a_leg[+1] * b_knee
    w[:, _B_THIGH_L] = a_leg[-1] * (1 - b_knee)
    w[:, _B_SHIN_L] = a_leg[-1] * b_knee

    crotch = regions == _R_CROTCH
    w[crotch] = 0.0
    w[:, _B_ROOT] = np.clip(1.0 - w[:, 1:].sum(axis=1), 0.0, 1.0)
    w /= w.sum(axis=1, keepdims=True)
    return w


# ---------------------------------------------------------------------------
# body specs, manifests, normalization


@dataclass(frozen=True)
class BodySpec:
    """One grid cell: a body shape crossed with a pose, plus its split."""

    shape_id: int
    pose_id: int
    shape_params: np.ndarray  # (8,) multipliers in [0.6, 1.6]
    pose_params: np.ndarray  # (12,) joint angles, radians
    split: str = "train"

    def __post_init__(self):
        sp = np.ascontiguousarray(self.shape_params, dtype=np.float64)
        pp = np.ascontiguousarray(self.pose_params, dtype=np.float64)
        if sp.shape != (len(SHAPE_PARAM_NAMES),):
            raise ValueError(f"shape_params must have {len(SHAPE_PARAM_NAMES)} entries")
        if pp.shape != (len(POSE_PARAM_NAMES),):
            raise ValueError(f"pose_params must have {len(POSE_PARAM_NAMES)} entries")
        lo, hi = SHAPE_PARAM_BOUNDS
        if sp.min() < lo or sp.max() > hi:
            raise ValueError(f"shape_params outside [{lo}, {hi}]")
        if np.abs(pp).max() > np.pi:
            raise ValueError("pose angles must lie in [-pi, pi]")
        if self.split not in ("train", "validation"):
            raise ValueError(f"unknown split {self.split!r}")
        sp.flags.writeable = False
        pp.flags.writeable = False
        object.__setattr__(self, "shape_params", sp)
        object.__setattr__(self, "pose_params", pp)

    def to_dict(self) -> dict:
        return {
            "shape_id": self.shape_id,
            "pose_id": self.pose_id,
            "shape_params": self.shape_params.tolist(),
            "pose_params": self.pose_params.tolist(),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodySpec":
        return cls(
            shape_id=d["shape_id"],
            pose_id=d["pose_id"],
            shape_params=np.array(d["shape_params"]),
            pose_params=np.array(d["pose_params"]),
            split=d["split"],
        )


@dataclass(frozen=True)
class Normalization:
    """Per-axis affine map taking training-split meters into [-0.95, 0.95]."""

    center: np.ndarray
    scale: np.ndarray

    EXTENT = 0.95

    def __post_init__(self):
        c = np.ascontiguousarray(self.center, dtype=np.float64)
        s = np.ascontiguousarray(self.scale, dtype=np.float64)
        if c.shape != (3,) or s.shape != (3,):
            raise ValueError("center and scale must be 3-vectors")
        if (s <= 0).any():
            raise ValueError("scale entries must be positive")
        c.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)

    @classmethod
    def fit(cls, vertex_arrays) -> "Normalization":
        """Fit to the union bounding box of the given (N, 3) arrays."""
        lo = np.min([v.min(axis=0) for v in vertex_arrays], axis=0)
        hi = np.max([v.max(axis=0) for v in vertex_arrays], axis=0)
        center = (lo + hi) / 2.0
        half = np.maximum((hi - lo) / 2.0, 1e-9)
        return cls(center=center, scale=half / cls.EXTENT)

    def normalize(self, vertices: np.ndarray) -> np.ndarray:
        return (vertices - self.center) / self.scale

    def denormalize(self, vertices: np.ndarray) -> np.ndarray:
        return vertices * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(center=np.array(d["center"]), scale=np.array(d["scale"]))


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate a dataset: grid specs, split, scaling."""

    template_id: str
    resolution: int
    seed: int
    num_shapes: int
    num_poses: int
    split_fraction: float
    normalization: Normalization
    bodies: tuple

    def cells(self, split: str | None = None) -> list[BodySpec]:
        if split is None:
            return list(self.bodies)
        return [b for b in self.bodies if b.split == split]

    def cell(self, shape_id: int, pose_id: int) -> BodySpec:
        for b in self.bodies:
            if b.shape_id == shape_id and b.pose_id == pose_id:
                return b
        raise KeyError(f"no cell (shape {shape_id}, pose {pose_id})")

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "template_id": self.template_id,
            "resolution": self.resolution,
            "seed": self.seed,
            "num_shapes": self.num_shapes,
            "num_poses": self.num_poses,
            "split_fraction": self.split_fraction,
            "normalization": self.normalization.to_dict(),
            "bodies": [b.to_dict() for b in self.bodies],
        }

    def to_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "DatasetManifest":
        with open(path, "r", encoding="ascii") as fh:
            d = json.load(fh)
        return cls(
            template_id=d["template_id"],
            resolution=d["resolution"],
            seed=d["seed"],
            num_shapes=d["num_shapes"],
            num_poses=d["num_poses"],
            split_fraction=d["split_fraction"],
            normalization=Normalization.from_dict(d["normalization"]),
            bodies=tuple(BodySpec.from_dict(b) for b in d["bodies"]),
        )


# ---------------------------------------------------------------------------
# shape deformation, posing, generation


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _apply_shape(template: HumanoidTemplate, shape_params: np.ndarray) -> np.ndarray:
    """Deform rest vertices by the per-part shape multipliers."""
    p = dict(zip(SHAPE_PARAM_NAMES, shape_params))
    v = template.mesh.vertices.copy()
    x, y, z = v[:, 0].copy(), v[:, 1].copy(), v[:, 2].copy()
    reg = template.regions
    out = v.copy()

    stack = (reg == _R_STACK)
    t_head = _smooth_step(z, _NECK_Z, 0.045)
    fx = (1 - t_head) * p["torso_width"] + t_head * p["head_size"]
    fy = (1 - t_head) * p["torso_depth"] + t_head * p["head_size"]
    out[stack, 0] = x[stack] * fx[stack]
    out[stack, 1] = y[stack] * fy[stack]
    out[stack, 2] = z[stack] + t_head[stack] * (p["head_size"] - 1.0) * (z[stack] - _NECK_Z)

    for side, region in ((+1, _R_ARM_R), (-1, _R_ARM_L)):
        m = reg == region
        out[m, 0] = side * (
            template.arm_attach_x * p["torso_width"]
            + (np.abs(x[m]) - template.arm_attach_x) * p["arm_length"]
        )
        out[m, 1] = y[m] * p["arm_radius"]
        out[m, 2] = template.shoulder_z + (z[m] - template.shoulder_z) * p["arm_radius"]

    for side, region in ((+1, _R_LEG_R), (-1, _R_LEG_L)):
        m = reg == region
        axis_x = side * _HIP_X
        out[m, 0] = axis_x * p["torso_width"] + (x[m] - axis_x) * p["leg_radius"]
        out[m, 1] = y[m] * p["leg_radius"]
        out[m, 2] = _PELVIS_Z - (_PELVIS_Z - z[m]) * p["leg_length"]

    crotch = reg == _R_CROTCH
    out[crotch, 1] = y[crotch] * p["leg_radius"]
    out[crotch, 2] = _PELVIS_Z - (_PELVIS_Z - z[crotch]) * p["leg_length"]

    out[:, 2] *= p["height"]
    return out


def _bone_transforms(template: HumanoidTemplate, shaped: np.ndarray, pose: np.ndarray):
    """Forward kinematics: one (R, t) affine per bone from the 12 joint angles."""
    a = dict(zip(POSE_PARAM_NAMES, pose))
    pivot = {name: shaped[ids].mean(axis=0) for name, ids in template.pivot_ids.items()}

    def about(R, p):
        return R, p - R @ p

    def compose(T1, T2):
        R1, t1 = T1
        R2, t2 = T2
        return R1 @ R2, R1 @ t2 + t1

    ident = (np.eye(3), np.zeros(3))
    T = [ident] * _NUM_BONES
    T[_B_CHEST] = about(_rot_x(a["waist_bend"]), pivot["waist"])
    T[_B_HEAD] = compose(T[_B_CHEST], about(_rot_x(a["neck_bend"]), pivot["neck"]))
    for side, s_name, uarm, farm in (
        ("r", +1, _B_UARM_R, _B_FARM_R),
        ("l", -1, _B_UARM_L, _B_FARM_L),
    ):
        swing = a[f"shoulder_swing_{side}"]
        drop = a[f"shoulder_drop_{side}"]
        elbow = a[f"elbow_bend_{side}"]
        R_sh = _rot_z(s_name * swing) @ _rot_y(s_name * drop)
        T[uarm] = compose(T[_B_CHEST], about(R_sh, pivot[f"shoulder_{side}"]))
        T[farm] = compose(T[uarm], about(_rot_z(s_name * elbow), pivot[f"elbow_{side}"]))
    for side, thigh, shin in (("r", _B_THIGH_R, _B_SHIN_R), ("l", _B_THIGH_L, _B_SHIN_L)):
        T[thigh] = about(_rot_x(a[f"hip_swing_{side}"]), pivot[f"hip_{side}"])
        T[shin] = compose(T[thigh], about(_rot_x(-a[f"knee_bend_{side}"]), pivot[f"knee_{side}"]))
    return T


def generate_body(template: HumanoidTemplate, spec: BodySpec) -> Mesh:
    """Shape then pose the template; connectivity is untouched.

    Pose parameters are consumed here and nowhere else in the pipeline.
    """
    shaped = _apply_shape(template, spec.shape_params)
    transforms = _bone_transforms(template, shaped, spec.pose_params)
    R = np.stack([t[0] for t in transforms])
    t = np.stack([t[1] for t in transforms])
    moved = np.einsum("bij,nj->bni", R, shaped) + t[:, None, :]
    posed = np.einsum("nb,bni->ni", template.skin_weights, moved)
    return template.mesh.with_vertices(posed)


def make_manifest(
    num_shapes: int,
    num_poses: int,
    seed: int,
    split_fraction: float = 0.25,
    resolution: int = 1,
) -> DatasetManifest:
    """Build a fully crossed shape x pose grid with a two-way held-out split.

    Split rule: the last max(1, floor(f*S/2)) shapes and the last
    max(1, floor(f*P/2)) poses are held out; a cell is validation iff its
    shape or pose is held out. The validation split therefore always contains
    entirely unseen shapes and unseen poses for seen shapes, and the training
    split stays a complete crossed subgrid.
    """
    if num_shapes < 2 or num_poses < 2:
        raise ValueError("need at least a 2 x 2 grid")
    if not (0.0 < split_fraction < 1.0):
        raise ValueError("split_fraction must be in (0, 1)")
    template = build_template(resolution)
    rng = np.random.default_rng(seed)

    lo, hi = _SHAPE_SAMPLE_RANGE
    shape_params = [rng.uniform(lo, hi, len(SHAPE_PARAM_NAMES)) for _ in range(num_shapes)]
    pose_params = [
        rng.uniform(POSE_RANGES[:, 0], POSE_RANGES[:, 1]) for _ in range(num_poses)
    ]

    held_shapes = set(range(num_shapes - max(1, int(split_fraction * num_shapes / 2)), num_shapes))
    held_poses = set(range(num_poses - max(1, int(split_fraction * num_poses / 2)), num_poses))

    bodies = []
    for s in range(num_shapes):
        for p in range(num_poses):
            split = "validation" if (s in held_shapes or p in held_poses) else "train"
            bodies.append(
                BodySpec(
                    shape_id=s,
                    pose_id=p,
                    shape_params=shape_params[s],
                    pose_params=pose_params[p],
                    split=split,
                )
            )

    train_vertices = [
        generate_body(template, b).vertices for b in bodies if b.split == "train"
    ]
    normalization = Normalization.fit(train_vertices)
    return DatasetManifest(
        template_id=template.template_id,
        resolution=resolution,
        seed=seed,
        num_shapes=num_shapes,
        num_poses=num_poses,
        split_fraction=split_fraction,
        normalization=normalization,
        bodies=tuple(bodies),
    )


def sample_pair_specs(manifest: DatasetManifest, rng: np.random.Generator):
    """Draw (posed, identity, ground_truth) cell specs from the training split.

    identity is drawn with a pose different from the posed cell's; the ground
    truth is the cell (identity's shape, posed cell's pose), which always
    exists because the training split is a complete crossed subgrid.
    """
    train = manifest.cells("train")
    if not train:
        raise ValueError("manifest has an empty training split")
    posed = train[int(rng.integers(len(train)))]
    others = [b for b in train if b.pose_id != posed.pose_id]
    identity = others[int(rng.integers(len(others)))] if others else posed
    ground_truth = manifest.cell(identity.shape_id, posed.pose_id)
    return posed, identity, ground_truth


def sample_pair(template: HumanoidTemplate, manifest: DatasetManifest, rng: np.random.Generator):
    """sample_pair_specs materialized as meshes."""
    specs = sample_pair_specs(manifest, rng)
    return tuple(generate_body(template, s) for s in specs)


def body_filename(spec: BodySpec) -> str:
    return f"shape{spec.shape_id}_pose{spec.pose_id}.obj"


def export_manifest_meshes(manifest: DatasetManifest, out_dir: str | os.PathLike) -> list[str]:
    """Write every grid cell as an OBJ next to the manifest; returns filenames."""
    template = build_template(manifest.resolution)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for spec in manifest.bodies:
        mesh = generate_body(template, spec)
        name = body_filename(spec)
        save_mesh(mesh, os.path.join(out_dir, name))
        written.append(name)
    return written
