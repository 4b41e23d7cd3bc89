"""Synthetic lidar scenes with ground truth for desk-scale runs.

Scenes are axis-aligned boxes (solid obstacles and hollow shells enclosing
the sensor) with procedural textures that modulate the signal response.
Texture matters: on geometrically flat corridor walls it is the only
information that pins down longitudinal motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GrayImage, LidarFrame, Pose, cloud_from_range
from .evaluation import Trajectory
from .ingest import (
    DatasetManifest,
    FrameEntry,
    write_frame,
    write_manifest,
    write_trajectory,
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Texture:
    kind: str = "flat"  # flat | checker | noise
    cell: float = 0.5
    contrast: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    albedo: float = 0.8
    texture: Texture = Texture()
    hollow: bool = False  # hollow: the sensor is inside, rays hit inner faces

    def __post_init__(self):
        if not 0.0 <= self.albedo <= 1.0:
            raise SynthError(f"albedo must be in [0, 1], got {self.albedo}")
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise SynthError(f"degenerate box {self.lo}..{self.hi}")


@dataclass(frozen=True)
class Scene:
    boxes: tuple[Box, ...]
    signal_gain: float = 5e5


@dataclass(frozen=True)
class SensorModel:
    beams: int = 64
    columns: int = 1024
    fov_up_deg: float = 22.5
    fov_down_deg: float = -22.5
    max_range: float = 120.0

    def __post_init__(self):
        if self.beams < 1 or self.columns < 1 or self.max_range <= 0:
            raise SynthError("sensor dimensions and range must be positive")
        if self.fov_up_deg <= self.fov_down_deg:
            raise SynthError("vertical FOV is empty")

    def ray_directions(self) -> np.ndarray:
        """(beams*columns, 3) unit directions, row-major. Top row looks up;
        column sweep starts behind (+pi azimuth) and turns clockwise."""
        rows = np.arange(self.beams)
        cols = np.arange(self.columns)
        elev = np.radians(
            self.fov_up_deg
            - (rows + 0.5) * (self.fov_up_deg - self.fov_down_deg) / self.beams
        )
        azim = math.pi - (cols + 0.5) * (2.0 * math.pi / self.columns)
        ce, se = np.cos(elev), np.sin(elev)
        ca, sa = np.cos(azim), np.sin(azim)
        dirs = np.empty((self.beams, self.columns, 3))
        dirs[:, :, 0] = ce[:, None] * ca[None, :]
        dirs[:, :, 1] = ce[:, None] * sa[None, :]
        dirs[:, :, 2] = se[:, None]
        return dirs.reshape(-1, 3)


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int, seed: int) -> np.ndarray:
    """Deterministic per-texel value in [0, 1): splitmix-style mixing."""
    h = ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.int64).astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
    h ^= np.uint64((salt * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF)
    h ^= np.uint64((seed * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def texture_value(tex: Texture, u: np.ndarray, v: np.ndarray, salt: int) -> np.ndarray:
    if tex.kind == "flat":
        return np.ones_like(u)
    iu = np.floor(u / tex.cell).astype(np.int64)
    iv = np.floor(v / tex.cell).astype(np.int64)
    if tex.kind == "checker":
        parity = ((iu + iv) & 1).astype(np.float64)
        return 1.0 - tex.contrast * parity
    if tex.kind == "noise":
        return 1.0 - tex.contrast + tex.contrast * _hash01(iu, iv, salt, tex.seed)
    raise SynthError(f"unknown texture kind {tex.kind!r}")


_AXIS_UV = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


def _intersect_box(origin: np.ndarray, dirs: np.ndarray, box: Box):
    """Vectorized slab test. Returns (t, axis, side) per ray with t=inf on
    miss; side is 0 for the lo face, 1 for the hi face."""
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t_lo = (lo[None, :] - origin[None, :]) * inv
    t_hi = (hi[None, :] - origin[None, :]) * inv
    parallel = np.abs(dirs) < 1e-12
    inside = (origin[None, :] >= lo[None, :]) & (origin[None, :] <= hi[None, :])
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t_lo, t_hi))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t_lo, t_hi))

    if box.hollow:
        t = t_far.min(axis=1)
        axis = t_far.argmin(axis=1)
        ok = (t > 1e-9) & np.isfinite(t)
        side = (np.take_along_axis(dirs, axis[:, None], 1)[:, 0] > 0).astype(np.int64)
    else:
        entry = t_near.max(axis=1)
        exit_ = t_far.min(axis=1)
        axis = t_near.argmax(axis=1)
        ok = (entry > 1e-9) & (entry <= exit_) & np.isfinite(entry)
        t = entry
        side = (np.take_along_axis(dirs, axis[:, None], 1)[:, 0] < 0).astype(np.int64)
    t = np.where(ok, t, np.inf)
    return t, axis, side


def raycast_frame(
    scene: Scene,
    pose: Pose | np.ndarray,
    sensor: SensorModel,
    timestamp: float = 0.0,
) -> LidarFrame:
    """Render one frame: 16-bit range/signal images plus the cloud in the
    sensor frame, pixel-aligned row-major. Missed rays get range 0 and a
    zero point."""
    mat = pose.matrix() if isinstance(pose, Pose) else np.asarray(pose, dtype=np.float64)
    dirs_s = sensor.ray_directions()
    dirs_w = dirs_s @ mat[:3, :3].T
    origin = mat[:3, 3]
    n = dirs_s.shape[0]

    best_t = np.full(n, np.inf)
    best_box = np.full(n, -1, dtype=np.int64)
    best_axis = np.zeros(n, dtype=np.int64)
    best_side = np.zeros(n, dtype=np.int64)
    for b, box in enumerate(scene.boxes):
        t, axis, side = _intersect_box(origin, dirs_w, box)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_box[closer] = b
        best_axis[closer] = axis[closer]
        best_side[closer] = side[closer]

    hit = np.isfinite(best_t) & (best_t <= sensor.max_range)
    t = np.where(hit, best_t, 0.0)

    signal = np.zeros(n)
    hit_pts = origin[None, :] + dirs_w * t[:, None]
    for b, box in enumerate(scene.boxes):
        for axis in range(3):
            for side in (0, 1):
                sel = hit & (best_box == b) & (best_axis == axis) & (best_side == side)
                if not sel.any():
                    continue
                ua, va = _AXIS_UV[axis]
                salt = b * 6 + axis * 2 + side
                tex = texture_value(box.texture, hit_pts[sel, ua], hit_pts[sel, va], salt)
                cos_inc = np.abs(dirs_w[sel, axis])
                signal[sel] = box.albedo * tex * cos_inc / np.maximum(t[sel] ** 2, 1e-6)

    rng16 = np.zeros(n, dtype=np.uint16)
    rng16[hit] = np.clip(
        np.floor(t[hit] / sensor.max_range * 65535.0 + 0.5), 1, 65535
    ).astype(np.uint16)
    sig16 = np.clip(np.floor(signal * scene.signal_gain + 0.5), 0, 65535).astype(np.uint16)

    cloud_pts = np.where(hit[:, None], dirs_s * t[:, None], 0.0).astype(np.float32)
    shape = (sensor.beams, sensor.columns)
    return LidarFrame(
        timestamp=timestamp,
        rng=GrayImage(rng16.reshape(shape)),
        sig=GrayImage(sig16.reshape(shape)),
        cloud=cloud_from_range(rng16, cloud_pts),
    )


# --- scenarios --------------------------------------------------------------

SCENARIOS = ("room", "corridor", "open")
DEFAULT_STEPS = {"room": 0.08, "corridor": 0.1, "open": 0.5}


def room_scene(seed: int = 0) -> Scene:
    walls = Texture("noise", cell=0.4, contrast=0.85, seed=seed)
    return Scene(
        boxes=(
            Box((-6.0, -5.0, -1.6), (6.0, 5.0, 2.4), 0.85, walls, hollow=True),
            Box((2.5, 1.0, -1.6), (3.5, 2.0, 0.9), 0.6, Texture("checker", 0.2, 0.9, seed)),
            Box((-4.5, -3.5, -1.6), (-3.0, -2.0, 0.4), 0.75, Texture("noise", 0.25, 0.9, seed + 1)),
            Box((1.0, -3.8, -1.6), (2.2, -2.6, 1.4), 0.7, Texture("checker", 0.3, 0.85, seed)),
            Box((-3.8, 2.2, -1.6), (-2.6, 3.4, 0.0), 0.8, Texture("noise", 0.3, 0.8, seed + 2)),
        )
    )


def corridor_scene(seed: int = 0) -> Scene:
    """Two long textured walls plus floor and ceiling, open at both ends:
    geometry is invariant along the corridor axis."""
    wall_tex = Texture("noise", cell=0.35, contrast=0.9, seed=seed)
    deck_tex = Texture("noise", cell=0.5, contrast=0.7, seed=seed + 1)
    half_len = 150.0
    return Scene(
        boxes=(
            Box((-2.2, -half_len, -1.8), (-2.0, half_len, 2.6), 0.85, wall_tex),
            Box((2.0, -half_len, -1.8), (2.2, half_len, 2.6), 0.85, wall_tex),
            Box((-2.2, -half_len, -2.0), (2.2, half_len, -1.5), 0.7, deck_tex),
            Box((-2.2, -half_len, 2.5), (2.2, half_len, 3.0), 0.7, deck_tex),
        )
    )


def open_scene(seed: int = 0) -> Scene:
    rng = np.random.default_rng(seed)
    boxes = [
        Box((-80.0, -80.0, -2.2), (80.0, 80.0, -1.8), 0.6, Texture("noise", 1.0, 0.7, seed))
    ]
    while len(boxes) < 15:
        cx = float(rng.uniform(-10.0, 55.0))
        cy = float(rng.uniform(-45.0, 45.0))
        if abs(cy) < 3.0:  # keep the travel lane clear
            continue
        sx = float(rng.uniform(0.4, 2.5))
        sy = float(rng.uniform(0.4, 2.5))
        h = float(rng.uniform(1.0, 4.0))
        kind = "checker" if len(boxes) % 2 else "noise"
        tex = Texture(kind, cell=float(rng.uniform(0.2, 0.5)), contrast=0.85, seed=seed + len(boxes))
        boxes.append(Box((cx, cy, -1.8), (cx + sx, cy + sy, -1.8 + h), 0.75, tex))
    return Scene(boxes=tuple(boxes))


def scenario_scene(name: str, seed: int = 0) -> Scene:
    if name == "room":
        return room_scene(seed)
    if name == "corridor":
        return corridor_scene(seed)
    if name == "open":
        return open_scene(seed)
    raise SynthError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


def scenario_trajectory(name: str, n_frames: int, step: float, dt: float = 0.1) -> Trajectory:
    """Ground-truth poses starting at the identity."""
    if n_frames < 2:
        raise SynthError("need at least 2 frames")
    poses = []
    for i in range(n_frames):
        t = i * dt
        if name == "room":
            radius = 1.5
            theta = i * step / radius
            pos = np.array([radius * math.sin(theta), radius * (1.0 - math.cos(theta)), 0.0])
            c, s = math.cos(theta), math.sin(theta)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            mat = np.eye(4)
            mat[:3, :3] = rot
            mat[:3, 3] = pos
            poses.append(Pose.from_matrix(mat, t))
        elif name == "corridor":
            poses.append(Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.array([0.0, i * step, 0.0]), t))
        elif name == "open":
            poses.append(Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.array([i * step, 0.0, 0.0]), t))
        else:
            raise SynthError(f"unknown scenario {name!r}")
    return Trajectory(tuple(poses))


def make_dataset(
    scenario: str,
    n_frames: int,
    out_dir: str | Path,
    step: float | None = None,
    seed: int = 0,
    sensor: SensorModel | None = None,
) -> DatasetManifest:
    """Render a scenario to the on-disk dataset layout with TUM ground truth."""
    sensor = sensor or SensorModel()
    scene = scenario_scene(scenario, seed)
    step = DEFAULT_STEPS[scenario] if step is None else step
    trajectory = scenario_trajectory(scenario, n_frames, step)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, pose in enumerate(trajectory):
        frame = raycast_frame(scene, pose, sensor, timestamp=pose.timestamp)
        rng_name, sig_name, cloud_name = write_frame(
            out, i, frame.rng.data, frame.sig.data, frame.cloud.points
        )
        entries.append(FrameEntry(i, pose.timestamp, rng_name, sig_name, cloud_name))

    write_trajectory(trajectory, out / "groundtruth.tum")
    manifest = DatasetManifest(
        root=out,
        sensor=f"synthetic-{sensor.beams}x{sensor.columns}",
        width=sensor.columns,
        height=sensor.beams,
        frames=tuple(entries),
        ground_truth="groundtruth.tum",
    )
    write_manifest(manifest)
    return manifest
