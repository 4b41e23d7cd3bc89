"""Scan-to-map ICP odometry consuming sampled clouds as-is.

The recipe: constant-velocity prediction, sparse voxel map with a
per-voxel point cap, point-to-point Gauss-Newton with a Geman-McClure
kernel, and an adaptive correspondence threshold driven by the observed
deviation between prediction and result. No internal downsampling is
applied to the scan handed to register().
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation


class OdometryError(RuntimeError):
    pass


class DegenerateRegistrationError(OdometryError):
    pass


MIN_CORRESPONDENCES = 10


@dataclass(frozen=True)
class OdometryConfig:
    voxel_size: float = 1.0
    max_points_per_voxel: int = 20
    map_range: float = 100.0
    initial_threshold: float = 2.0
    min_threshold: float = 0.1
    kernel_scale: float = 1.0  # robust kernel scale = kernel_scale * current threshold
    max_iterations: int = 50
    convergence_eps: float = 1e-4

    def __post_init__(self):
        for name in (
            "voxel_size",
            "max_points_per_voxel",
            "map_range",
            "initial_threshold",
            "min_threshold",
            "kernel_scale",
            "max_iterations",
            "convergence_eps",
        ):
            if getattr(self, name) <= 0:
                raise OdometryError(f"{name} must be positive")
        if self.convergence_eps >= self.initial_threshold:
            raise OdometryError("convergence epsilon must be below the correspondence threshold")


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=np.float64
    )


def gn_jacobian(p: np.ndarray, transform: np.ndarray) -> np.ndarray:
    """3x6 Jacobian of the point-to-point residual r = T*p - q under a left
    perturbation [Exp(w), v]: columns are [-skew(T*p) | I]."""
    tp = transform[:3, :3] @ np.asarray(p, dtype=np.float64) + transform[:3, 3]
    jac = np.zeros((3, 6))
    jac[:, :3] = -skew(tp)
    jac[:, 3:] = np.eye(3)
    return jac


def apply_delta(transform: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Left-multiply by the perturbation [Exp(delta[:3]), delta[3:]]."""
    pert = np.eye(4)
    pert[:3, :3] = Rotation.from_rotvec(delta[:3]).as_matrix()
    pert[:3, 3] = delta[3:]
    return pert @ transform


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rot)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def transform_points(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ transform[:3, :3].T + transform[:3, 3]


def voxel_down_sample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keep the first point (in input order) of every occupied voxel."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        return points
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


class VoxelMap:
    """Sparse voxel-indexed store of map points with a per-voxel cap."""

    def __init__(self, voxel_size: float, max_points_per_voxel: int, map_range: float):
        self.voxel_size = float(voxel_size)
        self.cap = int(max_points_per_voxel)
        self.map_range = float(map_range)
        self.voxels: dict[tuple[int, int, int], np.ndarray] = {}
        self._snapshot: np.ndarray | None = None

    def __len__(self) -> int:
        return sum(v.shape[0] for v in self.voxels.values())

    def is_empty(self) -> bool:
        return not self.voxels

    def _key_array(self, points: np.ndarray) -> np.ndarray:
        return np.floor(points / self.voxel_size).astype(np.int64)

    def insert(self, points: np.ndarray, pose: np.ndarray) -> None:
        """Transform local points into the map frame, append up to the
        per-voxel cap, then evict everything beyond map_range of the
        current position."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        world = transform_points(np.asarray(pose, dtype=np.float64), points)
        keys = self._key_array(world)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        for u in range(uniq.shape[0]):
            key = tuple(int(k) for k in uniq[u])
            batch = world[inverse == u]
            existing = self.voxels.get(key)
            if existing is None:
                self.voxels[key] = batch[: self.cap].copy()
            elif existing.shape[0] < self.cap:
                room = self.cap - existing.shape[0]
                self.voxels[key] = np.vstack([existing, batch[:room]])
        self._evict_far(np.asarray(pose, dtype=np.float64)[:3, 3])
        self._snapshot = None

    def _evict_far(self, center: np.ndarray) -> None:
        dead = []
        for key, pts in self.voxels.items():
            near = np.linalg.norm(pts - center, axis=1) <= self.map_range
            if not near.all():
                kept = pts[near]
                if kept.shape[0]:
                    self.voxels[key] = kept
                else:
                    dead.append(key)
        for key in dead:
            del self.voxels[key]

    def point_array(self) -> np.ndarray:
        if self._snapshot is None:
            if self.voxels:
                self._snapshot = np.vstack(list(self.voxels.values()))
            else:
                self._snapshot = np.zeros((0, 3))
        return self._snapshot

    def nearest(self, query: np.ndarray, radius: float) -> np.ndarray | None:
        """Exact nearest stored point within the 3x3x3 voxel neighborhood
        of the query, or None if the closest candidate exceeds radius."""
        if radius <= 0:
            raise OdometryError("radius must be positive")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        kx, ky, kz = (int(k) for k in np.floor(query / self.voxel_size).astype(np.int64))
        cands = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    pts = self.voxels.get((kx + dx, ky + dy, kz + dz))
                    if pts is not None:
                        cands.append(pts)
        if not cands:
            return None
        pts = np.vstack(cands)
        d2 = ((pts - query) ** 2).sum(axis=1)
        best = int(np.argmin(d2))
        if d2[best] > radius * radius:
            return None
        return pts[best]


@dataclass
class RegistrationResult:
    pose: np.ndarray
    iterations: int
    correspondences: int
    converged: bool
    cost_history: list[tuple[float, float]] = field(default_factory=list)


def _robust_cost(e2: np.ndarray, k2: float) -> float:
    # Geman-McClure loss: rho(e) = (k^2 e^2 / 2) / (k^2 + e^2)
    return float((0.5 * k2 * e2 / (k2 + e2)).sum())


def register(
    scan: np.ndarray,
    vmap: VoxelMap,
    prediction: np.ndarray,
    cfg: OdometryConfig,
    threshold: float | None = None,
) -> RegistrationResult:
    """Align a scan against the map by robust point-to-point Gauss-Newton.

    Correspondences are exact nearest neighbors among map points within
    the (adaptive) threshold; the Geman-McClure scale equals that
    threshold. Iterates from the prediction until the parameter update
    norm drops below convergence_eps. Raises if the scan is empty or no
    iteration ever reaches MIN_CORRESPONDENCES matches.
    """
    scan = np.asarray(scan, dtype=np.float64).reshape(-1, 3)
    if scan.shape[0] == 0:
        raise OdometryError("cannot register an empty scan")
    if vmap.is_empty():
        raise DegenerateRegistrationError("map is empty")
    sigma = cfg.initial_threshold if threshold is None else float(threshold)
    kernel = cfg.kernel_scale * sigma
    k2 = kernel * kernel

    map_pts = vmap.point_array()
    tree = cKDTree(map_pts)
    transform = np.asarray(prediction, dtype=np.float64).copy()

    ever_enough = False
    last_corr = 0
    iterations = 0
    converged = False
    history: list[tuple[float, float]] = []

    for iterations in range(1, cfg.max_iterations + 1):
        world = transform_points(transform, scan)
        dist, nn = tree.query(world, distance_upper_bound=sigma)
        hit = np.isfinite(dist)
        n_corr = int(hit.sum())
        last_corr = n_corr
        if n_corr < MIN_CORRESPONDENCES:
            break
        ever_enough = True

        src = scan[hit]
        tgt = map_pts[nn[hit]]
        moved = world[hit]
        resid = moved - tgt
        e2 = (resid * resid).sum(axis=1)
        w = (k2 / (k2 + e2)) ** 2

        # J_i = [-skew(s_i) | I]; assemble the normal equations in blocks
        s = moved
        ws = w[:, None] * s
        h_rr = (w * (s * s).sum(axis=1)).sum() * np.eye(3) - ws.T @ s
        h_rt = skew((ws).sum(axis=0))  # sum_i w_i * skew(s_i)
        h_tt = w.sum() * np.eye(3)
        g_r = np.cross(s, resid)
        g_r = (w[:, None] * g_r).sum(axis=0)
        g_t = (w[:, None] * resid).sum(axis=0)

        hess = np.block([[h_rr, h_rt], [h_rt.T, h_tt]])
        grad = np.concatenate([g_r, g_t])
        try:
            delta = np.linalg.solve(hess + 1e-12 * np.eye(6), -grad)
        except np.linalg.LinAlgError:
            break

        cost_before = _robust_cost(e2, k2)
        step = 1.0
        accepted = False
        for _ in range(8):
            cand = apply_delta(transform, step * delta)
            cand_resid = transform_points(cand, src) - tgt
            cand_cost = _robust_cost((cand_resid * cand_resid).sum(axis=1), k2)
            if cand_cost <= cost_before + 1e-15:
                transform = cand
                transform[:3, :3] = orthonormalize(transform[:3, :3])
                history.append((cost_before, cand_cost))
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        if float(np.linalg.norm(step * delta)) < cfg.convergence_eps:
            converged = True
            break

    if not ever_enough:
        raise DegenerateRegistrationError(
            f"never reached {MIN_CORRESPONDENCES} correspondences "
            f"(last iteration had {last_corr})"
        )
    return RegistrationResult(transform, iterations, last_corr, converged, history)


def _deviation_error(deviation: np.ndarray, lever_arm: float) -> float:
    """Scalar prediction error: translation plus the rotation expressed as
    point displacement at lever_arm distance."""
    trace = np.clip(0.5 * (np.trace(deviation[:3, :3]) - 1.0), -1.0, 1.0)
    theta = float(np.arccos(trace))
    return float(np.linalg.norm(deviation[:3, 3])) + 2.0 * lever_arm * np.sin(theta / 2.0)


@dataclass
class FrameDiag:
    iterations: int = 0
    correspondences: int = 0
    threshold: float = 0.0
    degenerate_fallback: bool = False


class Odometry:
    """Stateful frame-by-frame odometry: predict, register, update map."""

    def __init__(self, cfg: OdometryConfig | None = None):
        self.cfg = cfg or OdometryConfig()
        self.vmap = VoxelMap(self.cfg.voxel_size, self.cfg.max_points_per_voxel, self.cfg.map_range)
        self.last_pose = np.eye(4)
        self.last_delta = np.eye(4)
        self._dev_sse = 0.0
        self._dev_n = 0

    def current_threshold(self) -> float:
        if self._dev_n == 0:
            return self.cfg.initial_threshold
        return max(self.cfg.min_threshold, float(np.sqrt(self._dev_sse / self._dev_n)))

    def process(
        self, source: np.ndarray, map_points: np.ndarray | None = None
    ) -> tuple[np.ndarray, FrameDiag]:
        """Register `source` (local frame) against the map and insert
        `map_points` (defaults to source) at the estimated pose. Returns
        the new pose. Degenerate registrations fall back to the
        constant-velocity prediction and are flagged."""
        source = np.asarray(source, dtype=np.float64).reshape(-1, 3)

        prediction = self.last_pose @ self.last_delta
        diag = FrameDiag(threshold=self.current_threshold())

        if self.vmap.is_empty():
            pose = prediction
        else:
            try:
                result = register(source, self.vmap, prediction, self.cfg, diag.threshold)
                pose = result.pose
                diag.iterations = result.iterations
                diag.correspondences = result.correspondences
            except DegenerateRegistrationError:
                pose = prediction
                diag.degenerate_fallback = True
            deviation = np.linalg.inv(prediction) @ pose
            err = _deviation_error(deviation, self.cfg.map_range)
            self._dev_sse += err * err
            self._dev_n += 1

        inserts = source if map_points is None else np.asarray(map_points, dtype=np.float64)
        if inserts.shape[0]:
            self.vmap.insert(inserts, pose)
        self.last_delta = np.linalg.inv(self.last_pose) @ pose
        self.last_pose = pose
        return pose, diag
