"""Trajectory error metrics: timestamp association, rigid alignment, and
absolute pose error in the (translation mean/rmse, rotation mean deg) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Pose


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        ts = [p.timestamp for p in poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise EvaluationError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses])

    def positions(self) -> np.ndarray:
        return np.array([p.trans for p in self.poses])

    def rotations(self) -> np.ndarray:
        return np.array([p.rotation() for p in self.poses])


def associate(
    est: Trajectory, gt: Trajectory, max_dt: float = 0.02
) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp pairing within max_dt; every pose is used
    at most once on each side."""
    if len(est) == 0 or len(gt) == 0:
        raise EvaluationError("cannot associate an empty trajectory")
    te, tg = est.timestamps(), gt.timestamps()
    candidates = [
        (abs(a - b), i, j)
        for i, a in enumerate(te)
        for j, b in enumerate(tg)
        if abs(a - b) <= max_dt
    ]
    candidates.sort()
    used_e: set[int] = set()
    used_g: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for _, i, j in candidates:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        pairs.append((i, j))
    if not pairs:
        raise EvaluationError(f"no timestamp pairs within {max_dt}s")
    pairs.sort()
    return pairs


def umeyama_align(est_pos: np.ndarray, gt_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form least-squares rigid alignment (no scale) of est onto gt.

    Returns (R, t) minimizing sum ||R e_i + t - g_i||^2, with the SVD sign
    corrected so the result is a proper rotation.
    """
    est_pos = np.asarray(est_pos, dtype=np.float64).reshape(-1, 3)
    gt_pos = np.asarray(gt_pos, dtype=np.float64).reshape(-1, 3)
    if est_pos.shape != gt_pos.shape or est_pos.shape[0] < 3:
        raise EvaluationError("alignment needs >= 3 matched positions")
    mu_e = est_pos.mean(axis=0)
    mu_g = gt_pos.mean(axis=0)
    cov = (gt_pos - mu_g).T @ (est_pos - mu_e)
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= max(s[0], 1.0) * 1e-12:
        raise EvaluationError("degenerate geometry: positions are collinear or coincident")
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    trans = mu_g - rot @ mu_e
    return rot, trans


@dataclass
class ErrorReport:
    trans_mean: float
    trans_rmse: float
    rot_mean_deg: float
    rot_rmse_deg: float
    trans_errors: np.ndarray
    rot_errors_deg: np.ndarray
    n_pairs: int
    point_counts: list[int] | None = None

    def __post_init__(self):
        # power-mean inequality; guards against metric bookkeeping bugs
        if self.trans_rmse + 1e-12 < self.trans_mean:
            raise EvaluationError("translation rmse below mean")
        if self.rot_rmse_deg + 1e-12 < self.rot_mean_deg:
            raise EvaluationError("rotation rmse below mean")

    def summary_cell(self) -> str:
        return f"({self.trans_mean:.3f}/{self.trans_rmse:.3f}, {self.rot_mean_deg:.3f})"


def rotation_angle_deg(rot: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees.

    atan2 of (sin, cos) extracted from the matrix: equal to
    arccos((trace-1)/2) but well-conditioned near zero.
    """
    sin_vec = np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    s = 0.5 * float(np.linalg.norm(sin_vec))
    c = 0.5 * (float(np.trace(rot)) - 1.0)
    return float(np.degrees(np.arctan2(s, c)))


def ape(
    est: Trajectory,
    gt: Trajectory,
    align: bool = True,
    max_dt: float = 0.02,
) -> ErrorReport:
    """Absolute pose error after timestamp association.

    With align=True the estimated trajectory is rigidly aligned onto the
    ground truth first (rotations are rotated along). Translation error is
    the Euclidean distance per pair; rotation error is the geodesic angle
    between paired orientations.
    """
    pairs = associate(est, gt, max_dt)
    e_idx = [i for i, _ in pairs]
    g_idx = [j for _, j in pairs]
    e_pos = est.positions()[e_idx]
    g_pos = gt.positions()[g_idx]
    e_rot = est.rotations()[e_idx]
    g_rot = gt.rotations()[g_idx]

    if align:
        rot, trans = umeyama_align(e_pos, g_pos)
        e_pos = e_pos @ rot.T + trans
        e_rot = rot[None] @ e_rot

    trans_errors = np.linalg.norm(e_pos - g_pos, axis=1)
    rot_errors = np.array(
        [rotation_angle_deg(rg.T @ re) for rg, re in zip(g_rot, e_rot)]
    )
    return ErrorReport(
        trans_mean=float(trans_errors.mean()),
        trans_rmse=float(np.sqrt((trans_errors**2).mean())),
        rot_mean_deg=float(rot_errors.mean()),
        rot_rmse_deg=float(np.sqrt((rot_errors**2).mean())),
        trans_errors=trans_errors,
        rot_errors_deg=rot_errors,
        n_pairs=len(pairs),
    )
