import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lidarkp.core import Pose
from lidarkp.evaluation import (
    ErrorReport,
    EvaluationError,
    Trajectory,
    ape,
    associate,
    rotation_angle_deg,
    umeyama_align,
)


def circle_trajectory(n=20, radius=2.0, dt=0.1, z_wobble=0.0):
    poses = []
    for i in range(n):
        theta = 2 * np.pi * i / n
        mat = np.eye(4)
        mat[:3, :3] = Rotation.from_euler("z", theta).as_matrix()
        mat[:3, 3] = [radius * np.cos(theta), radius * np.sin(theta), z_wobble * np.sin(3 * theta)]
        poses.append(Pose.from_matrix(mat, i * dt))
    return Trajectory(tuple(poses))


def transformed(traj: Trajectory, g: np.ndarray) -> Trajectory:
    poses = []
    for p in traj:
        poses.append(Pose.from_matrix(g @ p.matrix(), p.timestamp))
    return Trajectory(tuple(poses))


def random_rigid(rng, max_trans=3.0):
    g = np.eye(4)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    g[:3, :3] = Rotation.from_rotvec(axis * rng.uniform(0, np.pi)).as_matrix()
    g[:3, 3] = rng.uniform(-max_trans, max_trans, size=3)
    return g


class TestTrajectory:
    def test_timestamps_must_increase(self):
        p0 = Pose.identity(0.0)
        p1 = Pose.identity(0.0)
        with pytest.raises(EvaluationError):
            Trajectory((p0, p1))


class TestAssociate:
    def test_identical_timestamps_full_pairing(self):
        t = circle_trajectory(15)
        pairs = associate(t, t, 0.02)
        assert pairs == [(i, i) for i in range(15)]

    def test_offset_beyond_max_dt_errors(self):
        a = circle_trajectory(10, dt=0.1)
        shifted = Trajectory(
            tuple(Pose(p.quat, p.trans, p.timestamp + 0.05) for p in a)
        )
        with pytest.raises(EvaluationError):
            associate(a, shifted, max_dt=0.02)

    def test_jittered_timestamps_pair_fully(self, rng):
        a = circle_trajectory(30, dt=0.1)
        jitter = rng.uniform(-0.005, 0.005, size=30)
        b = Trajectory(
            tuple(Pose(p.quat, p.trans, p.timestamp + j) for p, j in zip(a, jitter))
        )
        pairs = associate(a, b, max_dt=0.02)
        assert len(pairs) == 30
        assert pairs == [(i, i) for i in range(30)]

    def test_gt_used_at_most_once(self):
        est = circle_trajectory(10, dt=0.1)
        gt = Trajectory(tuple(list(circle_trajectory(5, dt=0.2))))
        pairs = associate(est, gt, max_dt=0.06)
        assert len({j for _, j in pairs}) == len(pairs)


class TestUmeyama:
    def test_identity_for_equal_sets(self):
        pos = circle_trajectory(12).positions()
        rot, trans = umeyama_align(pos, pos)
        assert np.allclose(rot, np.eye(3), atol=1e-12)
        assert np.allclose(trans, 0.0, atol=1e-12)

    def test_recovers_constructed_transform(self, rng):
        pos = circle_trajectory(25, z_wobble=0.4).positions()
        for _ in range(10):
            g = random_rigid(rng)
            moved = pos @ g[:3, :3].T + g[:3, 3]
            rot, trans = umeyama_align(pos, moved)
            assert np.abs(rot - g[:3, :3]).max() < 1e-9
            assert np.abs(trans - g[:3, 3]).max() < 1e-9

    def test_mirrored_input_still_proper_rotation(self):
        pos = circle_trajectory(25, z_wobble=0.4).positions()
        mirrored = pos * np.array([1.0, 1.0, -1.0])
        rot, _ = umeyama_align(pos, mirrored)
        assert abs(np.linalg.det(rot) - 1.0) < 1e-9

    def test_collinear_is_degenerate(self):
        pos = np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], axis=1)
        with pytest.raises(EvaluationError):
            umeyama_align(pos, pos)

    def test_needs_three_points(self):
        with pytest.raises(EvaluationError):
            umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))


class TestApe:
    def test_self_comparison_is_zero(self):
        t = circle_trajectory(20, z_wobble=0.3)
        rep = ape(t, t, align=False)
        assert rep.trans_mean == 0.0
        assert rep.trans_rmse == 0.0
        assert rep.rot_mean_deg == 0.0
        # the aligned path runs through an SVD: zero up to machine noise
        rep = ape(t, t, align=True)
        assert rep.trans_rmse < 1e-12
        assert rep.rot_mean_deg < 1e-12

    def test_constant_offset_unaligned(self):
        gt = circle_trajectory(20)
        est = Trajectory(
            tuple(Pose(p.quat, p.trans + np.array([0.05, 0.0, 0.0]), p.timestamp) for p in gt)
        )
        rep = ape(est, gt, align=False)
        assert abs(rep.trans_mean - 0.05) < 1e-12
        assert abs(rep.trans_rmse - 0.05) < 1e-12
        assert rep.rot_mean_deg < 1e-9

    def test_alignment_removes_rigid_offset(self, rng):
        gt = circle_trajectory(25, z_wobble=0.4)
        est = transformed(gt, random_rigid(rng))
        rep = ape(est, gt, align=True)
        assert rep.trans_rmse < 1e-9
        assert rep.rot_mean_deg < 1e-7

    def test_align_invariant_under_rigid_pretransform(self, rng):
        gt = circle_trajectory(25, z_wobble=0.4)
        est = Trajectory(
            tuple(
                Pose.from_matrix(
                    p.matrix()
                    @ np.diag([1.0, 1.0, 1.0, 1.0]),
                    p.timestamp,
                )
                for p in gt
            )
        )
        # perturb the estimate a little so errors are nonzero
        rng2 = np.random.default_rng(5)
        noisy = []
        for p in est:
            mat = p.matrix()
            mat[:3, 3] += rng2.normal(scale=0.02, size=3)
            noisy.append(Pose.from_matrix(mat, p.timestamp))
        est = Trajectory(tuple(noisy))

        base = ape(est, gt, align=True)
        moved = ape(transformed(est, random_rigid(rng)), gt, align=True)
        assert abs(base.trans_rmse - moved.trans_rmse) < 1e-9
        assert abs(base.rot_mean_deg - moved.rot_mean_deg) < 1e-7

    def test_rmse_at_least_mean_on_random_series(self, rng):
        gt = circle_trajectory(15, z_wobble=0.4)
        for _ in range(100):
            noisy = []
            for p in gt:
                mat = p.matrix()
                mat[:3, 3] += rng.normal(scale=0.1, size=3)
                mat[:3, :3] = mat[:3, :3] @ Rotation.from_rotvec(
                    rng.normal(scale=0.02, size=3)
                ).as_matrix()
                noisy.append(Pose.from_matrix(mat, p.timestamp))
            rep = ape(Trajectory(tuple(noisy)), gt, align=False)
            assert rep.trans_rmse >= rep.trans_mean
            assert rep.rot_rmse_deg >= rep.rot_mean_deg

    def test_summary_cell_format(self):
        rep = ErrorReport(
            trans_mean=0.045,
            trans_rmse=0.050,
            rot_mean_deg=0.721,
            rot_rmse_deg=0.9,
            trans_errors=np.array([0.045]),
            rot_errors_deg=np.array([0.721]),
            n_pairs=1,
        )
        assert rep.summary_cell() == "(0.045/0.050, 0.721)"

    def test_rotation_angle(self):
        assert rotation_angle_deg(np.eye(3)) == 0.0
        r = Rotation.from_euler("y", 37.5, degrees=True).as_matrix()
        assert abs(rotation_angle_deg(r) - 37.5) < 1e-9
