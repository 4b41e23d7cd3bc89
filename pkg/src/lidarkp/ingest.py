"""On-disk dataset layout.

A dataset directory holds `manifest.json`, per-frame images
(`NNNNNN_rng.png`, `NNNNNN_sig.png`, 16-bit grayscale), per-frame clouds
(`NNNNNN_cloud.ply`, binary little-endian float32 xyz, H*W vertices in
row-major pixel order), and optionally a TUM ground-truth trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GrayImage, LidarFrame, Pose, cloud_from_range
from .evaluation import Trajectory
from .pngio import PngError, read_png, write_png


class IngestError(Exception):
    pass


class MissingFileError(IngestError):
    pass


class FrameConsistencyError(IngestError):
    pass


class CorruptFrameError(IngestError):
    pass


class TrajectoryFormatError(IngestError):
    pass


MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class FrameEntry:
    index: int
    timestamp: float
    rng: str
    sig: str
    cloud: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    sensor: str
    width: int
    height: int
    frames: tuple[FrameEntry, ...]
    ground_truth: str | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def ground_truth_path(self) -> Path | None:
        return self.root / self.ground_truth if self.ground_truth else None


def load_manifest(dataset_dir: str | Path) -> DatasetManifest:
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise MissingFileError(f"no {MANIFEST_NAME} in {root}")
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptFrameError(f"cannot parse {path}: {exc}") from exc
    try:
        frames = tuple(
            FrameEntry(f["index"], float(f["timestamp"]), f["rng"], f["sig"], f["cloud"])
            for f in payload["frames"]
        )
        manifest = DatasetManifest(
            root=root,
            sensor=payload.get("sensor", "unknown"),
            width=int(payload["width"]),
            height=int(payload["height"]),
            frames=frames,
            ground_truth=payload.get("ground_truth"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFrameError(f"malformed manifest {path}: {exc}") from exc
    for entry in manifest.frames:
        for name in (entry.rng, entry.sig, entry.cloud):
            if not (root / name).is_file():
                raise MissingFileError(f"manifest references missing file {name}")
    gt = manifest.ground_truth_path()
    if gt is not None and not gt.is_file():
        raise MissingFileError(f"manifest references missing ground truth {gt.name}")
    return manifest


def write_manifest(manifest: DatasetManifest) -> None:
    payload = {
        "sensor": manifest.sensor,
        "width": manifest.width,
        "height": manifest.height,
        "frame_count": manifest.frame_count,
        "ground_truth": manifest.ground_truth,
        "frames": [
            {
                "index": e.index,
                "timestamp": e.timestamp,
                "rng": e.rng,
                "sig": e.sig,
                "cloud": e.cloud,
            }
            for e in manifest.frames
        ],
    }
    (manifest.root / MANIFEST_NAME).write_text(json.dumps(payload, indent=2) + "\n")


# --- PLY ------------------------------------------------------------------

def write_ply(path: str | Path, points: np.ndarray) -> None:
    points = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {points.shape[0]}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(points.tobytes())


def read_ply(path: str | Path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise MissingFileError(f"cannot read {path}: {exc}") from exc
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise CorruptFrameError(f"{path} is not a PLY file")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    n_vertex = None
    props: list[str] = []
    fmt_ok = False
    for line in header:
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            fmt_ok = True
        elif parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts and parts[0] == "property":
            props.append(parts[-1])
    if not fmt_ok:
        raise CorruptFrameError(f"{path}: only binary_little_endian PLY is supported")
    if n_vertex is None or props[:3] != ["x", "y", "z"] or len(props) != 3:
        raise CorruptFrameError(f"{path}: expected exactly float x/y/z vertex properties")
    body = blob[end + len(b"end_header\n"):]
    expected = n_vertex * 12
    if len(body) < expected:
        raise CorruptFrameError(f"{path}: truncated payload ({len(body)} < {expected} bytes)")
    return np.frombuffer(body[:expected], dtype="<f4").reshape(-1, 3).copy()


# --- frames ---------------------------------------------------------------

def frame_file_names(index: int) -> tuple[str, str, str]:
    return (f"{index:06d}_rng.png", f"{index:06d}_sig.png", f"{index:06d}_cloud.ply")


def write_frame(
    dataset_dir: str | Path,
    index: int,
    rng_raw: np.ndarray,
    sig_raw: np.ndarray,
    points: np.ndarray,
) -> tuple[str, str, str]:
    """Write one frame's raw 16-bit images and cloud; returns file names."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng_name, sig_name, cloud_name = frame_file_names(index)
    write_png(root / rng_name, np.asarray(rng_raw, dtype=np.uint16))
    write_png(root / sig_name, np.asarray(sig_raw, dtype=np.uint16))
    write_ply(root / cloud_name, points)
    return rng_name, sig_name, cloud_name


def load_frame(dataset_dir: str | Path | DatasetManifest, index: int) -> LidarFrame:
    manifest = (
        dataset_dir if isinstance(dataset_dir, DatasetManifest) else load_manifest(dataset_dir)
    )
    if not 0 <= index < manifest.frame_count:
        raise MissingFileError(f"frame {index} not in dataset (has {manifest.frame_count})")
    entry = manifest.frames[index]
    root = manifest.root
    try:
        rng_raw = read_png(root / entry.rng)
        sig_raw = read_png(root / entry.sig)
    except FileNotFoundError as exc:
        raise MissingFileError(str(exc)) from exc
    except PngError as exc:
        raise CorruptFrameError(str(exc)) from exc
    points = read_ply(root / entry.cloud)

    shape = (manifest.height, manifest.width)
    if rng_raw.shape != shape or sig_raw.shape != shape:
        raise FrameConsistencyError(
            f"frame {index}: image shapes {rng_raw.shape}/{sig_raw.shape} != manifest {shape}"
        )
    if points.shape[0] != manifest.height * manifest.width:
        raise FrameConsistencyError(
            f"frame {index}: cloud has {points.shape[0]} points, "
            f"expected {manifest.height * manifest.width}"
        )
    cloud = cloud_from_range(rng_raw, points)
    if np.any(points[~cloud.valid] != 0):
        raise FrameConsistencyError(f"frame {index}: zero-range pixels carry nonzero points")
    return LidarFrame(
        timestamp=entry.timestamp,
        rng=GrayImage(rng_raw.astype(np.uint16)),
        sig=GrayImage(sig_raw.astype(np.uint16)),
        cloud=cloud,
    )


# --- TUM trajectories ------------------------------------------------------

def load_trajectory(path: str | Path) -> Trajectory:
    """Parse a TUM trajectory: `t tx ty tz qx qy qz qw` per line.

    Quaternions are renormalized when measurably off unit length and
    rejected beyond 1e-6. Timestamps must be strictly increasing.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"trajectory file {path} does not exist")
    poses: list[Pose] = []
    last_t = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise TrajectoryFormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise TrajectoryFormatError(f"{path}:{lineno}: non-numeric field") from exc
        t, tx, ty, tz, qx, qy, qz, qw = vals
        if last_t is not None and t <= last_t:
            raise TrajectoryFormatError(
                f"{path}:{lineno}: timestamp {t} not greater than previous {last_t}"
            )
        last_t = t
        q = np.array([qx, qy, qz, qw])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise TrajectoryFormatError(f"{path}:{lineno}: quaternion norm {norm} off unit")
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        poses.append(Pose(q, np.array([tx, ty, tz]), t))
    if not poses:
        raise TrajectoryFormatError(f"{path}: no poses")
    return Trajectory(tuple(poses))


def write_trajectory(trajectory: Trajectory, path: str | Path) -> None:
    """Write TUM rows with shortest round-trip float formatting, so that a
    load/save cycle is byte-stable."""
    lines = []
    for p in trajectory:
        fields = [p.timestamp, *p.trans, *p.quat]
        lines.append(" ".join(repr(float(v)) for v in fields))
    Path(path).write_text("\n".join(lines) + "\n")


def inspect_summary(dataset_dir: str | Path) -> str:
    m = load_manifest(dataset_dir)
    lines = [
        f"dataset: {m.root}",
        f"sensor: {m.sensor}",
        f"frames: {m.frame_count}",
        f"image size: {m.width}x{m.height}",
        f"points per frame: {m.width * m.height}",
        f"ground truth: {m.ground_truth or 'none'}",
    ]
    if m.frames:
        t0, t1 = m.frames[0].timestamp, m.frames[-1].timestamp
        lines.append(f"time span: {t0:.3f}s .. {t1:.3f}s")
    return "\n".join(lines)
