"""Demonstration ingest: keypoint files, velocity estimate, adaptive frame grids."""
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import (CoordinateOutOfRange, DimensionMismatch, InputError, InsufficientData,
                     InvalidInput, NoTrackableKeypoints, NotPerfectSquare, SpanExceedsVideo)

CONFIDENCE_FLOOR = 0.3
MAX_GRID_FRAMES = 64
FEET = ("front-left-foot", "front-right-foot", "rear-left-foot", "rear-right-foot")
REQUIRED_JOINTS = frozenset(FEET + ("base",))

QUADRUPED_EDGES = (
    ("base", "front-hip"), ("base", "rear-hip"),
    ("front-hip", "front-left-knee"), ("front-left-knee", "front-left-foot"),
    ("front-hip", "front-right-knee"), ("front-right-knee", "front-right-foot"),
    ("rear-hip", "rear-left-knee"), ("rear-left-knee", "rear-left-foot"),
    ("rear-hip", "rear-right-knee"), ("rear-right-knee", "rear-right-foot"),
)

LEG_COLORS = {"left": (214, 39, 40), "right": (31, 119, 180)}


@dataclass
class KeypointTrajectory:
    """Time-indexed named 2-D keypoints in normalised image coordinates.

    ``xy`` has shape (frames, joints, 2) and ``conf`` (frames, joints); a joint
    absent from a frame has confidence 0 and NaN coordinates.
    """
    skeleton: tuple
    times: np.ndarray
    xy: np.ndarray
    conf: np.ndarray
    fps: float = None

    def __post_init__(self):
        self.skeleton = tuple(self.skeleton)
        self.times = np.asarray(self.times, dtype=float)
        self.xy = np.asarray(self.xy, dtype=float)
        self.conf = np.asarray(self.conf, dtype=float)
        missing = REQUIRED_JOINTS - set(self.skeleton)
        if missing:
            raise InputError(f"skeleton lacks required joints: {sorted(missing)}")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise InputError("keypoint timestamps must be strictly increasing")
        if self.xy.shape != (len(self.times), len(self.skeleton), 2):
            raise InputError(f"xy shape {self.xy.shape} does not match frames x joints")

    def __len__(self):
        return len(self.times)

    def index(self, name):
        return self.skeleton.index(name)

    def points(self, frame):
        """One frame as {name: (x, y, conf)} with absent joints dropped."""
        out = {}
        for col, name in enumerate(self.skeleton):
            if self.conf[frame, col] > 0 and np.all(np.isfinite(self.xy[frame, col])):
                out[name] = (float(self.xy[frame, col, 0]), float(self.xy[frame, col, 1]), float(self.conf[frame, col]))
        return out

    @property
    def duration(self):
        if self.fps:
            return len(self.times) / self.fps
        if len(self.times) < 2:
            return 0.0
        return float(self.times[-1] - self.times[0] + np.median(np.diff(self.times)))

    def subset(self, names):
        idx = [self.index(name) for name in names]
        return self.xy[:, idx], self.conf[:, idx]

    def to_json(self):
        frames = []
        for idx, stamp in enumerate(self.times):
            pts = {name: list(point) for name, point in self.points(idx).items()}
            frames.append({"t": float(stamp), "points": pts})
        doc = {"skeleton": list(self.skeleton), "frames": frames}
        if self.fps:
            doc["fps"] = self.fps
        return doc

    @classmethod
    def from_json(cls, doc):
        try:
            skeleton = tuple(doc["skeleton"])
            frames = doc["frames"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"keypoint document missing field: {exc}") from None
        names = {joint: col for col, joint in enumerate(skeleton)}
        xy = np.full((len(frames), len(skeleton), 2), np.nan)
        conf = np.zeros((len(frames), len(skeleton)))
        times = []
        for row, fr in enumerate(frames):
            times.append(float(fr["t"]))
            for name, value in fr.get("points", {}).items():
                if name not in names:
                    raise InputError(f"frame {row}: joint {name!r} not in skeleton")
                px, py, score = (float(item) for item in value)
                if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0 and 0.0 <= score <= 1.0):
                    raise InputError(f"frame {row}: joint {name!r} outside [0,1]: {value}")
                xy[row, names[name]] = (px, py)
                conf[row, names[name]] = score
        return cls(skeleton, np.array(times), xy, conf, doc.get("fps"))

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_json(doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))


def estimate_velocity(traj, pixels_to_meters, conf_floor=CONFIDENCE_FLOOR):
    """Mean keypoint speed in m/s, confidence-weighted over consecutive frame pairs."""
    if len(traj) < 2:
        raise InsufficientData("velocity estimate needs at least two frames")
    if not pixels_to_meters > 0:
        raise InvalidInput("pixels_to_meters must be positive")
    speeds = []
    for idx in range(len(traj) - 1):
        conf = np.minimum(traj.conf[idx], traj.conf[idx + 1])
        ok = (traj.conf[idx] >= conf_floor) & (traj.conf[idx + 1] >= conf_floor)
        if not ok.any():
            continue
        disp = np.linalg.norm(traj.xy[idx + 1, ok] - traj.xy[idx, ok], axis=-1)
        dt = traj.times[idx + 1] - traj.times[idx]
        speeds.append(np.average(disp, weights=conf[ok]) * pixels_to_meters / dt)
    if not speeds:
        raise NoTrackableKeypoints(f"no keypoint pair above confidence {conf_floor}")
    return float(np.mean(speeds))


def compute_grid_dims(duration, speed):
    """Frame count (a perfect square), sampling interval and grid side for a clip.

    ``duration`` is the clip length in seconds and ``speed`` the estimated
    velocity in m/s: faster motion gets fewer, denser-sampled frames.
    """
    try:
        duration, speed = float(duration), float(speed)
    except (TypeError, ValueError):
        raise InvalidInput(f"non-numeric grid inputs duration={duration!r}, speed={speed!r}") from None
    if not (math.isfinite(duration) and math.isfinite(speed)) or duration <= 0 or speed <= 0:
        raise InvalidInput(f"grid inputs must be finite and positive: duration={duration}, speed={speed}")
    raw = min(max(round(duration / speed), 1), MAX_GRID_FRAMES)
    side = math.isqrt(raw)
    count = side * side
    return count, duration / count, side


@dataclass
class Frame:
    image: np.ndarray
    time: float = 0.0
    index: int = 0


@dataclass
class VideoClip:
    frames: list
    fps: float

    @property
    def duration(self):
        return len(self.frames) / self.fps

    def __len__(self):
        return len(self.frames)


def sample_frames(video, count, interval, eps=1e-9):
    """``count`` frames at timestamps k * interval, nearest-frame rounding with ties to the earlier frame."""
    if count < 1:
        raise InvalidInput("frame count must be >= 1")
    if video.duration < count * interval - eps:
        raise SpanExceedsVideo(f"clip lasts {video.duration:.3f}s, grid needs {count * interval:.3f}s")
    out = []
    for slot in range(count):
        pos = slot * interval * video.fps
        idx = math.ceil(pos - 0.5 - eps)  # round half down
        idx = min(max(idx, 0), len(video) - 1)
        out.append(Frame(np.asarray(video.frames[idx]), idx / video.fps, idx))
    return out


@dataclass
class FrameGrid:
    cells: list               # row-major source frame indices
    rows: int
    cols: int
    source_timestamps: list
    kind: str                 # "demo" (G_v) or "rollout" (G_s)
    mosaic: np.ndarray = field(repr=False)
    path: str = None

    def cell(self, row, col):
        ch, cw = self.mosaic.shape[0] // self.rows, self.mosaic.shape[1] // self.cols
        return self.mosaic[row * ch:(row + 1) * ch, col * cw:(col + 1) * cw]


def compose_grid(frames, kind="demo", path=None, annotate=True):
    """Row-major square mosaic; the written PNG carries per-cell index labels.

    ``FrameGrid.mosaic`` stays label-free so cells round-trip bit-exactly.
    """
    if kind not in ("demo", "rollout"):
        raise InvalidInput(f"grid kind must be 'demo' or 'rollout', got {kind!r}")
    frames = [frame if isinstance(frame, Frame) else Frame(np.asarray(frame), float(idx), idx)
              for idx, frame in enumerate(frames)]
    count = len(frames)
    side = math.isqrt(count)
    if count == 0 or side * side != count:
        raise NotPerfectSquare(f"{count} frames do not form a square grid")
    shape = frames[0].image.shape
    if any(frame.image.shape != shape for frame in frames):
        raise DimensionMismatch("frames have mixed dimensions")
    rows = [np.concatenate([frames[row * side + col].image for col in range(side)], axis=1) for row in range(side)]
    mosaic = np.concatenate(rows, axis=0)
    grid = FrameGrid([frame.index for frame in frames], side, side, [frame.time for frame in frames], kind, mosaic)
    if path is not None:
        write_grid(grid, path, annotate=annotate)
    return grid


def write_grid(grid, path, annotate=True):
    img = Image.fromarray(np.ascontiguousarray(grid.mosaic))
    if annotate:
        draw = ImageDraw.Draw(img)
        ch, cw = grid.mosaic.shape[0] // grid.rows, grid.mosaic.shape[1] // grid.cols
        for idx in range(grid.rows * grid.cols):
            row, col = divmod(idx, grid.cols)
            draw.text((col * cw + 2, row * ch + 1), str(idx), fill=(255, 255, 0))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    grid.path = str(path)
    return path


def _leg_color(name):
    if "left" in name:
        return LEG_COLORS["left"]
    if "right" in name:
        return LEG_COLORS["right"]
    return (40, 40, 40)


def overlay_keypoints(frame, points, edges=QUADRUPED_EDGES, conf_floor=CONFIDENCE_FLOOR, radius=3):
    """New image with keypoint markers and skeleton edges drawn on ``frame``."""
    image = np.asarray(frame.image if isinstance(frame, Frame) else frame)
    for name, (px, py, *_rest) in points.items():
        if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
            raise CoordinateOutOfRange(f"{name}: ({px}, {py}) outside [0,1]^2")
    out = Image.fromarray(np.array(image, dtype=np.uint8, copy=True))
    if not points:
        return np.asarray(out)
    img_h, img_w = image.shape[:2]
    draw = ImageDraw.Draw(out)

    def visible(name):
        point = points.get(name)
        return point is not None and (len(point) < 3 or point[2] >= conf_floor)

    for first, second in edges:
        if visible(first) and visible(second):
            pa, pb = points[first], points[second]
            draw.line([(pa[0] * img_w, pa[1] * img_h), (pb[0] * img_w, pb[1] * img_h)],
                      fill=_leg_color(second), width=2)
    for name, point in points.items():
        if not visible(name):
            continue
        cx, cy = point[0] * img_w, point[1] * img_h
        draw.ellipse([cx - radius, cy - radius, cx + radius, cy + radius], fill=_leg_color(name))
    return np.asarray(out)


def render_pose(points, size=(96, 96), center=None, zoom=1.0, background=(245, 245, 240)):
    """Stick-figure rendering of one keypoint frame.

    ``center`` recentres the view on a point (the base, for tracking-camera
    footage); ``zoom`` magnifies around it.  Points falling outside the view
    are dropped.
    """
    img_h, img_w = size
    canvas = np.empty((img_h, img_w, 3), dtype=np.uint8)
    canvas[:] = background
    canvas[int(img_h * 0.9):, :] = (200, 195, 185)  # ground band
    if center is None:
        view = dict(points)
    else:
        cx, cy = center
        view = {}
        for name, point in points.items():
            px = 0.5 + (point[0] - cx) * zoom
            py = 0.9 + (point[1] - cy) * zoom
            if 0.0 <= px <= 1.0 and 0.0 <= py <= 1.0:
                view[name] = (px, py) + tuple(point[2:])
    return overlay_keypoints(canvas, view, radius=max(2, img_w // 48))


class RenderedFrames:
    """Sequence of stick-figure images rendered on access from a trajectory."""

    def __init__(self, traj, size=(96, 96), zoom=2.5, track=True):
        self.traj, self.size, self.zoom, self.track = traj, size, zoom, track
        self._base = traj.index("base")
        self._ground = float(np.nanmax(traj.xy[:, :, 1]))

    def __len__(self):
        return len(self.traj)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return [self[idx] for idx in range(*key.indices(len(self)))]
        center = (self.traj.xy[key, self._base, 0], self._ground) if self.track else None
        return render_pose(self.traj.points(key), self.size, center=center, zoom=self.zoom if self.track else 1.0)


def render_trajectory_frames(traj, size=(96, 96), zoom=2.5, track=True):
    """One rendered image per keypoint frame (tracking the base when ``track``)."""
    return list(RenderedFrames(traj, size, zoom, track))


def trajectory_clip(traj, size=(96, 96), zoom=2.5, track=True):
    """A :class:`VideoClip` whose frames are rendered lazily from keypoints."""
    fps = traj.fps or (1.0 / float(np.median(np.diff(traj.times))) if len(traj) > 1 else 1.0)
    return VideoClip(RenderedFrames(traj, size, zoom, track), float(fps))


def load_frames(path, fps=None):
    """Decode shim: a directory of numbered PNGs, or a video container via OpenCV."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.png"), key=lambda file: [int(part) if part.isdigit() else part
                                                          for part in re.split(r"(\d+)", file.name)])
        if not files:
            raise InputError(f"{path}: no PNG frames")
        if fps is None:
            raise InputError("frame directories need an explicit fps")
        return VideoClip([np.asarray(Image.open(file).convert("RGB")) for file in files], float(fps))
    if not path.exists():
        raise InputError(f"{path}: no such file")
    try:
        import cv2
    except ImportError:
        raise InputError("reading video containers requires opencv-python-headless") from None
    cap = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, bgr = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    rate = fps or cap.get(cv2.CAP_PROP_FPS)
    cap.release()
    if not frames or not rate:
        raise InputError(f"{path}: could not decode video")
    return VideoClip(frames, float(rate))


def contacts_from_keypoints(traj, ground_tol=0.004):
    """Rough 4 x F stance estimate: a foot is down when within ``ground_tol`` of its lowest point."""
    rows = []
    for name in FEET:
        foot_y = traj.xy[:, traj.index(name), 1]
        ground = np.nanmax(foot_y)
        rows.append(np.nan_to_num(foot_y, nan=-1.0) >= ground - ground_tol)
    return np.array(rows, dtype=bool)
