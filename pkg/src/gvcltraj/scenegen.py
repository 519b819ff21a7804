"""Synthetic driving scenes.

A scene is a procedurally generated road (straight, constant-curvature arc,
T-junction or crossroads), one target vehicle driven by a pure-pursuit lane
follower with small acceleration and yaw-rate noise, up to three other
vehicles, and a 3-channel ego-centred raster (drivable area, target history,
other histories).

Map frame is metric with the road network centred on the origin. Ego frame
has x forward and y to the left of the target's current heading.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import child_seed
from .trajset import corpus_digest, ego_to_map, map_to_ego

FORMAT_VERSION = 1

LANE_WIDTH = 3.5
MAP_SIZE = 100.0
MAP_RESOLUTION = 0.5
ROAD_REACH = 75.0

FREQ = 2.0
HISTORY_STEPS = 6  # poses before the current one (3 s)
FUTURE_STEPS = 12  # 6 s horizon
SIM_DT = 0.1
SPEED_RANGE = (2.0, 15.0)

RASTER_SIZE = 64
RASTER_RES = 0.5
EGO_ROW = 40  # 12 m of context behind the agent, 20 m ahead
EGO_COL = 32
FOOTPRINT_RADIUS = 1.0

# divides (speed, acceleration, yaw-rate) before it enters the network
STATE_SCALE = np.array([10.0, 1.0, 0.5])

LAYOUT_KINDS = ("straight", "curved", "t-junction", "crossroads")


class GenerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# geometry containers
# ---------------------------------------------------------------------------


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    a = np.where(a == -np.pi, np.pi, a)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class DrivableMask:
    grid: np.ndarray  # (ny, nx) bool, indexed [iy, ix]
    resolution: float = MAP_RESOLUTION
    origin: tuple[float, float] = (-MAP_SIZE / 2, -MAP_SIZE / 2)

    def __post_init__(self):
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise ValueError("mask grid must be a non-empty 2-D array")
        if self.resolution <= 0:
            raise ValueError("mask resolution must be positive")

    def cell_index(self, points):
        p = np.asarray(points, dtype=float)
        ix = np.floor((p[..., 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((p[..., 1] - self.origin[1]) / self.resolution).astype(np.int64)
        return iy, ix

    def contains(self, points) -> np.ndarray:
        """True where the cell holding the point is drivable; off-map is False."""
        iy, ix = self.cell_index(points)
        ny, nx = self.grid.shape
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.zeros(inside.shape, dtype=bool)
        out[inside] = self.grid[iy[inside], ix[inside]]
        return out

    def in_bounds(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        ny, nx = self.grid.shape
        x0, y0 = self.origin
        return ((p[..., 0] >= x0 + margin) & (p[..., 0] <= x0 + nx * self.resolution - margin)
                & (p[..., 1] >= y0 + margin) & (p[..., 1] <= y0 + ny * self.resolution - margin))

    def cell_centers(self) -> np.ndarray:
        ny, nx = self.grid.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    @property
    def drivable_fraction(self) -> float:
        return float(self.grid.mean())


@dataclass(frozen=True)
class AgentPose:
    position: tuple[float, float]
    heading: float
    speed: float = 0.0

    def __post_init__(self):
        if not -math.pi < self.heading <= math.pi:
            raise ValueError(f"heading {self.heading} outside (-pi, pi]")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


class Route:
    """Directed lane centreline as a dense polyline."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s):
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, s) -> float:
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2))
        d = self.points[i + 1] - self.points[i]
        return float(math.atan2(d[1], d[0]))

    def project(self, p, hint: int = 0, window: int = 200) -> int:
        lo, hi = max(0, hint - window), min(len(self.points), hint + window)
        d = np.sum((self.points[lo:hi] - p) ** 2, axis=1)
        return lo + int(np.argmin(d))


@dataclass
class RoadNetwork:
    kind: str
    lanes_per_direction: int
    rotation: float
    mask: DrivableMask
    routes: list[Route] = field(default_factory=list)

    @property
    def half_width(self) -> float:
        return self.lanes_per_direction * LANE_WIDTH


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _right(d):
    return np.array([d[1], -d[0]])


def _dist_to_segment(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _dist_to_arc(p, center, radius, t0, t1):
    rel = p - center
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    within = np.mod(ang - t0, 2 * np.pi) <= (t1 - t0)
    radial = np.abs(np.linalg.norm(rel, axis=-1) - radius)
    e0 = center + radius * np.array([math.cos(t0), math.sin(t0)])
    e1 = center + radius * np.array([math.cos(t1), math.sin(t1)])
    ends = np.minimum(np.linalg.norm(p - e0, axis=-1), np.linalg.norm(p - e1, axis=-1))
    return np.where(within, radial, ends)


def _line(a, b, step=0.5):
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return a + t * (b - a)


def _bezier(p0, p1, p2, step=0.5):
    approx = np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
    n = max(3, int(math.ceil(approx / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _arc_points(center, radius, t0, t1, step=0.5):
    n = max(2, int(math.ceil(abs(t1 - t0) * radius / step)) + 1)
    t = np.linspace(t0, t1, n)
    return center + radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def _join(*parts):
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:] if np.allclose(p[0], out[-1][-1]) else p)
    return np.concatenate(out)


def _offset(i):
    return (i + 0.5) * LANE_WIDTH


def generate_network(seed: int, kind: str | None = None, lanes: int | None = None,
                     rotation: float | None = None, curvature_radius: float | None = None) -> RoadNetwork:
    """Procedural road network; every keyword left as None is drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    draw_kind = LAYOUT_KINDS[rng.integers(len(LAYOUT_KINDS))]
    draw_lanes = int(rng.integers(1, 3))
    draw_rot = float(rng.uniform(-math.pi, math.pi))
    draw_radius = float(rng.uniform(30.0, 100.0))
    draw_sign = 1.0 if rng.random() < 0.5 else -1.0
    kind = kind or draw_kind
    if kind not in LAYOUT_KINDS:
        raise ValueError(f"unknown layout kind {kind!r}")
    lanes = lanes or draw_lanes
    rotation = draw_rot if rotation is None else rotation
    radius = curvature_radius or draw_radius
    hw = lanes * LANE_WIDTH
    R = _rot(rotation)

    n = int(round(MAP_SIZE / MAP_RESOLUTION))
    grid_mask = DrivableMask(np.zeros((n, n), dtype=bool))
    local = grid_mask.cell_centers().reshape(-1, 2) @ R  # cell centres in the unrotated road frame
    routes = []

    if kind == "straight":
        a, b = np.array([-ROAD_REACH, 0.0]), np.array([ROAD_REACH, 0.0])
        dist = _dist_to_segment(local, a, b)
        for i in range(lanes):
            routes.append(_line(a - [0, _offset(i)], b - [0, _offset(i)]))
            routes.append(_line(b + [0, _offset(i)], a + [0, _offset(i)]))
    elif kind == "curved":
        # arc through the origin, tangent to +x there, bending left or right
        center = np.array([0.0, draw_sign * radius])
        base = -draw_sign * math.pi / 2
        span = min(ROAD_REACH / radius, 0.8 * math.pi)
        t0, t1 = base - span, base + span
        dist = _dist_to_arc(local, center, radius, t0, t1)
        for i in range(lanes):
            # counter-clockwise travel keeps the centre on its left
            routes.append(_arc_points(center, radius + _offset(i), t0, t1))
            routes.append(_arc_points(center, radius - _offset(i), t1, t0))
    else:
        arms = [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, -1.0])]
        if kind == "crossroads":
            arms.append(np.array([0.0, 1.0]))
        dist = np.min([_dist_to_segment(local, np.zeros(2), ROAD_REACH * u) for u in arms], axis=0)
        for ia, ua in enumerate(arms):
            for ib, ub in enumerate(arms):
                if ia == ib:
                    continue
                for i in range(lanes):
                    o_in = _offset(i) * _right(-ua)
                    o_out = _offset(i) * _right(ub)
                    p0, p2 = hw * ua + o_in, hw * ub + o_out
                    entry = _line(ROAD_REACH * ua + o_in, p0)
                    exit_ = _line(p2, ROAD_REACH * ub + o_out)
                    if np.allclose(ua, -ub):
                        link = _line(p0, p2)
                    else:
                        # meet point of the inbound and outbound lane lines
                        m = np.column_stack([-ua, -ub])
                        t = np.linalg.solve(m, p2 - p0)
                        link = _bezier(p0, p0 - t[0] * ua, p2)
                    routes.append(_join(entry, link, exit_))

    grid = (dist <= hw).reshape(n, n)
    mask = DrivableMask(grid)
    return RoadNetwork(kind, lanes, rotation, mask, [Route(r @ R.T) for r in routes])


def generate_layout(seed: int) -> DrivableMask:
    return generate_network(seed).mask


# ---------------------------------------------------------------------------
# agents
# ---------------------------------------------------------------------------


@dataclass
class AgentTrack:
    history: np.ndarray  # (HISTORY_STEPS + 1, 4): x, y, heading, speed in map frame
    future_map: np.ndarray  # (FUTURE_STEPS, 2)
    state: np.ndarray  # (speed, acceleration, yaw-rate) at the current step

    @property
    def pose(self) -> AgentPose:
        x, y, h, v = self.history[-1]
        return AgentPose((float(x), float(y)), wrap_angle(h), float(v))

    @property
    def future_ego(self) -> np.ndarray:
        p = self.pose
        return map_to_ego(self.future_map, p.position, p.heading)


def _drive(route: Route, s_start: float, v0: float, n_steps: int, rng, noise: bool,
           speed_range=SPEED_RANGE):
    """Pure-pursuit lane following; returns per-step (x, y, h, v, a, w)."""
    pos = route.at(s_start)
    h = route.heading_at(s_start)
    v, a = v0, 0.0
    hint = route.project(pos, hint=int(np.searchsorted(route.s, s_start)), window=len(route.s))
    out = np.empty((n_steps + 1, 6))
    for k in range(n_steps + 1):
        lookahead = max(4.0, 0.8 * v)
        hint = route.project(pos, hint)
        target = route.at(route.s[hint] + lookahead)
        alpha = wrap_angle(math.atan2(target[1] - pos[1], target[0] - pos[0]) - h)
        w = 2.0 * v * math.sin(alpha) / lookahead
        if noise:
            a = 0.85 * a + rng.normal(0.0, 0.25)
            w += rng.normal(0.0, 0.02)
        out[k] = (pos[0], pos[1], h, v, a, w)
        pos = pos + SIM_DT * v * np.array([math.cos(h), math.sin(h)])
        h = h + SIM_DT * w
        v_next = v + SIM_DT * a
        if not speed_range[0] <= v_next <= speed_range[1]:
            v_next = min(max(v_next, speed_range[0]), speed_range[1])
            a = 0.0
        v = v_next
    return out


def simulate_agent(network: RoadNetwork, seed: int, noise: bool = True, speed: float | None = None,
                   route_index: int | None = None, require_drivable: bool = True,
                   max_attempts: int = 100, speed_range=SPEED_RANGE) -> AgentTrack:
    """Place an agent on a lane and integrate 3 s of history plus 6 s of future.

    Placements whose future leaves the drivable area are rejected and redrawn.
    """
    if not network.routes or not network.mask.grid.any():
        raise GenerationError("network has no road to place an agent on")
    rng = np.random.default_rng(seed)
    per = int(round(1.0 / (FREQ * SIM_DT)))
    n_hist, n_fut = HISTORY_STEPS * per, FUTURE_STEPS * per
    for _ in range(max_attempts):
        ri = int(rng.integers(len(network.routes))) if route_index is None else route_index
        route = network.routes[ri]
        v0 = float(rng.uniform(*speed_range)) if speed is None else float(speed)
        inside = np.flatnonzero(network.mask.in_bounds(route.points, margin=1.0))
        if len(inside) == 0:
            continue
        s_lo = max(route.s[inside[0]], v0 * HISTORY_STEPS / FREQ + 1.0)
        s_hi = route.s[inside[-1]] - v0 * FUTURE_STEPS / FREQ - 2.0
        if s_hi < s_lo:
            continue
        s0 = float(rng.uniform(s_lo, s_hi))
        traj = _drive(route, s0 - v0 * HISTORY_STEPS / FREQ, v0, n_hist + n_fut, rng, noise, speed_range)
        history = traj[:n_hist + 1:per, :4].copy()
        history[:, 2] = wrap_angle(history[:, 2])
        future = traj[n_hist + per::per, :2].copy()
        cur = traj[n_hist]
        track = AgentTrack(history, future, np.array([cur[3], cur[4], cur[5]]))
        if require_drivable:
            p = track.pose
            pts = ego_to_map(track.future_ego, p.position, p.heading)
            if not network.mask.contains(pts).all():
                continue
        return track
    raise GenerationError(f"could not place an agent within {max_attempts} attempts")


# ---------------------------------------------------------------------------
# raster
# ---------------------------------------------------------------------------


def raster_pixel_centers() -> np.ndarray:
    """Ego-frame coordinates of raster pixel centres, heading up."""
    r = np.arange(RASTER_SIZE)
    x = (EGO_ROW - r) * RASTER_RES
    y = (EGO_COL - r) * RASTER_RES
    gx, gy = np.meshgrid(x, y, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def _paint(channel, centers, poses_ego):
    n = len(poses_ego)
    for k, p in enumerate(poses_ego):
        level = 1.0 if n == 1 else 0.25 + 0.75 * k / (n - 1)
        d2 = (centers[..., 0] - p[0]) ** 2 + (centers[..., 1] - p[1]) ** 2
        hit = d2 <= FOOTPRINT_RADIUS ** 2
        channel[hit] = np.maximum(channel[hit], level)


def render_raster(mask: DrivableMask, pose: AgentPose, target_history, other_histories=()) -> np.ndarray:
    """(64, 64, 3) float32: drivable area, target history, other histories.

    Histories are (n, >=2) arrays of map-frame positions, oldest first; their
    intensity rises linearly from 0.25 for the oldest pose to 1.0 for the
    current one.
    """
    centers = raster_pixel_centers()
    raster = np.zeros((RASTER_SIZE, RASTER_SIZE, 3), dtype=np.float32)
    raster[..., 0] = mask.contains(ego_to_map(centers, pose.position, pose.heading))
    th = np.asarray(target_history, dtype=float)
    if th.size:
        _paint(raster[..., 1], centers, map_to_ego(th[:, :2], pose.position, pose.heading))
    for other in other_histories:
        other = np.asarray(other, dtype=float)
        if len(other):
            _paint(raster[..., 2], centers, map_to_ego(other[:, :2], pose.position, pose.heading))
    return raster


# ---------------------------------------------------------------------------
# scenes and datasets
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    scene_id: int
    kind: str
    mask: DrivableMask
    history: np.ndarray  # target (7, 4) map frame
    others: list[np.ndarray]
    future: np.ndarray  # (12, 2) ego frame
    raster: np.ndarray  # (64, 64, 3) float32
    agent_state: np.ndarray  # (3,)
    pose: AgentPose

    @property
    def features(self) -> np.ndarray:
        return self.agent_state / STATE_SCALE


def generate_scene(seed: int) -> Scene:
    network = generate_network(child_seed(seed, 0))
    target = simulate_agent(network, child_seed(seed, 1))
    rng = np.random.default_rng(child_seed(seed, 2))
    others = []
    for j in range(int(rng.integers(0, 4))):
        try:
            others.append(simulate_agent(network, child_seed(seed, 3, j), require_drivable=False).history)
        except GenerationError:
            pass
    pose = target.pose
    raster = render_raster(network.mask, pose, target.history, others)
    return Scene(seed, network.kind, network.mask, target.history, others, target.future_ego,
                 raster, target.state, pose)


@dataclass
class Dataset:
    train: list[Scene]
    val: list[Scene]
    test: list[Scene]
    manifest: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Scene]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def split_counts(n: int, split) -> tuple[int, int, int]:
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {split}")
    n_val = int(round(n * split[1]))
    n_test = int(round(n * split[2]))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"{n} scenes are too few for split {tuple(split)}")
    return n_train, n_val, n_test


def build_dataset(n_scenes: int, seed: int, split=(0.7, 0.15, 0.15)) -> Dataset:
    n_train, n_val, n_test = split_counts(n_scenes, split)
    scenes = [generate_scene(child_seed(seed, 100, i)) for i in range(n_scenes)]
    order = np.random.default_rng(seed).permutation(n_scenes)
    train = [scenes[i] for i in sorted(order[:n_train])]
    val = [scenes[i] for i in sorted(order[n_train:n_train + n_val])]
    test = [scenes[i] for i in sorted(order[n_train + n_val:])]
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_scenes": n_scenes,
        "seed": seed,
        "split": list(split),
        "counts": {"train": n_train, "val": n_val, "test": n_test},
        "train_corpus_digest": corpus_digest(np.stack([s.future for s in train])),
        "horizon_steps": FUTURE_STEPS,
        "frequency_hz": FREQ,
    }
    return Dataset(train, val, test, manifest)


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform subset of the training split; val and test stay untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(dataset.train)
    k = int(math.floor(fraction * n))
    idx = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False)) if k < n else np.arange(n)
    manifest = dict(dataset.manifest, subsample={"fraction": fraction, "seed": seed, "count": int(k)})
    return Dataset([dataset.train[i] for i in idx], dataset.val, dataset.test, manifest)


def stack(scenes: list[Scene]):
    """(rasters, state features, ego futures) arrays for a scene list."""
    rasters = np.stack([s.raster for s in scenes]).astype(np.float32)
    states = np.stack([s.features for s in scenes])
    futures = np.stack([s.future for s in scenes])
    return rasters, states, futures


# --- persistence -----------------------------------------------------------


def _scene_arrays(s: Scene) -> dict[str, np.ndarray]:
    others = np.stack(s.others) if s.others else np.zeros((0, HISTORY_STEPS + 1, 4))
    return {
        "mask_bits": np.packbits(s.mask.grid.ravel()),
        "history": s.history,
        "others": others,
        "future": s.future,
        "raster": s.raster,
        "agent_state": s.agent_state,
    }


def _scene_meta(s: Scene) -> dict:
    return {
        "scene_id": s.scene_id,
        "kind": s.kind,
        "mask_shape": list(s.mask.grid.shape),
        "mask_resolution": s.mask.resolution,
        "mask_origin": list(s.mask.origin),
        "pose": {"position": list(s.pose.position), "heading": s.pose.heading, "speed": s.pose.speed},
    }


def _scene_from(meta: dict, arrays: dict[str, np.ndarray]) -> Scene:
    shape = tuple(meta["mask_shape"])
    grid = np.unpackbits(arrays["mask_bits"], count=shape[0] * shape[1]).astype(bool).reshape(shape)
    mask = DrivableMask(grid, meta["mask_resolution"], tuple(meta["mask_origin"]))
    p = meta["pose"]
    pose = AgentPose(tuple(p["position"]), p["heading"], p["speed"])
    others = [o for o in arrays["others"]]
    return Scene(meta["scene_id"], meta["kind"], mask, arrays["history"], others, arrays["future"],
                 arrays["raster"], arrays["agent_state"], pose)


def encode_scene_binary(s: Scene) -> bytes:
    arrays = _scene_arrays(s)
    header = dict(_scene_meta(s), arrays=[[k, a.dtype.str, list(a.shape)] for k, a in arrays.items()])
    h = json.dumps(header).encode()
    body = struct.pack("<I", len(h)) + h + b"".join(np.ascontiguousarray(a).tobytes() for a in arrays.values())
    return zlib.compress(body, 6)


def decode_scene_binary(blob: bytes) -> Scene:
    body = zlib.decompress(blob)
    (hlen,) = struct.unpack_from("<I", body)
    header = json.loads(body[4:4 + hlen])
    pos = 4 + hlen
    arrays = {}
    for name, dtype, shape in header["arrays"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape)) * dt.itemsize
        arrays[name] = np.frombuffer(body[pos:pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    return _scene_from(header, arrays)


def encode_scene_json(s: Scene) -> str:
    arrays = _scene_arrays(s)
    d = _scene_meta(s)
    d["arrays"] = {k: {"dtype": a.dtype.str, "shape": list(a.shape), "data": a.ravel().tolist()}
                   for k, a in arrays.items()}
    return json.dumps(d)


def decode_scene_json(line: str) -> Scene:
    d = json.loads(line)
    arrays = {k: np.asarray(v["data"], dtype=np.dtype(v["dtype"])).reshape(v["shape"])
              for k, v in d["arrays"].items()}
    return _scene_from(d, arrays)


RECORD_FORMATS = ("bin", "jsonl")


def save_dataset(dataset: Dataset, path, record_format: str = "bin") -> Path:
    if record_format not in RECORD_FORMATS:
        raise ValueError(f"record format must be one of {RECORD_FORMATS}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in ("train", "val", "test"):
        fname = f"{name}.{record_format}"
        files[name] = fname
        with open(path / fname, "wb") as fh:
            for s in dataset.split(name):
                if record_format == "bin":
                    blob = encode_scene_binary(s)
                    fh.write(struct.pack("<Q", len(blob)))
                    fh.write(blob)
                else:
                    fh.write(encode_scene_json(s).encode() + b"\n")
    manifest = dict(dataset.manifest, record_format=record_format, files=files)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    fmt = manifest["record_format"]
    splits = {}
    for name, fname in manifest["files"].items():
        scenes = []
        with open(path / fname, "rb") as fh:
            if fmt == "bin":
                while head := fh.read(8):
                    (n,) = struct.unpack("<Q", head)
                    scenes.append(decode_scene_binary(fh.read(n)))
            else:
                scenes = [decode_scene_json(line) for line in fh if line.strip()]
        splits[name] = scenes
    return Dataset(splits["train"], splits["val"], splits["test"], manifest)
