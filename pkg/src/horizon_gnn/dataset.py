"""Trajectories, normalization, melt-rate splits and multi-horizon pair enumeration."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import MeshGraph
from .model import ModelInput

STATE_CHANNELS = ("vx", "vy", "thickness", "surface", "base", "floating_ratio", "speed")
STATIC_CHANNELS = ("melt_rate", "smb")
PROGNOSTIC_CHANNELS = STATE_CHANNELS[:3]

MELT_RATES = tuple(range(0, 71, 2))
VAL_MELT_RATES = (0, 20, 40, 60)
TEST_MELT_RATES = (10, 30, 50, 70)


@dataclass(frozen=True)
class HorizonSet:
    horizons: tuple[int, ...]

    def __init__(self, horizons):
        hs = tuple(sorted({int(h) for h in horizons}))
        if not hs:
            raise ValueError("horizon set is empty")
        if hs[0] < 1:
            raise ValueError("horizons must be positive integers")
        object.__setattr__(self, "horizons", hs)

    @classmethod
    def parse(cls, text: str) -> "HorizonSet":
        return cls(int(x) for x in str(text).replace("{", "").replace("}", "").split(",") if x.strip())

    @property
    def h_max(self) -> int:
        return self.horizons[-1]

    def psi(self, h: int) -> float:
        return h / self.h_max

    def __iter__(self):
        return iter(self.horizons)

    def __len__(self):
        return len(self.horizons)

    def __contains__(self, h):
        return h in self.horizons

    def __str__(self):
        return ",".join(map(str, self.horizons))


@dataclass
class Trajectory:
    mesh: MeshGraph
    scenario_id: str
    melt_rate: float
    static_features: np.ndarray  # (N, S)
    states: np.ndarray           # (T, N, C), months 1..T stored at index 0..T-1
    channel_names: tuple[str, ...] = STATE_CHANNELS
    static_names: tuple[str, ...] = STATIC_CHANNELS

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def N(self) -> int:
        return self.states.shape[1]

    def at(self, t: int) -> np.ndarray:
        """State at 1-based month ``t``."""
        if not 1 <= t <= self.T:
            raise IndexError(f"month {t} outside 1..{self.T}")
        return self.states[t - 1]

    def validate(self, atol=1e-9):
        if self.states.ndim != 3 or self.states.shape[2] < 3:
            raise DataError("states must be (T, N, C) with C >= 3")
        if self.states.shape[1] != self.mesh.node_count:
            raise DataError("state node count differs from mesh")
        if self.static_features.shape[0] != self.mesh.node_count:
            raise DataError("static feature node count differs from mesh")
        if not np.all(np.isfinite(self.states)):
            raise DataError(f"non-finite states in {self.scenario_id}")
        names = self.channel_names
        if "floating_ratio" in names:
            f = self.states[..., names.index("floating_ratio")]
            if f.min() < 0 or f.max() > 1:
                raise DataError("floating ratio outside [0, 1]")
        if "speed" in names:
            s = self.states[..., names.index("speed")]
            mag = np.hypot(self.states[..., 0], self.states[..., 1])
            if np.max(np.abs(s - mag)) > atol:
                raise DataError("speed channel inconsistent with velocity components")


@dataclass(frozen=True)
class SamplePair:
    trajectory_id: str
    t: int
    h: int


def enumerate_pairs(T: int, horizons: HorizonSet, trajectory_id: str = "") -> list[SamplePair]:
    """All (t, h) with h in ``horizons`` and 1 <= t <= T - h, ordered by h then t."""
    if T < 2:
        raise ValueError("trajectory needs at least two states")
    if len(horizons) == 0:
        raise ValueError("horizon set is empty")
    return [SamplePair(trajectory_id, t, h) for h in horizons for t in range(1, T - h + 1)]


def pair_count(T: int, horizons) -> int:
    return sum(max(T - h, 0) for h in horizons)


def split_by_melt_rate(trajectories):
    """(train, val, test) lists by melt rate; validation 0/20/40/60, test 10/30/50/70."""
    train, val, test = [], [], []
    for tr in trajectories:
        m = float(tr.melt_rate)
        rate = int(round(m))
        if abs(m - rate) > 1e-9 or rate not in MELT_RATES:
            raise DataError(f"melt rate {m} of {tr.scenario_id} is not in 0..70 step 2")
        if rate in VAL_MELT_RATES:
            val.append(tr)
        elif rate in TEST_MELT_RATES:
            test.append(tr)
        else:
            train.append(tr)
    return train, val, test


# -- normalization -----------------------------------------------------------


@dataclass
class NormStats:
    state_names: tuple[str, ...]
    state_mean: np.ndarray
    state_std: np.ndarray
    static_names: tuple[str, ...]
    static_mean: np.ndarray
    static_std: np.ndarray
    constant: tuple[str, ...] = ()  # channels whose std was replaced by 1

    @property
    def prognostic_mean(self):
        return self.state_mean[:3]

    @property
    def prognostic_std(self):
        return self.state_std[:3]

    def normalize_states(self, x):
        return (x - self.state_mean[: x.shape[-1]]) / self.state_std[: x.shape[-1]]

    def denormalize_states(self, z):
        return z * self.state_std[: z.shape[-1]] + self.state_mean[: z.shape[-1]]

    def normalize_static(self, x):
        return (x - self.static_mean) / self.static_std

    def to_text(self) -> str:
        lines = ["# horizon-gnn normalization statistics v1", "# kind name mean std constant"]
        for kind, names, mean, std in (("state", self.state_names, self.state_mean, self.state_std),
                                       ("static", self.static_names, self.static_mean, self.static_std)):
            for n, m, s in zip(names, mean, std):
                lines.append(f"{kind} {n} {float(m)!r} {float(s)!r} {int(n in self.constant)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NormStats":
        rows = {"state": [], "static": []}
        constant = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5 or parts[0] not in rows:
                raise DataError(f"bad stats line: {line!r}")
            kind, name, mean, std, const = parts
            try:
                rows[kind].append((name, float(mean), float(std)))
            except ValueError as exc:
                raise DataError(f"bad stats line: {line!r}") from exc
            if const == "1":
                constant.append(name)

        def cols(kind):
            r = rows[kind]
            return tuple(x[0] for x in r), np.array([x[1] for x in r]), np.array([x[2] for x in r])

        sn, sm, ss = cols("state")
        tn, tm, ts = cols("static")
        return cls(sn, sm, ss, tn, tm, ts, tuple(constant))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_text(Path(path).read_text())


def compute_norm_stats(train) -> NormStats:
    """Per-channel z-score statistics over all nodes, months and training trajectories."""
    if not train:
        raise DataError("normalization needs at least one training trajectory")
    first = train[0]
    c = first.states.shape[2]
    s_sum = np.zeros(c)
    s_sq = np.zeros(c)
    count = 0
    st = np.concatenate([tr.static_features for tr in train], axis=0)
    for tr in train:
        x = tr.states.reshape(-1, c)
        s_sum += x.sum(axis=0)
        count += len(x)
    mean = s_sum / count
    for tr in train:
        x = tr.states.reshape(-1, c) - mean
        s_sq += (x * x).sum(axis=0)
    std = np.sqrt(s_sq / count)
    st_mean = st.mean(axis=0)
    st_std = st.std(axis=0)

    constant = []
    for names, sd, mu in ((first.channel_names, std, mean), (first.static_names, st_std, st_mean)):
        tiny = sd <= 1e-12 * np.maximum(np.abs(mu), 1.0)
        for i in np.flatnonzero(tiny):
            constant.append(names[i])
            sd[i] = 1.0
    return NormStats(tuple(first.channel_names), mean, std, tuple(first.static_names),
                     st_mean, st_std, tuple(constant))


# -- model inputs --------------------------------------------------------------


def _check_pair(traj: Trajectory, t: int, h: int):
    if h < 1 or t < 1 or t + h > traj.T:
        raise ValueError(f"invalid pair (t={t}, h={h}) for T={traj.T}")


def context_features(traj: Trajectory, stats: NormStats, t=None) -> np.ndarray:
    """Normalized static features followed by normalized diagnostic channels.

    Returns (N, K) for a single month ``t`` or (T, N, K) when ``t`` is None.
    """
    stat = stats.normalize_static(traj.static_features)
    diag = (traj.states[..., 3:] - stats.state_mean[3:]) / stats.state_std[3:]
    if t is not None:
        return np.concatenate([stat, diag[t - 1]], axis=-1)
    stat = np.broadcast_to(stat, (traj.T,) + stat.shape)
    return np.concatenate([stat, diag], axis=-1)


def assemble_input(traj: Trajectory, t: int, h: int, stats: NormStats, horizons: HorizonSet,
                   t_denominator: float | None = None) -> ModelInput:
    _check_pair(traj, t, h)
    if h not in horizons:
        raise ValueError(f"horizon {h} not in {horizons}")
    den = traj.T if t_denominator is None else t_denominator
    return ModelInput(
        traj.mesh,
        stats.normalize_states(traj.at(t)[:, :3]),
        context_features(traj, stats, t),
        t / den,
        horizons.psi(h),
    )


def residual_target(traj: Trajectory, t: int, h: int, stats: NormStats) -> np.ndarray:
    """Normalized-space increment of V_x, V_y, H from month t to t + h."""
    _check_pair(traj, t, h)
    return (traj.at(t + h)[:, :3] - traj.at(t)[:, :3]) / stats.prognostic_std


@dataclass
class PreparedTrajectory:
    """Normalized arrays of one trajectory, for fast batched gathering."""

    traj: Trajectory
    state: np.ndarray    # (T, N, 3)
    context: np.ndarray  # (T, N, K)

    @classmethod
    def build(cls, traj: Trajectory, stats: NormStats) -> "PreparedTrajectory":
        return cls(traj, stats.normalize_states(traj.states[..., :3]),
                   np.ascontiguousarray(context_features(traj, stats)))


@dataclass
class PairSet:
    """Pairs over several trajectories as parallel index arrays."""

    prepared: list[PreparedTrajectory]
    traj_index: np.ndarray
    t: np.ndarray
    h: np.ndarray
    horizons: HorizonSet
    t_denominator: float = 240.0
    velocity_inputs: bool = True
    _mesh_groups: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, trajectories, stats: NormStats, horizons: HorizonSet,
              t_denominator: float = 240.0, velocity_inputs: bool = True) -> "PairSet":
        prepared = [PreparedTrajectory.build(tr, stats) for tr in trajectories]
        ti, ts, hs = [], [], []
        for k, tr in enumerate(trajectories):
            for p in enumerate_pairs(tr.T, horizons, tr.scenario_id):
                ti.append(k)
                ts.append(p.t)
                hs.append(p.h)
        return cls(prepared, np.array(ti, dtype=np.int64), np.array(ts, dtype=np.int64),
                   np.array(hs, dtype=np.int64), horizons, float(t_denominator), velocity_inputs)

    def __len__(self):
        return len(self.t)

    def gather(self, idx):
        """Features and residual targets for the pairs at ``idx``, grouped by mesh.

        Yields (mesh, positions_in_idx, features (N, B, D), targets (N, B, 3)).
        """
        from .model import assemble_features

        idx = np.asarray(idx)
        groups: dict[int, list[int]] = {}
        for pos, i in enumerate(idx):
            mesh = self.prepared[self.traj_index[i]].traj.mesh
            groups.setdefault(id(mesh), []).append(pos)
        for positions in groups.values():
            sel = idx[positions]
            mesh = self.prepared[self.traj_index[sel[0]]].traj.mesh
            states, ctx, tgts = [], [], []
            for i in sel:
                p = self.prepared[self.traj_index[i]]
                t, h = self.t[i], self.h[i]
                states.append(p.state[t - 1])
                ctx.append(p.context[t - 1])
                tgts.append(p.state[t + h - 1] - p.state[t - 1])
            feats = assemble_features(np.stack(states, axis=1), np.stack(ctx, axis=1),
                                      self.t[sel] / self.t_denominator,
                                      self.h[sel] / self.horizons.h_max, self.velocity_inputs)
            yield mesh, np.asarray(positions), feats, np.stack(tgts, axis=1)


# -- trajectory file format -------------------------------------------------------
#
#   offset  size    field
#   0       8       magic b"HGNNTRAJ"
#   8       4       u32 version (1)
#   12      4       u32 reserved (0)
#   16      4+L     u32 byte length L, then UTF-8 scenario id
#   ...     8       f64 melt rate (m/a)
#   ...     32      u64 T, u64 N, u64 C, u64 S
#   ...             C channel names, then S static names, each u32 length + UTF-8
#   ...     32      SHA-256 of the mesh file encoding
#   ...     8*N*S   static features f64, (n, s) order
#   ...     8*T*N*C states f64, (t, n, c) order
#
# little-endian throughout.

TRAJ_MAGIC = b"HGNNTRAJ"
TRAJ_VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_trajectory(traj: Trajectory) -> bytes:
    T, N, C = traj.states.shape
    S = traj.static_features.shape[1]
    out = bytearray(TRAJ_MAGIC + struct.pack("<II", TRAJ_VERSION, 0))
    out += _pack_str(traj.scenario_id)
    out += struct.pack("<dQQQQ", float(traj.melt_rate), T, N, C, S)
    for name in tuple(traj.channel_names) + tuple(traj.static_names):
        out += _pack_str(name)
    out += traj.mesh.content_hash()
    out += np.ascontiguousarray(traj.static_features, dtype="<f8").tobytes()
    out += np.ascontiguousarray(traj.states, dtype="<f8").tobytes()
    return bytes(out)


def decode_trajectory(buf: bytes, mesh: MeshGraph) -> Trajectory:
    if buf[:8] != TRAJ_MAGIC:
        raise DataError("not a trajectory file (bad magic)")
    version, _ = struct.unpack_from("<II", buf, 8)
    if version != TRAJ_VERSION:
        raise DataError(f"unsupported trajectory version {version}")
    off = 16

    def read_str():
        nonlocal off
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        s = bytes(buf[off:off + n]).decode("utf-8")
        off += n
        return s

    sid = read_str()
    melt, T, N, C, S = struct.unpack_from("<dQQQQ", buf, off)
    off += 40
    names = tuple(read_str() for _ in range(C))
    static_names = tuple(read_str() for _ in range(S))
    mesh_hash = bytes(buf[off:off + 32])
    off += 32
    if mesh_hash != mesh.content_hash():
        raise DataError(f"trajectory {sid} was written for a different mesh")
    if N != mesh.node_count:
        raise DataError("trajectory node count differs from mesh")
    expected = off + 8 * (N * S + T * N * C)
    if len(buf) != expected:
        raise DataError(f"trajectory file size {len(buf)} != expected {expected}")
    static = np.frombuffer(buf, "<f8", N * S, off).reshape(N, S).astype(np.float64)
    off += 8 * N * S
    states = np.frombuffer(buf, "<f8", T * N * C, off).reshape(T, N, C).astype(np.float64)
    return Trajectory(mesh, sid, melt, static, states, names, static_names)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_bytes(encode_trajectory(traj))


def load_trajectory(path, mesh: MeshGraph) -> Trajectory:
    return decode_trajectory(Path(path).read_bytes(), mesh)
