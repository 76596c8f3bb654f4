"""Horizon-conditioned residual GCN: five shared graph convolutions, two linear heads."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Node, Tape
from .errors import DataError
from .graph import MeshGraph

N_LAYERS = 5
PROGNOSTIC = 3  # V_x, V_y, H
ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    d_hidden: int = 128
    activation: str = "relu"
    velocity_inputs: bool = True  # False: V_x/V_y left out of the inputs (magnitude only)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.d_in <= 0 or self.d_hidden <= 0:
            raise ValueError("layer widths must be positive")

    @staticmethod
    def input_width(context_width: int, velocity_inputs: bool = True) -> int:
        return (PROGNOSTIC if velocity_inputs else 1) + context_width + 2


@dataclass
class ModelParams:
    gcn_weights: list[np.ndarray]
    vel_w: np.ndarray
    vel_b: np.ndarray
    thk_w: np.ndarray
    thk_b: np.ndarray

    def named(self) -> dict[str, np.ndarray]:
        out = {f"gcn{i}": w for i, w in enumerate(self.gcn_weights)}
        out.update(vel_w=self.vel_w, vel_b=self.vel_b, thk_w=self.thk_w, thk_b=self.thk_b)
        return out

    @classmethod
    def from_named(cls, d: dict) -> "ModelParams":
        return cls(
            [np.asarray(d[f"gcn{i}"], dtype=np.float64) for i in range(N_LAYERS)],
            np.asarray(d["vel_w"], dtype=np.float64),
            np.asarray(d["vel_b"], dtype=np.float64),
            np.asarray(d["thk_w"], dtype=np.float64),
            np.asarray(d["thk_b"], dtype=np.float64),
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_named({k: v.copy() for k, v in self.named().items()})

    @property
    def d_in(self) -> int:
        return self.gcn_weights[0].shape[0]

    @property
    def d_hidden(self) -> int:
        return self.gcn_weights[0].shape[1]

    def validate(self):
        ws = self.gcn_weights
        if len(ws) != N_LAYERS:
            raise ValueError(f"expected {N_LAYERS} GCN weights, got {len(ws)}")
        dh = ws[0].shape[1]
        for i, w in enumerate(ws[1:], 1):
            if w.shape != (dh, dh):
                raise ValueError(f"gcn{i} has shape {w.shape}, expected {(dh, dh)}")
        expect = {"vel_w": (dh, 2), "vel_b": (2,), "thk_w": (dh, 1), "thk_b": (1,)}
        for k, shape in expect.items():
            if getattr(self, k).shape != shape:
                raise ValueError(f"{k} has shape {getattr(self, k).shape}, expected {shape}")
        for k, v in self.named().items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite entries in {k}")

    def zero_heads(self) -> "ModelParams":
        p = self.copy()
        for k in ("vel_w", "vel_b", "thk_w", "thk_b"):
            getattr(p, k)[...] = 0.0
        return p


@dataclass
class ModelInput:
    graph: MeshGraph
    state: np.ndarray     # (N, 3) normalized V_x, V_y, H at the anchor time
    context: np.ndarray   # (N, K) normalized static + diagnostic features
    t_norm: float
    h_norm: float

    def __post_init__(self):
        n = self.graph.node_count
        if self.state.shape != (n, PROGNOSTIC) or self.context.shape[0] != n:
            raise ValueError("state/context row counts must equal the node count")
        if not 0.0 < self.h_norm <= 1.0:
            raise ValueError(f"h_norm must lie in (0, 1], got {self.h_norm}")
        if not 0.0 <= self.t_norm <= 1.0:
            raise ValueError(f"t_norm must lie in [0, 1], got {self.t_norm}")


@dataclass
class ModelOutput:
    delta_velocity: np.ndarray   # (N, 2)
    delta_thickness: np.ndarray  # (N, 1)


def init_params(seed: int, config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero head biases."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    dh = config.d_hidden
    ws = [glorot(config.d_in, dh)] + [glorot(dh, dh) for _ in range(N_LAYERS - 1)]
    return ModelParams(ws, glorot(dh, 2), np.zeros(2), glorot(dh, 1), np.zeros(1))


def assemble_features(state, context, t_norm, h_norm, velocity_inputs=True) -> np.ndarray:
    """Per-node input matrix: state, context, then broadcast t_norm and h_norm columns.

    Works on single samples (N, .) with scalar t/h, or node-major batches
    (N, B, .) with length-B t/h arrays.
    """
    state = np.asarray(state, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if not velocity_inputs:
        state = state[..., 2:3]
    shape = state.shape[:-1] + (1,)
    lead = state.shape[1:-1] + (1,)
    t = np.asarray(t_norm, dtype=np.float64).reshape(lead)
    h = np.asarray(h_norm, dtype=np.float64).reshape(lead)
    return np.concatenate(
        [state, context, np.broadcast_to(t, shape), np.broadcast_to(h, shape)], axis=-1
    )


def forward_nodes(tape: Tape, nodes: dict[str, Node], graph: MeshGraph, features: Node,
                  activation: str = "relu") -> tuple[Node, Node]:
    """Record the network on ``tape``; returns (delta_velocity, delta_thickness) nodes."""
    act = getattr(tape, activation)
    h = features
    for i in range(N_LAYERS):
        h = tape.matmul(tape.spmm(graph, h), nodes[f"gcn{i}"])
        if i < N_LAYERS - 1:
            h = act(h)
    dv = tape.add_bias(tape.matmul(h, nodes["vel_w"]), nodes["vel_b"])
    dh = tape.add_bias(tape.matmul(h, nodes["thk_w"]), nodes["thk_b"])
    return dv, dh


def forward_batch(params: ModelParams, graph: MeshGraph, features: np.ndarray,
                  activation: str = "relu") -> tuple[np.ndarray, np.ndarray]:
    """Inference on (N, D_in) or (N, B, D_in) features; no gradients recorded."""
    if features.shape[-1] != params.d_in:
        raise ValueError(
            f"feature width {features.shape[-1]} does not match d_in={params.d_in}"
        )
    tape = Tape()
    nodes = {k: tape.constant(v) for k, v in params.named().items()}
    dv, dh = forward_nodes(tape, nodes, graph, tape.constant(features), activation)
    return dv.value, dh.value


def forward(params: ModelParams, inp: ModelInput, activation: str = "relu",
            velocity_inputs: bool = True) -> ModelOutput:
    feats = assemble_features(inp.state, inp.context, inp.t_norm, inp.h_norm, velocity_inputs)
    dv, dh = forward_batch(params, inp.graph, feats, activation)
    return ModelOutput(dv, dh)


def preactivations(params: ModelParams, graph: MeshGraph, features: np.ndarray) -> list[np.ndarray]:
    """Inputs to each hidden activation; used to keep gradient checks off relu kinks."""
    from .graph import spmm

    out = []
    h = features
    for i in range(N_LAYERS - 1):
        z = spmm(graph, h) @ params.gcn_weights[i]
        out.append(z)
        h = np.maximum(z, 0.0)
    return out


def reconstruct(anchor_state, delta: ModelOutput) -> np.ndarray:
    """Anchor state plus predicted increments (velocity columns, then thickness)."""
    anchor = np.asarray(anchor_state, dtype=np.float64)
    dv = np.asarray(delta.delta_velocity)
    dh = np.asarray(delta.delta_thickness)
    if anchor.shape[-1] != PROGNOSTIC or dv.shape[:-1] != anchor.shape[:-1] \
            or dv.shape[-1] != 2 or dh.shape != anchor.shape[:-1] + (1,):
        raise ValueError("anchor/delta shapes do not match")
    return anchor + np.concatenate([dv, dh], axis=-1)


# -- checkpoint format -------------------------------------------------------
#
#   offset  size   field
#   0       8      magic b"HGNNCKPT"
#   8       4      u32 version (1)
#   12      4      u32 reserved (0)
#   16      8      i64 seed
#   24      4      u32 d_in
#   28      4      u32 d_hidden
#   32      4      u32 n_layers (5)
#   36      4      u32 activation code (0 relu, 1 tanh, 2 identity)
#   40      4      u32 flags (bit 0: velocity components are inputs)
#   44      4      u32 horizon count K
#   48      4*K    u32 horizons, ascending
#   ...     8      f64 time normalization denominator
#   ...     32     SHA-256 of the normalization-stats text record (zeros if none)
#   ...     then 9 matrices in the order gcn0..gcn4, vel_w, vel_b, thk_w, thk_b,
#           each as u32 rows, u32 cols, rows*cols f64 row-major (biases are 1 x width)
#
# little-endian throughout.

CKPT_MAGIC = b"HGNNCKPT"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    horizons: tuple[int, ...]
    seed: int = 0
    t_denominator: float = 240.0
    stats_hash: bytes = field(default=b"\x00" * 32)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    cfg = ck.config
    hs = tuple(sorted(ck.horizons))
    out = bytearray(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, 0))
    out += struct.pack("<qIIIII", ck.seed, cfg.d_in, cfg.d_hidden, N_LAYERS,
                       ACTIVATIONS.index(cfg.activation), int(cfg.velocity_inputs))
    out += struct.pack("<I", len(hs)) + struct.pack(f"<{len(hs)}I", *hs)
    out += struct.pack("<d", ck.t_denominator)
    if len(ck.stats_hash) != 32:
        raise ValueError("stats hash must be 32 bytes")
    out += ck.stats_hash
    for v in ck.params.named().values():
        m = np.atleast_2d(v)
        out += struct.pack("<II", *m.shape) + np.ascontiguousarray(m, dtype="<f8").tobytes()
    return bytes(out)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    try:
        return _decode_checkpoint(buf)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed checkpoint: {exc}") from exc


def _decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:8] != CKPT_MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version, _ = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    seed, d_in, d_hidden, n_layers, act, flags = struct.unpack_from("<qIIIII", buf, 16)
    if n_layers != N_LAYERS:
        raise DataError(f"checkpoint has {n_layers} layers, expected {N_LAYERS}")
    off = 44
    (k,) = struct.unpack_from("<I", buf, off)
    off += 4
    hs = struct.unpack_from(f"<{k}I", buf, off)
    off += 4 * k
    (tden,) = struct.unpack_from("<d", buf, off)
    off += 8
    stats_hash = bytes(buf[off:off + 32])
    off += 32
    mats = {}
    for name in [f"gcn{i}" for i in range(N_LAYERS)] + ["vel_w", "vel_b", "thk_w", "thk_b"]:
        r, c = struct.unpack_from("<II", buf, off)
        off += 8
        if off + 8 * r * c > len(buf):
            raise DataError("checkpoint truncated")
        m = np.frombuffer(buf, dtype="<f8", count=r * c, offset=off).reshape(r, c).astype(np.float64)
        off += 8 * r * c
        mats[name] = m.reshape(-1) if name.endswith("_b") else m
    if off != len(buf):
        raise DataError("trailing bytes in checkpoint")
    cfg = ModelConfig(d_in, d_hidden, ACTIVATIONS[act], bool(flags & 1))
    params = ModelParams.from_named(mats)
    params.validate()
    return Checkpoint(params, cfg, tuple(hs), seed, tden, stats_hash)


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def with_params(ck: Checkpoint, params: ModelParams) -> Checkpoint:
    return replace(ck, params=params)
