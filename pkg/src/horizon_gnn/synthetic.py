"""Desk-scale stand-in for transient ice-sheet simulations on a graph.

A transparent toy, not a glaciology model. Per month::

    H[t+1] = H[t] + kappa * L H[t] - mu * melt * f[t] + smb + noise * xi
    L H_i  = sum_{j ~ i} (H_j - H_i) / (deg_i + 1)

``L`` is the row-normalized (random-walk) graph smoothing minus identity, so a
constant field is an exact fixed point and ``0 < kappa <= 1`` keeps the
update a convex combination. Thickness is floored at zero. Diagnostics are
derived from thickness and the fixed bed:

* floating ratio ``f = sigmoid((H_float - H) / width)`` with
  ``H_float = max(0, -bed * rho_w / rho_i)``;
* surface ``s = (1 - f) (bed + H) + f H (1 - rho_i / rho_w)``, base ``s - H``;
* velocity ``V = -g (1 + 3 f) grad s`` where ``grad s`` (m/km) is the
  degree-averaged edge-difference gradient along position offsets.

Melt only removes ice and every term is monotone in ``H``, so with shared
noise a higher melt rate never yields thicker ice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .dataset import MELT_RATES, STATE_CHANNELS, STATIC_CHANNELS, Trajectory
from .errors import NumericalError
from .graph import MeshGraph, build_mesh_graph, connected_components

log = logging.getLogger(__name__)

RHO_ICE = 917.0
RHO_WATER = 1028.0


@dataclass(frozen=True)
class SyntheticConfig:
    node_count: int = 300
    extent_km: tuple[float, float] = (80.0, 40.0)
    mesh_seed: int = 0
    neighbors: int = 6
    melt_rate: float = 0.0
    T: int = 240
    kappa: float = 0.1
    velocity_gain: float = 1.0
    melt_sensitivity: float = 0.002
    accumulation: float = 0.05      # mean surface mass balance, m per month
    noise: float = 1e-3             # std of thickness noise, m per month
    seed: int = 0
    float_width: float = 20.0       # m, sharpness of the floating transition
    flat_thickness: float | None = None

    def validate(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa={self.kappa} is outside the stable range (0, 1]")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.node_count < 1:
            raise ValueError("node_count must be positive")


def generate_mesh(config: SyntheticConfig) -> MeshGraph:
    """Random points joined to their k nearest neighbours, then bridged until connected."""
    rng = np.random.default_rng(config.mesh_seed)
    n = config.node_count
    lx, ly = config.extent_km
    pos = rng.uniform((0.0, 0.0), (lx, ly), size=(n, 2))
    if n == 1:
        return build_mesh_graph(1, [], pos)
    k = min(config.neighbors, n - 1)
    tree = cKDTree(pos)
    _, nbr = tree.query(pos, k=k + 1)
    edges = [(i, int(j)) for i in range(n) for j in nbr[i, 1:] if j != i]
    graph = build_mesh_graph(n, edges, pos)

    labels = connected_components(graph)
    while len(np.unique(labels)) > 1:
        # bridge the component of node 0 to its nearest outside node
        inside = labels == labels[0]
        a_idx = np.flatnonzero(inside)
        b_idx = np.flatnonzero(~inside)
        d = np.linalg.norm(pos[a_idx, None, :] - pos[None, b_idx, :], axis=-1)
        ia, ib = np.unravel_index(np.argmin(d), d.shape)
        edges.append((int(a_idx[ia]), int(b_idx[ib])))
        graph = build_mesh_graph(n, edges, pos)
        labels = connected_components(graph)
    return graph


def bed_elevation(pos: np.ndarray, extent) -> np.ndarray:
    x, y = pos[:, 0], pos[:, 1]
    return 200.0 - 14.0 * x + 80.0 * np.cos(2.0 * np.pi * y / extent[1])


def initial_thickness(pos: np.ndarray, config: SyntheticConfig) -> np.ndarray:
    if config.flat_thickness is not None:
        return np.full(len(pos), float(config.flat_thickness))
    lx, ly = config.extent_km
    x, y = pos[:, 0], pos[:, 1]
    h = 1400.0 - 11.0 * x + 120.0 * np.exp(-(((y - ly / 2) / 8.0) ** 2))
    rng = np.random.default_rng(config.mesh_seed + 7919)
    for _ in range(4):
        cx, cy = rng.uniform((0, 0), (lx, ly))
        amp = rng.uniform(-60.0, 60.0)
        h += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * 8.0 ** 2))
    return np.maximum(h, 0.0)


def _directed_edges(mesh: MeshGraph):
    e = mesh.edges
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    return src, dst


def _diagnostics(h, bed, mesh, src, dst, offsets, inv_d2, config):
    h_float = np.maximum(0.0, -bed * RHO_WATER / RHO_ICE)
    f = 1.0 / (1.0 + np.exp(-(h_float - h) / config.float_width))
    surface = (1.0 - f) * (bed + h) + f * h * (1.0 - RHO_ICE / RHO_WATER)
    base = surface - h
    n = mesh.node_count
    ds = (surface[dst] - surface[src]) * inv_d2
    deg = np.maximum(mesh.degree, 1)
    gx = np.bincount(src, weights=ds * offsets[:, 0], minlength=n) / deg
    gy = np.bincount(src, weights=ds * offsets[:, 1], minlength=n) / deg
    gain = -config.velocity_gain * (1.0 + 3.0 * f)
    vx, vy = gain * gx, gain * gy
    return np.stack([vx, vy, h, surface, base, f, np.hypot(vx, vy)], axis=-1)


def surface_mass_balance(mesh: MeshGraph, config: SyntheticConfig) -> np.ndarray:
    x = mesh.node_positions[:, 0]
    return config.accumulation * (1.0 - 0.5 * x / config.extent_km[0])


def generate_trajectory(mesh: MeshGraph, config: SyntheticConfig) -> Trajectory:
    config.validate()
    pos = mesh.node_positions
    bed = bed_elevation(pos, config.extent_km)
    src, dst = _directed_edges(mesh)
    offsets = pos[dst] - pos[src]
    d2 = np.einsum("ij,ij->i", offsets, offsets)
    inv_d2 = np.where(d2 > 0, 1.0 / np.where(d2 > 0, d2, 1.0), 0.0)
    n = mesh.node_count
    w = 1.0 / (mesh.degree + 1.0)
    smb = surface_mass_balance(mesh, config)
    rng = np.random.default_rng(config.seed)

    h = initial_thickness(pos, config)
    states = np.empty((config.T, n, len(STATE_CHANNELS)))
    # non-finite values are detected explicitly, so numpy's own warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(config.T):
            states[t] = _diagnostics(h, bed, mesh, src, dst, offsets, inv_d2, config)
            if not np.all(np.isfinite(states[t])):
                raise NumericalError(f"non-finite state at month {t + 1} (melt={config.melt_rate})")
            if t == config.T - 1:
                break
            f = states[t, :, 5]
            lap = w * np.bincount(src, weights=h[dst] - h[src], minlength=n)
            xi = rng.standard_normal(n)
            h = h + config.kappa * lap - config.melt_sensitivity * config.melt_rate * f + smb \
                + config.noise * xi
            h = np.maximum(h, 0.0)

    static = np.stack([np.full(n, float(config.melt_rate)), smb], axis=-1)
    traj = Trajectory(mesh, f"melt{int(round(config.melt_rate)):03d}", float(config.melt_rate),
                      static, states, STATE_CHANNELS, STATIC_CHANNELS)
    traj.validate()
    return traj


def generate_sweep(config: SyntheticConfig, melt_rates=MELT_RATES):
    """One mesh and one trajectory per melt rate, sharing the physics seed."""
    mesh = generate_mesh(config)
    trajs = [generate_trajectory(mesh, replace(config, melt_rate=float(m))) for m in melt_rates]
    log.info("generated %d trajectories on %d nodes", len(trajs), mesh.node_count)
    return mesh, trajs
