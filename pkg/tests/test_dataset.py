import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_gnn.dataset import (MELT_RATES, STATE_CHANNELS, HorizonSet, NormStats, PairSet,
                                 SamplePair, Trajectory, assemble_input, compute_norm_stats,
                                 context_features, decode_trajectory, encode_trajectory,
                                 enumerate_pairs, load_trajectory, pair_count, residual_target,
                                 save_trajectory, split_by_melt_rate)
from horizon_gnn.errors import DataError
from horizon_gnn.graph import build_mesh_graph
from horizon_gnn.model import assemble_features
from horizon_gnn.synthetic import SyntheticConfig, generate_mesh, generate_trajectory


@pytest.fixture(scope="module")
def small_sweep():
    cfg = SyntheticConfig(node_count=30, T=24)
    mesh = generate_mesh(cfg)
    trajs = [generate_trajectory(mesh, SyntheticConfig(node_count=30, T=24, melt_rate=m))
             for m in (0, 2, 4, 10, 20)]
    return mesh, trajs


def fake_traj(melt, T=3, n=2, mesh=None):
    mesh = mesh or build_mesh_graph(n, [(0, 1)])
    states = np.zeros((T, n, len(STATE_CHANNELS)))
    return Trajectory(mesh, f"m{melt}", melt, np.zeros((n, 2)), states)


# -- horizon sets and pair enumeration ------------------------------------------

def test_horizon_set_normalizes():
    hs = HorizonSet([15, 1, 15, 6])
    assert hs.horizons == (1, 6, 15) and hs.h_max == 15 and hs.psi(15) == 1.0
    assert HorizonSet.parse("{1, 30}").horizons == (1, 30)
    assert str(HorizonSet([30, 1])) == "1,30"
    with pytest.raises(ValueError):
        HorizonSet([])
    with pytest.raises(ValueError):
        HorizonSet([0, 1])


def test_pair_examples():
    assert len(enumerate_pairs(240, HorizonSet([1]))) == 239
    assert len(enumerate_pairs(240, HorizonSet([1, 15, 30]))) == 674
    assert enumerate_pairs(2, HorizonSet([1]), "x") == [SamplePair("x", 1, 1)]


def test_pair_horizon_too_long_gives_no_pairs():
    pairs = enumerate_pairs(10, HorizonSet([1, 10, 50]))
    assert len(pairs) == 9 and all(p.h == 1 for p in pairs)


def test_pair_errors():
    with pytest.raises(ValueError):
        enumerate_pairs(1, HorizonSet([1]))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 300), st.sets(st.integers(1, 400), min_size=1, max_size=6))
def test_pair_count_closed_form(T, hs):
    H = HorizonSet(hs)
    pairs = enumerate_pairs(T, H)
    assert len(pairs) == pair_count(T, H) == sum(max(T - h, 0) for h in hs)
    assert all(1 <= p.t <= T - p.h for p in pairs)
    assert pairs == sorted(pairs, key=lambda p: (p.h, p.t))
    assert len(set(pairs)) == len(pairs)


# -- splits ---------------------------------------------------------------------

def test_split_full_sweep_sizes():
    mesh = build_mesh_graph(2, [(0, 1)])
    train, val, test = split_by_melt_rate([fake_traj(m, mesh=mesh) for m in MELT_RATES])
    assert (len(train), len(val), len(test)) == (28, 4, 4)
    assert sorted(t.melt_rate for t in val) == [0, 20, 40, 60]
    assert sorted(t.melt_rate for t in test) == [10, 30, 50, 70]
    ids = [t.scenario_id for t in train + val + test]
    assert len(set(ids)) == 36


def test_split_single_membership():
    assert split_by_melt_rate([fake_traj(30)])[2][0].melt_rate == 30
    assert split_by_melt_rate([fake_traj(2)])[0][0].melt_rate == 2


@pytest.mark.parametrize("bad", [3, 72, -2, 2.5])
def test_split_rejects_unknown_rate(bad):
    with pytest.raises(DataError):
        split_by_melt_rate([fake_traj(bad)])


# -- normalization --------------------------------------------------------------

def test_norm_stats_constant_channel_flagged():
    tr = fake_traj(2)
    tr.states[..., 2] = 5.0
    stats = compute_norm_stats([tr])
    assert "thickness" in stats.constant and "melt_rate" in stats.constant
    assert np.all(stats.state_std > 0) and np.all(stats.static_std > 0)
    assert np.all(stats.normalize_states(tr.states)[..., 2] == 0)


def test_mean_channel_normalizes_to_zero(small_sweep):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs[:3])
    x = np.broadcast_to(stats.state_mean, (5, 7)).copy()
    assert np.all(stats.normalize_states(x) == 0)


def test_normalize_roundtrip(small_sweep, rng):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs)
    x = trajs[1].states
    back = stats.denormalize_states(stats.normalize_states(x))
    assert np.max(np.abs(back - x) / np.maximum(np.abs(x), 1.0)) < 1e-12


def test_norm_stats_match_numpy(small_sweep):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs)
    allx = np.concatenate([t.states.reshape(-1, 7) for t in trajs])
    np.testing.assert_allclose(stats.state_mean, allx.mean(0), rtol=1e-12)
    np.testing.assert_allclose(stats.state_std, allx.std(0), rtol=1e-10)


def test_stats_depend_on_training_split_only(small_sweep):
    _, trajs = small_sweep
    train, _, test = split_by_melt_rate(trajs)
    a = compute_norm_stats(train)
    b = compute_norm_stats(train + test)
    assert not np.allclose(a.state_mean, b.state_mean)
    assert a.digest() != b.digest()


def test_stats_text_roundtrip(small_sweep, tmp_path):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs[:2])
    stats.save(tmp_path / "s.txt")
    back = NormStats.load(tmp_path / "s.txt")
    assert back.state_names == stats.state_names and back.constant == stats.constant
    assert np.array_equal(back.state_mean, stats.state_mean)
    assert np.array_equal(back.static_std, stats.static_std)
    assert back.digest() == stats.digest()
    lines = [l for l in stats.to_text().splitlines() if not l.startswith("#")]
    assert lines[0].split()[:2] == ["state", "vx"] and len(lines) == 9
    with pytest.raises(DataError):
        NormStats.from_text("state vx 1.0\n")


# -- inputs and targets ---------------------------------------------------------

def test_assemble_input_fields(small_sweep):
    _, trajs = small_sweep
    tr = trajs[2]
    stats = compute_norm_stats(trajs)
    H = HorizonSet([1, 6])
    inp = assemble_input(tr, 4, 6, stats, H)
    assert inp.h_norm == 1.0 and inp.t_norm == 4 / tr.T
    assert assemble_input(tr, 4, 1, stats, H, t_denominator=240).t_norm == 4 / 240
    np.testing.assert_allclose(inp.state, (tr.at(4)[:, :3] - stats.state_mean[:3]) / stats.state_std[:3])
    assert inp.context.shape == (tr.N, 2 + 4)
    np.testing.assert_array_equal(inp.context, context_features(tr, stats)[3])
    with pytest.raises(ValueError):
        assemble_input(tr, tr.T - 5, 6, stats, H)
    with pytest.raises(ValueError):
        assemble_input(tr, 1, 2, stats, H)


def test_residual_steady_is_zero():
    tr = fake_traj(2, T=5)
    tr.states[:] = np.arange(14.0).reshape(2, 7)
    stats = compute_norm_stats([tr])
    assert not np.any(residual_target(tr, 1, 4, stats))


def test_residual_telescopes_exactly(small_sweep):
    _, trajs = small_sweep
    tr = trajs[3]
    stats = compute_norm_stats(trajs)
    # (a - b) + (b - c) == a - c holds exactly only up to rounding of the differences; the
    # stored states are the same floats, so compare the physical increments bitwise.
    s = stats.prognostic_std
    for t in range(1, tr.T - 1):
        d2 = residual_target(tr, t, 2, stats) * s
        d11 = residual_target(tr, t, 1, stats) * s + residual_target(tr, t + 1, 1, stats) * s
        np.testing.assert_allclose(d2, d11, rtol=0, atol=1e-9 * np.abs(tr.states[..., :3]).max())


def test_residual_invalid_pair(small_sweep):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs)
    with pytest.raises(ValueError):
        residual_target(trajs[0], trajs[0].T, 1, stats)
    with pytest.raises(ValueError):
        residual_target(trajs[0], 1, 0, stats)


def test_pairset_gather_matches_assemble(small_sweep):
    _, trajs = small_sweep
    stats = compute_norm_stats(trajs)
    H = HorizonSet([1, 5])
    ps = PairSet.build(trajs[:2], stats, H, t_denominator=240.0)
    assert len(ps) == 2 * pair_count(24, H)
    idx = np.array([0, 7, len(ps) - 1, 30])
    for mesh, pos, feats, tgts in ps.gather(idx):
        for b, p in enumerate(pos):
            i = idx[p]
            tr = trajs[ps.traj_index[i]]
            t, h = int(ps.t[i]), int(ps.h[i])
            inp = assemble_input(tr, t, h, stats, H, t_denominator=240.0)
            ref = assemble_features(inp.state, inp.context, inp.t_norm, inp.h_norm)
            np.testing.assert_allclose(feats[:, b], ref, rtol=1e-14, atol=1e-14)
            np.testing.assert_allclose(tgts[:, b], residual_target(tr, t, h, stats), rtol=1e-12, atol=1e-12)


# -- trajectory files -----------------------------------------------------------

def test_trajectory_file_roundtrip(small_sweep, tmp_path):
    mesh, trajs = small_sweep
    tr = trajs[1]
    save_trajectory(tr, tmp_path / "a.traj")
    back = load_trajectory(tmp_path / "a.traj", mesh)
    assert back.scenario_id == tr.scenario_id and back.melt_rate == tr.melt_rate
    assert back.channel_names == tr.channel_names and back.static_names == tr.static_names
    assert np.array_equal(back.states, tr.states)
    assert np.array_equal(back.static_features, tr.static_features)
    assert encode_trajectory(back) == encode_trajectory(tr)
    buf = encode_trajectory(tr)
    assert buf[:8] == b"HGNNTRAJ"
    # states are the trailing T*N*C doubles in (t, n, c) order
    tail = np.frombuffer(buf[-8 * tr.states.size:], "<f8").reshape(tr.states.shape)
    assert np.array_equal(tail, tr.states)


def test_trajectory_rejects_wrong_mesh(small_sweep):
    mesh, trajs = small_sweep
    other = generate_mesh(SyntheticConfig(node_count=30, mesh_seed=9))
    buf = encode_trajectory(trajs[0])
    with pytest.raises(DataError):
        decode_trajectory(buf, other)
    with pytest.raises(DataError):
        decode_trajectory(b"NOPE" + buf[4:], mesh)
    with pytest.raises(DataError):
        decode_trajectory(buf[:-3], mesh)


def test_validate_catches_inconsistent_speed(small_sweep):
    _, trajs = small_sweep
    tr = trajs[0]
    tr.validate()
    bad = Trajectory(tr.mesh, "x", 0, tr.static_features, tr.states.copy())
    bad.states[3, 2, 6] += 1e-6
    with pytest.raises(DataError):
        bad.validate()
    bad = Trajectory(tr.mesh, "x", 0, tr.static_features, tr.states.copy())
    bad.states[0, 0, 5] = 1.5
    with pytest.raises(DataError):
        bad.validate()
