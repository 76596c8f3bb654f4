import numpy as np
import pytest

from horizon_gnn.autodiff import Tape, backward, finite_diff_check, matmul, relu

from conftest import random_graph


def test_matmul_examples():
    assert matmul([[1, 2], [3, 4]], np.eye(2)).tolist() == [[1, 2], [3, 4]]
    assert matmul([[1, 2]], [[3], [5]]).tolist() == [[13]]
    assert not np.any(matmul([[1, 2], [3, 4]], np.zeros((2, 3))))
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_relu_examples():
    assert relu([[-1, 2]]).tolist() == [[0, 2]]
    assert relu(np.zeros((2, 2))).tolist() == [[0, 0], [0, 0]]
    assert relu([[3.5]]).tolist() == [[3.5]]


def test_backward_scalar_quadratic():
    tape = Tape()
    w = tape.param([[1.0]])
    x = tape.constant([[2.0]])
    y = tape.constant([[0.0]])
    loss = tape.square_mean(tape.subtract(tape.matmul(x, w), y))
    grads = backward(tape, loss)
    assert grads[w].tolist() == [[8.0]]


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    w = tape.param(np.ones((2, 2)))
    p = tape.param(np.full((3,), 5.0))
    loss = tape.square_mean(tape.matmul(tape.constant(np.ones((1, 2))), w))
    grads = tape.backward(loss)
    assert grads[p].tolist() == [0.0, 0.0, 0.0]
    assert np.all(grads[w] != 0)


def test_relu_gradient_is_zero_at_and_below_zero():
    tape = Tape()
    x = tape.param([[-1.0, 0.0, 2.0]])
    loss = tape.square_mean(tape.relu(x))
    g = tape.backward(loss)[x]
    assert g[0, 0] == 0.0
    assert g[0, 1] == 0.0
    assert g[0, 2] == pytest.approx(2 * 2.0 / 3)


def test_non_scalar_loss_rejected():
    tape = Tape()
    w = tape.param(np.ones((2, 2)))
    with pytest.raises(ValueError):
        backward(tape, tape.relu(w))


def _weighted(tape, node, weights):
    """A generic scalar readout sum(w * node), built from recorded primitives."""
    return tape.square_mean(tape.add(node, tape.constant(weights)))


@pytest.mark.parametrize("op", ["matmul", "spmm", "add_bias", "relu", "tanh", "concat", "slice",
                                "scale", "add", "subtract", "square_mean"])
def test_each_primitive_matches_finite_differences(op, rng):
    g = random_graph(rng, 6, p=0.5)
    x0 = rng.standard_normal((6, 3))
    if op == "relu":
        x0 = np.where(np.abs(x0) < 0.05, 0.5, x0)  # keep away from the kink
    params = {"x": x0, "w": rng.standard_normal((3, 4)), "b": rng.standard_normal(3),
              "y": rng.standard_normal((6, 3))}
    weights = {"matmul": (6, 4), "concat": (6, 6), "slice": (6, 2)}
    shift = rng.standard_normal(weights.get(op, (6, 3)))

    def f(tape, p):
        x = p["x"]
        out = {
            "matmul": lambda: tape.matmul(x, p["w"]),
            "spmm": lambda: tape.spmm(g, x),
            "add_bias": lambda: tape.add_bias(x, p["b"]),
            "relu": lambda: tape.relu(x),
            "tanh": lambda: tape.tanh(x),
            "concat": lambda: tape.concat([x, p["y"]]),
            "slice": lambda: tape.slice(x, 1, 3),
            "scale": lambda: tape.scale(x, -2.5),
            "add": lambda: tape.add(x, p["y"]),
            "subtract": lambda: tape.subtract(x, p["y"]),
            "square_mean": lambda: x,
        }[op]()
        return _weighted(tape, out, shift)

    linear = op not in ("relu", "tanh")
    report = finite_diff_check(f, params, epsilon=1e-5)
    assert report.max_rel_error < (1e-6 if linear else 1e-4), report


def test_finite_diff_check_quadratic():
    def f(tape, p):
        return tape.square_mean(tape.subtract(tape.matmul(p["a"], p["w"]), tape.constant([[1.0], [2.0]])))

    params = {"a": np.array([[1.0, 2.0], [3.0, -1.0]]), "w": np.array([[0.3], [-0.7]])}
    assert finite_diff_check(f, params, 1e-5).max_rel_error < 1e-6


def test_finite_diff_check_constant_loss():
    def f(tape, p):
        return tape.constant(3.0)

    report = finite_diff_check(f, {"w": np.ones((2, 2))}, 1e-5)
    assert report.max_rel_error == 0.0 and report.max_abs_error == 0.0


def test_finite_diff_check_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t, p: t.constant(0.0), {"w": np.ones(1)}, 0.0)


def test_backward_deterministic(rng):
    g = random_graph(rng, 12)
    x = rng.standard_normal((12, 5))
    w0 = rng.standard_normal((5, 5))

    def run():
        tape = Tape()
        w = tape.param(w0)
        h = tape.relu(tape.matmul(tape.spmm(g, tape.constant(x)), w))
        h = tape.matmul(tape.spmm(g, h), w)
        return tape.backward(tape.square_mean(h))[w]

    assert run().tobytes() == run().tobytes()


def test_reused_node_accumulates_gradient():
    tape = Tape()
    x = tape.param([[3.0]])
    loss = tape.square_mean(tape.add(x, x))  # (2x)^2 -> 8x
    assert tape.backward(loss)[x].tolist() == [[24.0]]


def test_constant_only_ops_are_not_recorded():
    tape = Tape()
    a = tape.constant(np.ones((2, 2)))
    tape.relu(tape.matmul(a, a))
    assert len(tape) == 0
