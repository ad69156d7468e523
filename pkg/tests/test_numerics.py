import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artsim.graph import Graph
from artsim.numerics import (
    AdamState,
    CheckpointError,
    NonFiniteGradient,
    Tape,
    Tensor,
    adam_step,
    dumps_params,
    load_params,
    loads_params,
    save_params,
)

from gradcheck import PRIMITIVES, REL_TOL, check, path4, primitive_arrays, random_composition, random_graph


def test_tensor_grad_allocated_iff_tracked():
    assert Tensor(np.ones((2, 3))).grad is None
    t = Tensor(np.ones((2, 3)), requires_grad=True)
    assert t.grad.shape == (2, 3) and not t.grad.any()


def test_matmul_identity():
    tape = Tape()
    b = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(tape.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)


def test_mean_neighbors_of_identical_rows():
    g = Graph.from_edges(4, [0, 0, 0], [1, 2, 3])
    x = np.tile([[2.0, -1.0, 0.5]], (4, 1))
    x[0] = 99.0
    out = Tape().csr_mean_neighbors(Tensor(x), g).data
    assert np.array_equal(out[0], [2.0, -1.0, 0.5])


def test_mean_neighbors_isolated_node_is_zero():
    g = Graph.from_edges(3, [0], [1])
    out = Tape().csr_mean_neighbors(Tensor(np.ones((3, 2))), g).data
    assert np.array_equal(out[2], [0.0, 0.0])


def test_row_l2_distance_345():
    d = Tape().row_l2_distance(Tensor([[3.0, 4.0]]), Tensor([[0.0, 0.0]]))
    assert d.item() == 5.0


def test_l2_gradient_at_zero_distance_is_zero():
    tape = Tape()
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    y = Tensor([[1.0, 2.0]], requires_grad=True)
    tape.backward(tape.sum(tape.row_l2_distance(x, y)))
    assert not x.grad.any() and not y.grad.any()


def test_relu_mask_gradient():
    tape = Tape()
    x = Tensor([[1.5, -2.0, 0.0, 3.0]], requires_grad=True)
    tape.backward(tape.sum(tape.relu(x)))
    assert np.array_equal(x.grad, [[1.0, 0.0, 0.0, 1.0]])


def test_fan_out_accumulates():
    tape = Tape()
    x = Tensor([[2.0, 3.0]], requires_grad=True)
    tape.backward(tape.sum(tape.add(x, tape.scale(x, 4.0))))
    assert np.array_equal(x.grad, [[5.0, 5.0]])


def test_backward_requires_scalar():
    tape = Tape()
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="1x1"):
        tape.backward(tape.relu(x))


def test_shape_mismatch_is_contract_violation():
    with pytest.raises(ValueError, match="matmul"):
        Tape().matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match="rows"):
        Tape().csr_mean_neighbors(Tensor(np.ones((3, 2))), path4())


def test_mean_neighbors_grad_matches_dense_oracle():
    g = path4()
    dense = np.zeros((4, 4))
    for v in range(4):
        nb = g.neighbors(v)
        dense[v, nb] = 1.0 / len(nb)
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = rng.normal(size=(4, 3))
    tape = Tape()
    out = tape.csr_mean_neighbors(x, g)
    assert np.allclose(out.data, dense @ x.data, rtol=0, atol=1e-15)
    tape.backward(tape.sum(tape.matmul(Tensor(np.ones((1, 4))), tape.relu(tape.add(out, Tensor(w + 10))))))
    assert np.allclose(x.grad, dense.T @ np.ones((4, 3)), rtol=0, atol=1e-15)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradcheck(name):
    build, shapes = PRIMITIVES[name]
    assert check(build, primitive_arrays(shapes, name)) < REL_TOL


@pytest.mark.parametrize("seed", range(10))
def test_random_composition_gradcheck(seed):
    assert check(*random_composition(seed)) < REL_TOL


def test_tape_replay_is_deterministic():
    build, arrays = random_composition(3)

    def run():
        tape = Tape()
        ts = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
        out = build(tape, ts)
        tape.backward(out)
        return out.data.tobytes(), [ts[k].grad.tobytes() for k in sorted(ts)]

    assert run() == run()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mean_neighbors_rows_are_convex_combinations(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(12, 0.3, rng)
    x = rng.normal(size=(12, 3))
    out = Tape().csr_mean_neighbors(Tensor(x), g).data
    for v in range(12):
        nb = g.neighbors(v)
        if nb.size == 0:
            assert not out[v].any()
            continue
        assert np.all(out[v] >= x[nb].min(axis=0) - 1e-12)
        assert np.all(out[v] <= x[nb].max(axis=0) + 1e-12)


# -- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([[1.0, -2.0]])}
    before = p["w"].copy()
    state = AdamState()
    for _ in range(3):
        adam_step(p, {"w": np.zeros((1, 2))}, state)
    assert np.array_equal(p["w"], before)
    assert state.step == 3


def test_adam_first_step_value():
    p = {"w": np.array([[0.0]])}
    adam_step(p, {"w": np.array([[1.0]])}, AdamState(lr=0.001))
    # m_hat = v_hat = 1 at step one
    assert p["w"][0, 0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_asymptote():
    p = {"w": np.array([[0.0, 0.0]])}
    state = AdamState(lr=0.01)
    g = {"w": np.array([[3.0, -0.2]])}
    prev = p["w"].copy()
    for _ in range(2000):
        prev = p["w"].copy()
        adam_step(p, g, state)
    step = p["w"] - prev
    assert np.allclose(step, [[-0.01, 0.01]], rtol=1e-6)


def test_adam_nonfinite_gradient_names_param():
    p = {"enc.w": np.zeros((1, 1))}
    with pytest.raises(NonFiniteGradient, match="enc.w"):
        adam_step(p, {"enc.w": np.array([[np.inf]])}, AdamState())


def test_adam_is_deterministic():
    def run():
        p = {"w": np.linspace(-1, 1, 6).reshape(2, 3).astype(np.float32)}
        s = AdamState()
        rng = np.random.default_rng(0)
        for _ in range(5):
            adam_step(p, {"w": rng.normal(size=(2, 3)).astype(np.float32)}, s)
        return p["w"].tobytes()

    assert run() == run()


# -- PRMS ------------------------------------------------------------------------------


def test_prms_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"input.weight": rng.normal(size=(3, 4)).astype(np.float32), "naïve.bias": np.zeros((1, 4), np.float32)}
    save_params(params, tmp_path / "a.prms")
    back = load_params(tmp_path / "a.prms")
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    assert dumps_params(back) == (tmp_path / "a.prms").read_bytes()


def test_prms_layout():
    blob = dumps_params({"ab": np.array([[1.0]], np.float32)})
    assert blob == b"PRMS" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"ab" + (1).to_bytes(4, "little") * 2 + np.float32(1).tobytes()


def test_prms_errors():
    with pytest.raises(CheckpointError, match="magic"):
        loads_params(b"NOPE")
    blob = dumps_params({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(CheckpointError):
        loads_params(blob[:-2])
