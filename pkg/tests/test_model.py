import numpy as np
import pytest

from grade_gcl import (
    AugmentConfig,
    backward,
    encode,
    graph_from_edges,
    identity_view,
    init_params,
    load_checkpoint,
    make_view,
    project_normalize,
    propagate,
    save_checkpoint,
    total_objective,
)
from grade_gcl.errors import UsageError
from grade_gcl.model import ModelParams

from conftest import dense_transition, random_graph

# Fixture seeds chosen so the finite-difference oracle is well-posed: no
# zero-norm projector rows (the loss is discontinuous in the parameters
# there), no pre-activation within reach of the 1e-5 step, and every
# gradient entry above the 1e-8 reporting threshold sits well clear of the
# central-difference noise floor (~1e-11 absolute on an O(1) objective).
FD_SEEDS = [14, 21, 35, 41, 61]


def two_view_fixture(seed, n=10, num_features=6, hidden=5, embed=4, proj=3):
    rng = np.random.default_rng(seed)
    graph = random_graph(seed, n=n, num_features=num_features)
    params = init_params(num_features, hidden, embed, proj, 2, rng)
    cfg = AugmentConfig(zeta=2, p_edr=0.3, p_fdr=0.2, aug_mode="random_drop")
    v1 = make_view(graph, None, cfg, "random_drop", seed * 1000 + 1)
    v2 = make_view(graph, None, cfg, "random_drop", seed * 1000 + 2)
    return graph, params, v1, v2


def loss_and_grads(graph, params, v1, v2, tau=0.7):
    params.zero_grads()
    h1, t1 = encode(v1, graph, params)
    z1 = project_normalize(h1, params, t1)
    h2, t2 = encode(v2, graph, params)
    z2 = project_normalize(h2, params, t2)
    J, g1, g2 = total_objective(z1, z2, tau)
    backward(t1, -g1, params)
    backward(t2, -g2, params)
    return -J


def loss_only(graph, params, v1, v2, tau=0.7):
    h1, t1 = encode(v1, graph, params)
    z1 = project_normalize(h1, params, t1)
    h2, t2 = encode(v2, graph, params)
    z2 = project_normalize(h2, params, t2)
    return -total_objective(z1, z2, tau)[0]


def test_encode_identity_weights_reproduces_propagation():
    graph = random_graph(3, n=8, num_features=4)
    feats = np.abs(graph.features)
    graph.features[:] = feats  # nonnegative so ReLU stays inactive
    params = init_params(4, 4, 4, 3, 1, np.random.default_rng(0))
    params.W1[:] = np.eye(4)
    h, _ = encode(identity_view(graph), graph, params)
    assert np.max(np.abs(h - propagate(graph, graph.features))) < 1e-14


def test_encode_all_negative_preactivations_give_zero():
    graph = random_graph(4, n=6, num_features=3)
    graph.features[:] = np.abs(graph.features)
    params = init_params(3, 3, 3, 2, 1, np.random.default_rng(0))
    params.W1[:] = -np.eye(3)
    h, _ = encode(identity_view(graph), graph, params)
    assert np.all(h == 0.0)


def test_encode_matches_dense_oracle():
    rng = np.random.default_rng(9)
    graph = random_graph(9, n=8, num_features=5)
    params = init_params(5, 4, 4, 3, 2, rng)
    cfg = AugmentConfig(zeta=2, p_edr=0.4, p_fdr=0.3, aug_mode="random_drop")
    view = make_view(graph, None, cfg, "random_drop", 55)
    h, _ = encode(view, graph, params)
    dense = dense_transition([nl.members for nl in view.neighbor_lists], 8)
    h1 = np.maximum(dense @ view.masked_features @ params.W1, 0.0)
    expected = np.maximum(dense @ h1 @ params.W2, 0.0)
    assert np.max(np.abs(h - expected)) < 1e-10


def test_project_normalize_unit_rows():
    graph, params, v1, _ = two_view_fixture(1)
    h, tape = encode(v1, graph, params)
    z = project_normalize(h, params, tape)
    norms = np.linalg.norm(z, axis=1)
    live = norms > 0
    assert np.all(np.abs(norms[live] - 1.0) < 1e-9)


def test_project_normalize_identity_projector():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((6, 4))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    params = init_params(4, 4, 4, 4, 1, rng)
    params.P1[:] = np.eye(4)
    params.b1[:] = 0.0
    params.P2[:] = np.eye(4)
    params.b2[:] = 0.0
    graph = random_graph(2, n=6, num_features=4)
    _, tape = encode(identity_view(graph), graph, params)
    z = project_normalize(np.abs(h), params, tape)  # positive rows dodge the ReLU
    expected = np.abs(h) / np.linalg.norm(np.abs(h), axis=1, keepdims=True)
    assert np.max(np.abs(z - expected)) < 1e-12


def test_cosine_equals_dot_after_normalization():
    graph, params, v1, v2 = two_view_fixture(21, n=12)
    h1, t1 = encode(v1, graph, params)
    z1 = project_normalize(h1, params, t1)
    h2, t2 = encode(v2, graph, params)
    z2 = project_normalize(h2, params, t2)
    g1 = t1.proj_pre2
    g2 = t2.proj_pre2
    assert t1.zero_norm_rows.size == 0 and t2.zero_norm_rows.size == 0
    for i in range(graph.num_nodes):
        cos = g1[i] @ g2[i] / (np.linalg.norm(g1[i]) * np.linalg.norm(g2[i]))
        assert abs(cos - z1[i] @ z2[i]) < 1e-12


def test_backward_zero_upstream_leaves_grads_unchanged():
    graph, params, v1, _ = two_view_fixture(6)
    h, tape = encode(v1, graph, params)
    project_normalize(h, params, tape)
    params.zero_grads()
    backward(tape, np.zeros((graph.num_nodes, params.proj_dim)), params)
    assert all(np.all(g == 0.0) for g in params.grads.values())


def test_backward_is_linear_in_upstream():
    graph, params, v1, _ = two_view_fixture(8)
    rng = np.random.default_rng(0)
    upstream = rng.standard_normal((graph.num_nodes, params.proj_dim))

    h, tape = encode(v1, graph, params)
    project_normalize(h, params, tape)
    params.zero_grads()
    backward(tape, upstream, params)
    single = {k: v.copy() for k, v in params.grads.items()}

    h, tape = encode(v1, graph, params)
    project_normalize(h, params, tape)
    params.zero_grads()
    backward(tape, 2.0 * upstream, params)
    for name, g in params.grads.items():
        assert np.max(np.abs(g - 2.0 * single[name])) < 1e-12


def test_backward_rejects_consumed_tape():
    graph, params, v1, _ = two_view_fixture(9)
    h, tape = encode(v1, graph, params)
    project_normalize(h, params, tape)
    upstream = np.zeros((graph.num_nodes, params.proj_dim))
    backward(tape, upstream, params)
    with pytest.raises(UsageError):
        backward(tape, upstream, params)


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_gradients_match_finite_differences(seed):
    graph, params, v1, v2 = two_view_fixture(seed, n=12)
    loss_and_grads(graph, params, v1, v2)
    step = 1e-5
    for name, tensor in params.named_tensors():
        analytic = params.grads[name].copy()
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if abs(analytic[idx]) <= 1e-8:
                continue
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_only(graph, params, v1, v2)
            tensor[idx] = orig - step
            down = loss_only(graph, params, v1, v2)
            tensor[idx] = orig
            fd = (up - down) / (2 * step)
            rel = abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]))
            assert rel <= 1e-4, f"{name}{idx}: fd={fd} analytic={analytic[idx]}"


def test_encode_deterministic():
    graph, params, v1, _ = two_view_fixture(10)
    h1, _ = encode(v1, graph, params)
    h2, _ = encode(v1, graph, params)
    assert np.array_equal(h1, h2)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(21)
    for layers in (1, 2):
        params = init_params(6, 5, 4, 3, layers, rng)
        path = tmp_path / f"ckpt_{layers}.bin"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.layers == layers
        for (name, a), (_, b) in zip(params.named_tensors(), loaded.named_tensors()):
            assert np.array_equal(a, b), name
        second = tmp_path / f"ckpt_{layers}_again.bin"
        save_checkpoint(loaded, second)
        assert path.read_bytes() == second.read_bytes()


def test_single_layer_encode_shape():
    graph = random_graph(13, n=7, num_features=5)
    params = init_params(5, 0, 3, 2, 1, np.random.default_rng(1))
    h, _ = encode(identity_view(graph), graph, params)
    assert h.shape == (7, 3)
