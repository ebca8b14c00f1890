import numpy as np
import pytest

from conftest import probe
from todynet.autodiff import finite_difference_check
from todynet.autodiff.tensor import Parameter, Tensor, no_grad
from todynet.data import partition_slots
from todynet.dygin import GinLayer, SlotFeatures, dgt_shift, dygin_matrix, dygin_node_reference, slot_mask
from todynet.errors import DimensionError
from todynet.graph import normalize_adjacency


def features(values, length=None):
    values = np.asarray(values, dtype=np.float64)
    B, n, S, c, tau = values.shape
    part = partition_slots(length if length is not None else S * tau, S)
    mask = slot_mask(part)
    return SlotFeatures(Tensor(values * mask[None, None, :, None, :]), part, mask)


def random_instance(rng, sparse=True):
    n, S, c = int(rng.integers(1, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
    B = int(rng.integers(1, 4))
    length = int(rng.integers(S, 4 * S + 4))
    part = partition_slots(length, S)
    mask = slot_mask(part)
    H = rng.standard_normal((B, n, S, c, part.max_len)) * mask[None, None, :, None, :]
    A = rng.uniform(0, 1, (S, n, n)) * (1 - np.eye(n))
    if sparse:
        A *= rng.random((S, n, n)) < 0.6
    layer = GinLayer(c, int(rng.integers(1, 9)), rng)
    layer.eps.data[...] = rng.uniform(-0.5, 0.5)
    layer.gamma.data[...] = rng.uniform(0.5, 1.5, layer.gamma.shape)
    layer.beta.data[...] = rng.uniform(-0.5, 0.5, layer.beta.shape)
    layer.bn.mean = rng.standard_normal(layer.c_out)
    layer.bn.var = rng.uniform(0.5, 2.0, layer.c_out)
    return SlotFeatures(Tensor(H), part, mask), normalize_adjacency(A), layer


def test_dgt_examples():
    h = np.zeros((1, 2, 1, 1, 2))
    h[0, :, 0, 0] = [[1, 2], [3, 4]]
    assert np.array_equal(dgt_shift(Tensor(h)).data, h)
    h2 = np.zeros((1, 1, 2, 1, 2))
    h2[0, 0, 0, 0] = [1, 2]
    h2[0, 0, 1, 0] = [10, 20]
    out = dgt_shift(Tensor(h2)).data[0, 0, :, 0]
    assert out.tolist() == [[1, 2], [11, 22]]
    assert not dgt_shift(Tensor(np.zeros((2, 3, 4, 2, 5)))).data.any()


def test_empty_graph_identity():
    rng = np.random.default_rng(0)
    f = features(rng.standard_normal((2, 3, 1, 4, 5)))
    layer = GinLayer(4, 4, rng, identity=True)
    A = Tensor(np.zeros((1, 3, 3)))
    assert np.array_equal(dygin_node_reference(f, A, layer), f.values.data)
    assert np.array_equal(dygin_matrix(f, A, layer).values.data, f.values.data)


def test_two_node_hand_example():
    h = np.array([1.0, 3.0]).reshape(1, 2, 1, 1, 1)
    f = features(h)
    layer = GinLayer(1, 1, np.random.default_rng(0), identity=True)
    A = Tensor(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    assert dygin_node_reference(f, A, layer).ravel().tolist() == [4.0, 4.0]
    assert dygin_matrix(f, A, layer).values.data.ravel().tolist() == [4.0, 4.0]


def test_eps_minus_one_gives_mlp_of_zero():
    rng = np.random.default_rng(1)
    f = features(rng.standard_normal((2, 3, 1, 4, 5)))
    layer = GinLayer(4, 3, rng)
    layer.eps.data[...] = -1.0
    layer.beta.data[...] = [0.5, -0.2, 0.0]
    out = dygin_matrix(f, Tensor(np.zeros((1, 3, 3))), layer).values.data
    expected = np.maximum(layer.beta.data, 0)[None, None, None, :, None]
    assert np.allclose(out, np.broadcast_to(expected, out.shape), atol=1e-12)


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("dgt", [True, False])
def test_matrix_form_matches_node_reference(training, dgt):
    rng = np.random.default_rng(1234 + 2 * training + dgt)
    worst = 0.0
    for _ in range(100):
        f, A, layer = random_instance(rng)
        mean, var = layer.bn.mean.copy(), layer.bn.var.copy()
        ref = dygin_node_reference(f, A, layer, training=training, dgt=dgt)
        with no_grad():
            got = dygin_matrix(f, A, layer, training=training, dgt=dgt).values.data
        worst = max(worst, float(np.abs(ref - got).max()))
        if not training:
            assert np.array_equal(layer.bn.mean, mean) and np.array_equal(layer.bn.var, var)
    assert worst < 1e-10


def test_slot_locality_without_dgt():
    rng = np.random.default_rng(5)
    f = features(rng.standard_normal((2, 4, 3, 3, 4)))
    A = normalize_adjacency(rng.uniform(0, 1, (3, 4, 4)) * (1 - np.eye(4)))
    layer = GinLayer(3, 3, rng)
    base = dygin_matrix(f, A, layer, training=False, dgt=False).values.data
    perm = np.array([2, 0, 1])
    fp = features(f.values.data[:, :, perm])
    Ap = Tensor(A.data[perm])
    out = dygin_matrix(fp, Ap, layer, training=False, dgt=False).values.data
    assert np.allclose(out[:, :, np.argsort(perm)], base, atol=1e-13)


def test_neighbourhood_locality():
    rng = np.random.default_rng(6)
    n = 5
    f = features(rng.standard_normal((2, n, 1, 3, 4)))
    A = np.zeros((1, n, n))
    A[0, 0, 1] = A[0, 1, 0] = 0.7
    A[0, 2, 3] = A[0, 3, 2] = 0.4
    A[0, 3, 4] = A[0, 4, 3] = 0.9
    layer = GinLayer(3, 3, rng)
    An = normalize_adjacency(A).data
    base = dygin_matrix(f, Tensor(An), layer, training=False, dgt=False).values.data
    cut = An.copy()
    cut[:, 4, :] = 0
    cut[:, :, 4] = 0
    out = dygin_matrix(f, Tensor(cut), layer, training=False, dgt=False).values.data
    assert np.array_equal(out[:, [0, 1, 2]], base[:, [0, 1, 2]])
    assert not np.array_equal(out[:, 3], base[:, 3])


def test_mismatched_nodes_rejected():
    rng = np.random.default_rng(0)
    f = features(rng.standard_normal((1, 3, 2, 2, 2)))
    with pytest.raises(DimensionError):
        dygin_matrix(f, Tensor(np.zeros((2, 4, 4))), GinLayer(2, 2, rng))
    with pytest.raises(DimensionError):
        dygin_node_reference(f, np.zeros((2, 4, 4)), GinLayer(2, 2, rng))


@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    f, A, layer = random_instance(rng, sparse=False)
    H = Parameter(f.values.data, "H")
    Aparam = Parameter(A.data, "A")
    feats = f.with_values(H)
    fn = lambda _: probe(dygin_matrix(feats, Aparam, layer).values, np.random.default_rng(seed))  # noqa: E731
    assert finite_difference_check(fn, [H, Aparam] + layer.parameters(), h=1e-4) < 1e-5
