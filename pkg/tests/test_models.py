import numpy as np
import pytest

from afsl.autodiff import Tensor, grad_check
from afsl.models import (
    FAKE,
    REAL,
    ArchitectureError,
    ArchitectureSpec,
    LinearModel,
    classify,
    encode,
    get_architecture,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def small_model(seed=0):
    return init_params(get_architecture("tiny-cnn", (2, 8, 8)), seed)


def clips(n, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 2, 8, 8, 1))


def test_init_is_deterministic_and_seed_dependent():
    spec = get_architecture("tiny-cnn")
    a, b, c = init_params(spec, 0), init_params(spec, 0), init_params(spec, 1)
    for name, t in a.named_parameters().items():
        np.testing.assert_array_equal(t.data, b.named_parameters()[name].data)
    diff = max(np.max(np.abs(t.data - c.named_parameters()[k].data)) for k, t in a.named_parameters().items())
    assert diff > 0


def test_dense_only_shapes_and_zero_bias():
    spec = ArchitectureSpec("probe", (4,), ({"type": "dense", "width": 8},), 8)
    p = init_params(spec, 0)
    assert p.weights["dense0.weight"].shape == (8, 4)
    np.testing.assert_array_equal(p.weights["dense0.bias"].data, np.zeros(8))
    bound = np.sqrt(6.0 / 4)
    assert np.all(np.abs(p.weights["dense0.weight"].data) <= bound)
    assert p.head.shape == (2, 8)


def test_incomposable_spec_rejected():
    with pytest.raises(ArchitectureError, match="flat input"):
        ArchitectureSpec("bad", (1, 8, 8), ({"type": "dense", "width": 4},), 4).layer_shapes()
    with pytest.raises(ArchitectureError, match="embedding_dim"):
        ArchitectureSpec("bad", (4,), ({"type": "dense", "width": 4},), 5).layer_shapes()
    with pytest.raises(ArchitectureError, match="unknown architecture"):
        get_architecture("resnet")


def test_encode_rows_unit_norm_and_shape():
    p = small_model()
    emb = encode(p, clips(5)).data
    assert emb.shape == (5, 16)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)


def test_duplicate_rows_identical_and_permutation_equivariant():
    p = small_model()
    x = clips(4)
    x[3] = x[1]
    emb = p.encode(x).data
    np.testing.assert_array_equal(emb[1], emb[3])
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_allclose(p.encode(x[perm]).data, emb[perm], atol=1e-14)
    np.testing.assert_allclose(p.logits(x[perm]).data, p.logits(x).data[perm], atol=1e-14)


def test_encode_shape_mismatch():
    with pytest.raises(ArchitectureError, match="does not match"):
        small_model().encode(np.zeros((2, 3, 8, 8, 1)))


def test_classify_examples():
    head = np.array([[0.0, 0.0, 2.0], [3.0, 4.0, 0.0]])  # fake, real
    emb = np.array([[0.6, 0.8, 0.0]])
    np.testing.assert_allclose(classify(emb, head).data, [[0.0, 5.0]])
    rng = np.random.default_rng(0)
    e, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    expected = [[sum(e[n, k] * h[c, k] for k in range(3)) for c in range(2)] for n in range(2)]
    np.testing.assert_allclose(classify(e, h).data, expected, atol=1e-14)
    assert classify(emb, np.zeros((2, 3))).data.tolist() == [[0.0, 0.0]]
    with pytest.raises(ValueError):
        classify(np.ones((1, 4)), head)


def test_label_is_logit_column():
    assert (FAKE, REAL) == (0, 1)


def test_end_to_end_gradcheck_wrt_input():
    p = small_model().frozen()
    x = clips(2, seed=3)
    rep = grad_check(lambda t: p.logits(t)[:, REAL].sum(), x, tolerance=1e-4)
    assert rep.passed, rep


def test_linear_model_logits():
    w = np.array([1.0, -2.0, 0.5])
    m = LinearModel.antisymmetric(w)
    x = np.array([[0.2, 0.4, 0.6]])
    np.testing.assert_allclose(m.logits(x).data, [[-(x @ w)[0], (x @ w)[0]]])


def test_checkpoint_roundtrip(tmp_path):
    p = small_model(4)
    p.config_hash = "abc"
    save_checkpoint(p, tmp_path / "ck")
    q = load_checkpoint(tmp_path / "ck")
    assert q.digest() == p.digest()
    assert q.config_hash == "abc"
    np.testing.assert_array_equal(q.logits(clips(3)).data, p.logits(clips(3)).data)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")
