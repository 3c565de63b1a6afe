import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freshctr.checkpoint import checkpoint_bytes
from freshctr.nn_core import (
    PROB_EPS,
    DenseLayer,
    FieldSpec,
    ModelSpec,
    NonFiniteGradientError,
    OptimizerState,
    OutOfVocabularyError,
    Vocabulary,
    apply_gradients,
    backward,
    encode,
    forward,
    init_model,
    lookup_indices,
    predict,
)
from freshctr.records import Impression

from conftest import finite_difference, max_relative_error, random_batch, small_model, small_vocab


def test_init_is_deterministic():
    a, b = small_model(seed=3), small_model(seed=3)
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])


def test_first_hidden_width_is_sum_of_embedding_dims():
    vocab = Vocabulary(["a", "b"], {"a": ["x"], "b": ["y"]})
    m = init_model(ModelSpec((FieldSpec("a", 4), FieldSpec("b", 8)), (16,)), vocab, 0)
    assert m.hidden[0].weights.shape == (12, 16)
    assert m.output.weights.shape == (16, 1)


def test_different_seeds_give_different_checkpoints():
    assert checkpoint_bytes(small_model(seed=1)) != checkpoint_bytes(small_model(seed=2))


def test_init_respects_glorot_bounds_and_zero_bias():
    m = small_model(seed=5, hidden=(6, 5))
    for layer in [*m.hidden, m.output]:
        fan_in, fan_out = layer.weights.shape
        assert np.abs(layer.weights).max() <= math.sqrt(6 / (fan_in + fan_out))
        assert not layer.bias.any()
    for fs, t in zip(m.spec.fields, m.tables):
        assert np.abs(t).max() <= math.sqrt(6 / (1 + fs.embedding_dim))


def test_init_rejects_field_mismatch():
    vocab = Vocabulary(["a"], {"a": ["x"]})
    with pytest.raises(ValueError):
        init_model(ModelSpec((FieldSpec("b", 2),)), vocab, 0)


def test_field_spec_validation():
    with pytest.raises(ValueError):
        FieldSpec("a", 0)
    with pytest.raises(ValueError):
        ModelSpec((FieldSpec("a", 1), FieldSpec("a", 2)))


def test_lookup_indices_append_only():
    v = Vocabulary(["item"])
    for value in ("a", "b", "c"):
        v.add("item", value)
    imp = lambda x: Impression(0, {"item": x}, 0)
    assert lookup_indices(v, imp("a")) == (0,)
    assert lookup_indices(v, imp("c")) == (2,)
    with pytest.raises(OutOfVocabularyError):
        lookup_indices(v, imp("zzz"))
    assert v.add("item", "a") == 0


def test_encode_lenient_maps_unseen_to_zero_embedding():
    m = small_model()
    imps = [Impression(0, {"f0": "f0_v1", "f1": "nope"}, 1)]
    with pytest.raises(OutOfVocabularyError):
        encode(m.vocab, imps)
    idx = encode(m.vocab, imps, strict=False)
    assert idx.tolist() == [[1, -1]]
    # a zero row in the table gives the same logit as the unknown sentinel
    m.tables[1][0] = 0.0
    assert forward(m, idx)[0] == forward(m, np.array([[1, 0]]))[0]


def _zero(model):
    for p in model.params().values():
        p[...] = 0.0
    return model


def test_zero_network_gives_zero_logit():
    m = _zero(small_model())
    assert np.array_equal(forward(m, np.array([[0, 0], [2, 1]])), np.zeros(2))
    assert np.allclose(predict(m, np.array([[0, 0]])), 0.5)


def test_hand_computed_logit():
    # 1-dim embedding, one hidden unit: logit = w2 * relu(w1 * e + b1) + b2
    vocab = Vocabulary(["a"], {"a": ["x", "y"]})
    m = init_model(ModelSpec((FieldSpec("a", 1),), (1,)), vocab, 0)
    m.tables[0][:] = [[0.5], [-2.0]]
    m.hidden[0] = DenseLayer(np.array([[3.0]]), np.array([0.25]), "relu")
    m.output = DenseLayer(np.array([[-1.5]]), np.array([0.1]), "identity")
    # x: relu(3*0.5 + 0.25) = 1.75 -> -1.5*1.75 + 0.1 = -2.525 ; y: relu(-5.75) = 0 -> 0.1
    assert np.allclose(forward(m, np.array([[0], [1]])), [-2.525, 0.1], rtol=0, atol=1e-15)


def test_forward_preserves_order_and_length():
    m = small_model()
    b = np.array([[0, 0], [1, 1], [2, 0]])
    full = forward(m, b)
    assert full.shape == (3,)
    assert np.array_equal(full[::-1], forward(m, b[::-1]))


def test_forward_rejects_bad_indices():
    m = small_model()
    with pytest.raises(IndexError):
        forward(m, np.array([[3, 0]]))
    with pytest.raises(ValueError):
        forward(m, np.array([0, 0]))


def test_predict_logistic_and_clamp():
    vocab = Vocabulary(["a"], {"a": ["x"]})
    m = _zero(init_model(ModelSpec((FieldSpec("a", 1),), (1,)), vocab, 0))
    m.output.bias[:] = 1.0
    assert predict(m, np.array([[0]]))[0] == pytest.approx(0.7310585786300049, abs=1e-15)
    m.output.bias[:] = 1e6
    assert predict(m, np.array([[0]]))[0] == 1 - PROB_EPS
    m.output.bias[:] = -1e6
    assert predict(m, np.array([[0]]))[0] == PROB_EPS


def test_backward_zero_upstream_gives_zero_gradients():
    m = small_model()
    g = backward(m, np.array([[0, 1], [2, 0]]), np.zeros(2))
    assert all(not v.any() for v in g.values())
    assert list(g) == list(m.params())


def test_backward_shape_mismatch():
    m = small_model()
    with pytest.raises(ValueError):
        backward(m, np.array([[0, 1]]), np.zeros(2))


def test_embedding_gradient_sparsity():
    m = small_model(sizes=(4, 2))
    g = backward(m, np.array([[0, 1], [0, 0]]), np.array([0.3, -1.2]))
    assert not g["embedding/f0"][1:].any()
    assert g["embedding/f0"][0].any()


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed, sizes=(4, 3), dims=(2, 3), hidden=(5, 3))
    batch = random_batch(m, 6, rng)
    w = rng.normal(size=6)
    analytic = backward(m, batch, w)
    numeric = finite_difference(lambda mm: float(forward(mm, batch) @ w), m)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_adagrad_zero_gradient_is_noop():
    m = small_model()
    before = {k: v.copy() for k, v in m.params().items()}
    st_ = OptimizerState.zeros_like(m)
    apply_gradients(m, st_, {k: np.zeros_like(v) for k, v in before.items()}, 0.1)
    assert all(np.array_equal(before[k], v) for k, v in m.params().items())
    assert all(not a.any() for a in st_.accumulators.values())


def test_adagrad_scalar_hand_computation():
    vocab = Vocabulary(["a"], {"a": ["x"]})
    m = _zero(init_model(ModelSpec((FieldSpec("a", 1),), (1,)), vocab, 0))
    st_ = OptimizerState.zeros_like(m, epsilon=1e-8)
    grads = {k: np.zeros_like(v) for k, v in m.params().items()}
    grads["output/bias"][:] = 2.0
    apply_gradients(m, st_, grads, 0.1)
    assert st_.accumulators["output/bias"][0] == 4.0
    assert m.output.bias[0] == pytest.approx(-0.1 * 2 / (2 + 1e-8), abs=1e-17)
    assert m.output.bias[0] == pytest.approx(-0.0999999995, abs=1e-12)


def test_adagrad_steps_shrink():
    m = small_model()
    st_ = OptimizerState.zeros_like(m)
    g = {k: np.full_like(v, 0.7) for k, v in m.params().items()}
    b0 = m.output.bias.copy()
    apply_gradients(m, st_, g, 0.1)
    b1 = m.output.bias.copy()
    apply_gradients(m, st_, g, 0.1)
    assert abs(m.output.bias[0] - b1[0]) < abs(b1[0] - b0[0])


def test_adagrad_rejects_non_finite():
    m = small_model()
    st_ = OptimizerState.zeros_like(m)
    g = {k: np.zeros_like(v) for k, v in m.params().items()}
    g["hidden0/weights"][0, 0] = np.nan
    before = m.hidden[0].weights.copy()
    with pytest.raises(NonFiniteGradientError, match="hidden0/weights"):
        apply_gradients(m, st_, g, 0.1)
    assert np.array_equal(before, m.hidden[0].weights)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(1e-3, 1.0))
def test_adagrad_accumulators_never_decrease(values, lr):
    m = small_model()
    st_ = OptimizerState.zeros_like(m)
    for v in values:
        prev = {k: a.copy() for k, a in st_.accumulators.items()}
        apply_gradients(m, st_, {k: np.full_like(p, v) for k, p in m.params().items()}, lr)
        assert all((st_.accumulators[k] >= prev[k]).all() for k in prev)


def test_vocabulary_extension_check():
    base = small_vocab((2, 2))
    ext = base.copy()
    ext.add("f0", "new")
    assert ext.is_extension_of(base)
    assert not base.is_extension_of(ext)
    other = Vocabulary(base.fields, {"f0": ["f0_v1", "f0_v0"], "f1": base.values("f1")})
    assert not other.is_extension_of(base)
