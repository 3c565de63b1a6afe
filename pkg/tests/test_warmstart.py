import numpy as np
import pytest

from freshctr.checkpoint import checkpoint_bytes
from freshctr.nn_core import OptimizerState, Vocabulary, apply_gradients, backward
from freshctr.records import Dataset, Impression
from freshctr.warmstart import (
    VocabularyMismatchError,
    carry_optimizer_state,
    expand_vocabulary,
    scratch_start,
    warm_start,
)

from conftest import small_model


def _imps(pairs):
    return [Impression(i, {"f0": a, "f1": b}, 0) for i, (a, b) in enumerate(pairs)]


def _trained(seed):
    m = small_model(seed=seed)
    st = OptimizerState.zeros_like(m)
    g = backward(m, np.array([[0, 1], [2, 0], [1, 1]]), np.array([0.5, -0.2, 0.9]))
    apply_gradients(m, st, g, 0.1)
    return m, st


def test_expand_without_new_values_is_identity():
    base = small_model().vocab
    assert expand_vocabulary(base, _imps([("f0_v0", "f1_v1")])) == base


def test_expand_appends_in_first_appearance_order():
    base = small_model().vocab
    fresh = _imps([("f0_v1", "f1_v0"), ("zeta", "f1_v0"), ("alpha", "f1_v1"), ("zeta", "f1_v1")])
    out = expand_vocabulary(base, fresh)
    assert out.values("f0") == ("f0_v0", "f0_v1", "f0_v2", "zeta", "alpha")
    assert out.size("f0") == 5
    assert out.is_extension_of(base)
    assert expand_vocabulary(base, fresh) == out
    # columnar datasets follow the same rule
    assert expand_vocabulary(base, Dataset.from_impressions(fresh, fields=base.fields)) == out
    assert base.size("f0") == 3


def test_warm_start_same_vocab_is_pure_copy():
    t, _ = _trained(1)
    s = warm_start(t, t.vocab, seed=99)
    for k, v in t.params().items():
        assert v.tobytes() == s.params()[k].tobytes()
    assert s.params()["hidden0/weights"] is not t.params()["hidden0/weights"]


def test_warm_start_adds_exactly_the_new_rows():
    t, _ = _trained(1)
    exp = expand_vocabulary(t.vocab, _imps([("new_a", "f1_v0"), ("new_b", "f1_v0")]))
    s = warm_start(t, exp, seed=5)
    assert s.n_parameters() - t.n_parameters() == 2 * t.spec.fields[0].embedding_dim
    for k, v in t.params().items():
        assert s.params()[k][: v.shape[0]].tobytes() == v.tobytes()
    assert s.meta["step"] == 0


def test_warm_start_deterministic():
    t, _ = _trained(1)
    exp = expand_vocabulary(t.vocab, _imps([("new_a", "x")]))
    assert checkpoint_bytes(warm_start(t, exp, 3)) == checkpoint_bytes(warm_start(t, exp, 3))


def test_new_rows_independent_of_teacher():
    t1, _ = _trained(1)
    t2, _ = _trained(2)
    assert t2.vocab == t1.vocab
    exp = expand_vocabulary(t1.vocab, _imps([("new_a", "new_b"), ("new_c", "f1_v0")]))
    s1, s2 = warm_start(t1, exp, 11), warm_start(t2, exp, 11)
    for pos, fs in enumerate(t1.spec.fields):
        n = t1.vocab.size(fs.name)
        assert np.array_equal(s1.tables[pos][n:], s2.tables[pos][n:])
        assert not np.array_equal(s1.tables[pos][:n], s2.tables[pos][:n])


def test_index_stability():
    t, _ = _trained(1)
    exp = expand_vocabulary(t.vocab, _imps([("new", "f1_v1")]))
    s = warm_start(t, exp, 0)
    for f in t.vocab.fields:
        for v in t.vocab.values(f):
            assert s.vocab.index(f, v) == t.vocab.index(f, v)


def test_warm_start_rejects_non_extension():
    t, _ = _trained(1)
    bad = Vocabulary(t.vocab.fields, {"f0": ["f0_v2", "f0_v1", "f0_v0"], "f1": t.vocab.values("f1")})
    with pytest.raises(VocabularyMismatchError):
        warm_start(t, bad, 0)
    with pytest.raises(VocabularyMismatchError):
        warm_start(t, Vocabulary(["f0"], {"f0": t.vocab.values("f0")}), 0)


def test_scratch_start():
    t, _ = _trained(1)
    exp = expand_vocabulary(t.vocab, _imps([("new", "f1_v1")]))
    a, b = scratch_start(t.spec, exp, 4), scratch_start(t.spec, exp, 4)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert a.vocab == exp
    assert checkpoint_bytes(a) != checkpoint_bytes(warm_start(t, exp, 4))


def test_carry_optimizer_state():
    t, st = _trained(1)
    exp = expand_vocabulary(t.vocab, _imps([("new", "f1_v1")]))
    s = warm_start(t, exp, 0)
    carried = carry_optimizer_state(st, s)
    acc = carried.accumulators["embedding/f0"]
    assert np.array_equal(acc[:3], st.accumulators["embedding/f0"])
    assert not acc[3:].any()
    assert np.array_equal(carried.accumulators["output/bias"], st.accumulators["output/bias"])
