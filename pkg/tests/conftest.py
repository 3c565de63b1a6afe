import numpy as np
import pytest

from freshctr.datagen import DAY, HOUR, WorldConfig, generate_stream
from freshctr.nn_core import FieldSpec, ModelSpec, Vocabulary, init_model


def small_vocab(sizes=(3, 2)):
    names = [f"f{i}" for i in range(len(sizes))]
    return Vocabulary(names, {n: [f"{n}_v{j}" for j in range(k)] for n, k in zip(names, sizes)})


def small_model(seed=0, sizes=(3, 2), dims=(2, 3), hidden=(4,)):
    vocab = small_vocab(sizes)
    spec = ModelSpec(tuple(FieldSpec(f, d) for f, d in zip(vocab.fields, dims)), hidden)
    return init_model(spec, vocab, seed)


def random_batch(model, n, rng):
    return np.column_stack([rng.integers(0, t.shape[0], n) for t in model.tables])


def finite_difference(loss_fn, model, step=1e-4):
    """Central differences of ``loss_fn(model)`` w.r.t. every parameter entry."""
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn(model)
            flat[k] = orig - step
            down = loss_fn(model)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(a, b, floor=1e-8):
    worst = 0.0
    for k in a:
        num = np.abs(a[k] - b[k])
        den = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float(np.max(num / den)) if num.size else 0.0)
    return worst


@pytest.fixture(scope="session")
def tiny_world():
    return WorldConfig(n_items_initial=12, n_publishers=3, n_user_segments=3, impressions_per_hour=200,
                       new_item_rate=0.5, seed=7)


@pytest.fixture(scope="session")
def tiny_stream(tiny_world):
    return generate_stream(tiny_world, 0, 3 * DAY)
