"""Embeddings + ReLU MLP click model, its gradients and an Adagrad optimizer.

All arithmetic is float64. A model is a plain value: the embedding tables,
dense layers and vocabulary are held in a :class:`CtrModel` and the
functions here either read it (``forward``, ``predict``, ``backward``) or
update it in place (``apply_gradients``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import _rng
from .records import Dataset, Impression

PROB_EPS = 1e-7
OPT_EPS = 1e-8
UNKNOWN = -1  # row index meaning "value not in vocabulary": looks up a zero vector

Gradients = dict  # parameter name -> ndarray, same keys/shapes as CtrModel.params()


class OutOfVocabularyError(KeyError):
    def __init__(self, field_name: str, value: str):
        super().__init__(f"out-of-vocabulary value {value!r} for field {field_name!r}")
        self.field = field_name
        self.value = value

    def __str__(self):
        return self.args[0]


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    embedding_dim: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("field name must be non-empty")
        if int(self.embedding_dim) < 1:
            raise ValueError(f"embedding_dim must be >= 1, got {self.embedding_dim}")


@dataclass(frozen=True)
class ModelSpec:
    fields: tuple[FieldSpec, ...]
    hidden: tuple[int, ...] = (32, 16)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in {names}")
        if not names:
            raise ValueError("a model needs at least one field")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @property
    def input_width(self) -> int:
        return sum(f.embedding_dim for f in self.fields)


def default_spec(fields: Sequence[str], item_dim: int = 8, other_dim: int = 4,
                 hidden: Sequence[int] = (32, 16)) -> ModelSpec:
    return ModelSpec(
        tuple(FieldSpec(f, item_dim if f == "item" else other_dim) for f in fields),
        tuple(hidden),
    )


class Vocabulary:
    """Append-only map from categorical value to dense row index, per field."""

    def __init__(self, fields: Iterable[str], values: Mapping[str, Iterable[str]] | None = None):
        self._index: dict[str, dict[str, int]] = {f: {} for f in fields}
        for f, vals in (values or {}).items():
            for v in vals:
                self.add(f, v)

    @property
    def fields(self) -> tuple[str, ...]:
        return tuple(self._index)

    def add(self, field_name: str, value: str) -> int:
        table = self._index[field_name]
        if value not in table:
            table[value] = len(table)
        return table[value]

    def index(self, field_name: str, value: str) -> int:
        try:
            return self._index[field_name][value]
        except KeyError:
            if field_name not in self._index:
                raise KeyError(f"unknown field {field_name!r}") from None
            raise OutOfVocabularyError(field_name, value) from None

    def get(self, field_name: str, value: str, default: int = UNKNOWN) -> int:
        return self._index[field_name].get(value, default)

    def values(self, field_name: str) -> tuple[str, ...]:
        return tuple(self._index[field_name])

    def size(self, field_name: str) -> int:
        return len(self._index[field_name])

    def __contains__(self, key) -> bool:
        field_name, value = key
        return value in self._index.get(field_name, ())

    def copy(self) -> "Vocabulary":
        return Vocabulary(self.fields, {f: self.values(f) for f in self.fields})

    def is_extension_of(self, base: "Vocabulary") -> bool:
        """True when every (field, value) of ``base`` keeps its index here."""
        if self.fields != base.fields:
            return False
        return all(
            self.values(f)[: base.size(f)] == base.values(f) for f in base.fields
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.fields == other.fields and all(self.values(f) == other.values(f) for f in self.fields)

    __hash__ = None

    def __repr__(self):
        sizes = ", ".join(f"{f}={self.size(f)}" for f in self.fields)
        return f"Vocabulary({sizes})"


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class CtrModel:
    spec: ModelSpec
    vocab: Vocabulary
    tables: list[np.ndarray]
    hidden: list[DenseLayer]
    output: DenseLayer
    meta: dict = field(default_factory=dict)

    @property
    def field_specs(self) -> tuple[FieldSpec, ...]:
        return self.spec.fields

    def params(self) -> dict[str, np.ndarray]:
        """Named views of every parameter, in a fixed canonical order."""
        out = {}
        for fs, table in zip(self.spec.fields, self.tables):
            out[f"embedding/{fs.name}"] = table
        for i, layer in enumerate(self.hidden):
            out[f"hidden{i}/weights"] = layer.weights
            out[f"hidden{i}/bias"] = layer.bias
        out["output/weights"] = self.output.weights
        out["output/bias"] = self.output.bias
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "CtrModel":
        return copy.deepcopy(self)


def glorot_scale(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_embedding_rows(seed: int, field_pos: int, rows: Iterable[int], dim: int) -> np.ndarray:
    # one active input per lookup, so fan_in = 1; rows keyed individually
    s = glorot_scale(1, dim)
    rows = list(rows)
    out = np.empty((len(rows), dim))
    for k, r in enumerate(rows):
        out[k] = _rng.keyed_rng(seed, _rng.INIT_EMBEDDING, field_pos, r).uniform(-s, s, dim)
    return out


def init_model(spec: ModelSpec, vocab: Vocabulary, seed: int) -> CtrModel:
    if set(vocab.fields) != set(spec.field_names):
        raise ValueError(f"vocabulary fields {vocab.fields} do not match model fields {spec.field_names}")
    if vocab.fields != spec.field_names:
        vocab = Vocabulary(spec.field_names, {f: vocab.values(f) for f in spec.field_names})
    tables = [
        init_embedding_rows(seed, pos, range(vocab.size(fs.name)), fs.embedding_dim)
        for pos, fs in enumerate(spec.fields)
    ]
    widths = [spec.input_width, *spec.hidden, 1]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        s = glorot_scale(fan_in, fan_out)
        w = _rng.keyed_rng(seed, _rng.INIT_DENSE, i).uniform(-s, s, (fan_in, fan_out))
        act = "identity" if i == len(widths) - 2 else "relu"
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return CtrModel(spec, vocab.copy(), tables, layers[:-1], layers[-1], {"seed": int(seed), "step": 0})


def lookup_indices(vocab: Vocabulary, impression: Impression) -> tuple[int, ...]:
    return tuple(vocab.index(f, impression.features[f]) for f in vocab.fields)


def encode(vocab: Vocabulary, data, strict: bool = True) -> np.ndarray:
    """Row indices of shape (n, n_fields) for a Dataset or a list of impressions.

    With ``strict`` an unseen value raises :class:`OutOfVocabularyError`;
    otherwise it maps to :data:`UNKNOWN` (a zero embedding).
    """
    if not isinstance(data, Dataset):
        data = list(data)
        if strict:
            return np.array([lookup_indices(vocab, imp) for imp in data], dtype=np.int64).reshape(len(data), len(vocab.fields))
        return np.array(
            [[vocab.get(f, imp.features[f]) for f in vocab.fields] for imp in data], dtype=np.int64
        ).reshape(len(data), len(vocab.fields))
    out = np.empty((len(data), len(vocab.fields)), dtype=np.int64)
    for j, f in enumerate(vocab.fields):
        cats = data.categories[f]
        mapping = np.array([vocab.get(f, v) for v in cats] + [UNKNOWN], dtype=np.int64)
        col = mapping[data.codes[f]]
        if strict and len(col) and col.min() < 0:
            bad = data.codes[f][np.argmax(col < 0)]
            raise OutOfVocabularyError(f, cats[bad])
        out[:, j] = col
    return out


def _check_batch(model: CtrModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != len(model.tables):
        raise ValueError(f"batch must have shape (n, {len(model.tables)}), got {batch.shape}")
    for j, table in enumerate(model.tables):
        col = batch[:, j]
        if len(col) and (col.max() >= table.shape[0] or col.min() < UNKNOWN):
            raise IndexError(f"index out of range for field {model.spec.fields[j].name!r} ({table.shape[0]} rows)")
    return batch


def _embed(model: CtrModel, batch: np.ndarray) -> np.ndarray:
    parts = []
    for j, table in enumerate(model.tables):
        idx = batch[:, j]
        rows = table[np.maximum(idx, 0)]
        if (idx < 0).any():
            rows = np.where((idx < 0)[:, None], 0.0, rows)
        parts.append(rows)
    return np.concatenate(parts, axis=1)


def _forward_cache(model: CtrModel, batch: np.ndarray):
    acts = [_embed(model, batch)]
    pre = []
    h = acts[0]
    for layer in model.hidden:
        z = h @ layer.weights + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = (h @ model.output.weights + model.output.bias)[:, 0]
    return logits, acts, pre


def forward(model: CtrModel, batch) -> np.ndarray:
    """Click logits, one per row of ``batch`` (an (n, n_fields) index array)."""
    batch = _check_batch(model, batch)
    return _forward_cache(model, batch)[0]


def logistic(z):
    return expit(z)


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def predict(model: CtrModel, batch) -> np.ndarray:
    """Clamped click probabilities.

    ``batch`` is an index array, a :class:`Dataset` or a list of impressions;
    datasets are encoded leniently (unseen values get a zero embedding).
    """
    if isinstance(batch, Impression):
        batch = [batch]
    if isinstance(batch, Dataset) or (isinstance(batch, list) and batch and isinstance(batch[0], Impression)):
        batch = encode(model.vocab, batch, strict=False)
    return clamp_prob(logistic(forward(model, batch)))


def backward(model: CtrModel, batch, dloss_dlogit, cache=None) -> Gradients:
    """Gradients of ``sum(logits * dloss_dlogit)`` w.r.t. every parameter."""
    batch = _check_batch(model, batch)
    g = np.asarray(dloss_dlogit, dtype=np.float64)
    if g.shape != (batch.shape[0],):
        raise ValueError(f"dloss_dlogit has shape {g.shape}, expected ({batch.shape[0]},)")
    _, acts, pre = cache if cache is not None else _forward_cache(model, batch)
    grads = {}
    delta = g[:, None]
    grads["output/weights"] = acts[-1].T @ delta
    grads["output/bias"] = delta.sum(axis=0)
    upstream = delta @ model.output.weights.T
    for i in range(len(model.hidden) - 1, -1, -1):
        layer = model.hidden[i]
        d = upstream * (pre[i] > 0)
        grads[f"hidden{i}/weights"] = acts[i].T @ d
        grads[f"hidden{i}/bias"] = d.sum(axis=0)
        upstream = d @ layer.weights.T
    col = 0
    emb = {}
    for j, (fs, table) in enumerate(zip(model.spec.fields, model.tables)):
        part = upstream[:, col:col + fs.embedding_dim]
        col += fs.embedding_dim
        gt = np.zeros_like(table)
        idx = batch[:, j]
        known = idx >= 0
        np.add.at(gt, idx[known], part[known])
        emb[f"embedding/{fs.name}"] = gt
    # canonical key order, matching CtrModel.params()
    return {name: (emb[name] if name in emb else grads[name]) for name in model.params()}


@dataclass
class OptimizerState:
    accumulators: dict[str, np.ndarray]
    epsilon: float = OPT_EPS

    @classmethod
    def zeros_like(cls, model: CtrModel, epsilon: float = OPT_EPS) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in model.params().items()}, epsilon)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: v.copy() for k, v in self.accumulators.items()}, self.epsilon)


def apply_gradients(model: CtrModel, state: OptimizerState, grads: Gradients, lr: float):
    """One Adagrad step, in place. Returns ``(model, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = model.params()
    if set(grads) != set(params) or set(state.accumulators) != set(params):
        raise ValueError("gradient/optimizer keys do not match model parameters")
    bad = {k: int((~np.isfinite(g)).sum()) for k, g in grads.items() if not np.isfinite(g).all()}
    if bad:
        raise NonFiniteGradientError(
            f"non-finite gradients at step {model.meta.get('step', 0)}: "
            + ", ".join(f"{k} ({n} entries)" for k, n in bad.items())
        )
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        acc = state.accumulators[name]
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + state.epsilon)
    model.meta["step"] = int(model.meta.get("step", 0)) + 1
    return model, state
