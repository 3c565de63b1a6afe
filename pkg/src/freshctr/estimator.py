"""scikit-learn style wrapper around the click model.

``CtrNetClassifier`` takes a 2-D array (or DataFrame) of categorical values
and binary click labels. Passing a fitted classifier as ``teacher`` turns on
the incremental workflow: ``warm_start=True`` copies the teacher's weights
(adding rows for unseen values) and ``alpha > 0`` adds the distillation term
against the teacher's softened predictions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .distill import KdConfig, precompute_soft_targets
from .nn_core import CtrModel, FieldSpec, ModelSpec, OptimizerState, Vocabulary, encode, forward, predict
from .records import Dataset
from .training import fit as fit_model
from .warmstart import expand_vocabulary, scratch_start, warm_start


def _column_names(X, n_features: int) -> tuple[str, ...]:
    cols = getattr(X, "columns", None)
    if cols is not None:
        return tuple(str(c) for c in cols)
    return tuple(f"x{j}" for j in range(n_features))


def check_categorical(X) -> np.ndarray:
    """2-D object array of non-empty strings."""
    arr = check_array(X, dtype=object, ensure_all_finite=False, ensure_min_samples=1)
    out = np.empty(arr.shape, dtype=object)
    for j in range(arr.shape[1]):
        col = arr[:, j]
        if any(v is None or (isinstance(v, float) and np.isnan(v)) for v in col):
            raise ValueError(f"column {j} contains missing values")
        out[:, j] = [str(v) for v in col]
    return out


def to_dataset(X: np.ndarray, fields, y=None, soft_targets=None) -> Dataset:
    codes, cats = {}, {}
    for j, f in enumerate(fields):
        table: dict[str, int] = {}
        codes[f] = np.array([table.setdefault(v, len(table)) for v in X[:, j]], dtype=np.int32)
        cats[f] = tuple(table)
    n = X.shape[0]
    clicks = np.zeros(n, np.int8) if y is None else np.asarray(y, dtype=np.int8)
    return Dataset(np.zeros(n, np.int64), codes, cats, clicks,
                   None if soft_targets is None else np.asarray(soft_targets, dtype=np.float64), tuple(fields))


class CtrNetClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, hidden=(32, 16), embedding_dim=4, embedding_dims=None, learning_rate=0.05,
                 batch_size=256, epochs=1, alpha=0.0, temperature=2.0, scale_distill_by_T2=False,
                 teacher=None, warm_start=False, random_state=0):
        self.hidden = hidden
        self.embedding_dim = embedding_dim
        self.embedding_dims = embedding_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.alpha = alpha
        self.temperature = temperature
        self.scale_distill_by_T2 = scale_distill_by_T2
        self.teacher = teacher
        self.warm_start = warm_start
        self.random_state = random_state

    def _teacher_model(self) -> CtrModel | None:
        if self.teacher is None:
            return None
        if isinstance(self.teacher, CtrModel):
            return self.teacher
        check_is_fitted(self.teacher, "model_")
        return self.teacher.model_

    def _spec(self, fields) -> ModelSpec:
        dims = dict(self.embedding_dims or {})
        return ModelSpec(tuple(FieldSpec(f, int(dims.get(f, self.embedding_dim))) for f in fields), tuple(self.hidden))

    def fit(self, X, y, soft_targets=None):
        fields = _column_names(X, np.shape(X)[1] if np.ndim(X) == 2 else 0)
        Xc = check_categorical(X)
        y = np.asarray(y)
        check_consistent_length(Xc, y)
        check_classification_targets(y)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("click labels must be 0 or 1")
        kd = KdConfig(self.alpha, self.temperature, self.scale_distill_by_T2)
        teacher = self._teacher_model()
        if teacher is not None and teacher.spec.field_names != fields:
            raise ValueError(f"teacher fields {teacher.spec.field_names} do not match X columns {fields}")
        if self.warm_start and teacher is None:
            raise ValueError("warm_start=True needs a teacher")
        if soft_targets is not None:
            soft_targets = np.asarray(soft_targets, dtype=np.float64)
            check_consistent_length(Xc, soft_targets)

        data = to_dataset(Xc, fields, y, soft_targets)
        if self.alpha > 0 and data.soft_targets is None:
            if teacher is None:
                raise ValueError("alpha > 0 needs a teacher or explicit soft_targets")
            data = precompute_soft_targets(teacher, data, self.temperature)

        seed = int(self.random_state)
        if self.warm_start:
            model = warm_start(teacher, expand_vocabulary(teacher.vocab, data), seed)
        else:
            model = scratch_start(self._spec(fields), expand_vocabulary(Vocabulary(fields), data), seed)
        state = OptimizerState.zeros_like(model)
        self.train_log_ = fit_model(model, state, data, epochs=self.epochs, batch_size=self.batch_size,
                                    learning_rate=self.learning_rate, seed=seed,
                                    kd=kd if self.alpha > 0 else None)
        model.meta["label_rate"] = float(np.mean(y))
        self.model_ = model
        self.optimizer_state_ = state
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = len(fields)
        self.fields_ = fields
        if hasattr(X, "columns"):
            self.feature_names_in_ = np.asarray(fields, dtype=object)
        return self

    def _encode(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        Xc = check_categorical(X)
        if Xc.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {Xc.shape[1]} features, expected {self.n_features_in_}")
        return encode(self.model_.vocab, to_dataset(Xc, self.fields_), strict=False)

    def decision_function(self, X) -> np.ndarray:
        return forward(self.model_, self._encode(X))

    def predict_proba(self, X) -> np.ndarray:
        p = predict(self.model_, self._encode(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]

    def soft_targets(self, X, temperature=None) -> np.ndarray:
        """Softened predictions of this (teacher) model, as used for distillation."""
        check_is_fitted(self, "model_")
        Xc = check_categorical(X)
        t = self.temperature if temperature is None else temperature
        return precompute_soft_targets(self.model_, to_dataset(Xc, self.fields_), t).soft_targets
