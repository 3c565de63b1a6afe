"""Student construction: vocabulary growth, warm start from a teacher, scratch start."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn_core import (
    CtrModel,
    DenseLayer,
    ModelSpec,
    OptimizerState,
    Vocabulary,
    init_embedding_rows,
    init_model,
)
from .records import Dataset, Impression


class VocabularyMismatchError(ValueError):
    """The expanded vocabulary does not extend the teacher's."""


def expand_vocabulary(base: Vocabulary, fresh: Dataset | Iterable[Impression]) -> Vocabulary:
    """Append values first seen in ``fresh`` to a copy of ``base``.

    Existing indices never move; new values get the next indices in the
    order they first appear in the stream.
    """
    out = base.copy()
    if isinstance(fresh, Dataset):
        for f in out.fields:
            for value in fresh.first_appearance(f):
                out.add(f, value)
    else:
        for imp in fresh:
            for f in out.fields:
                out.add(f, imp.features[f])
    return out


def warm_start(teacher: CtrModel, expanded: Vocabulary, seed: int) -> CtrModel:
    """Copy every teacher parameter; initialize only the rows added in ``expanded``."""
    if expanded.fields != teacher.vocab.fields:
        raise VocabularyMismatchError(
            f"expanded vocabulary fields {expanded.fields} != teacher fields {teacher.vocab.fields}"
        )
    if not expanded.is_extension_of(teacher.vocab):
        raise VocabularyMismatchError("expanded vocabulary moves or drops values the teacher already indexes")
    tables = []
    for pos, (fs, table) in enumerate(zip(teacher.spec.fields, teacher.tables)):
        n_old, n_new = table.shape[0], expanded.size(fs.name)
        fresh_rows = init_embedding_rows(seed, pos, range(n_old, n_new), fs.embedding_dim)
        tables.append(np.concatenate([table, fresh_rows], axis=0))
    hidden = [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in teacher.hidden]
    out = teacher.output
    meta = {
        "seed": int(seed),
        "step": 0,
        "init": "warm_start",
        "teacher_config_hash": teacher.meta.get("config_hash"),
        "teacher_id": teacher.meta.get("model_id"),
    }
    if "label_rate" in teacher.meta:
        meta["label_rate"] = teacher.meta["label_rate"]
    return CtrModel(
        teacher.spec,
        expanded.copy(),
        tables,
        hidden,
        DenseLayer(out.weights.copy(), out.bias.copy(), out.activation),
        meta,
    )


def carry_optimizer_state(teacher_state: OptimizerState, student: CtrModel) -> OptimizerState:
    """Teacher accumulators for copied parameters, zeros for the new rows."""
    acc = {}
    for name, p in student.params().items():
        src = teacher_state.accumulators[name]
        a = np.zeros_like(p)
        a[: src.shape[0]] = src
        acc[name] = a
    return OptimizerState(acc, teacher_state.epsilon)


def scratch_start(spec: ModelSpec, expanded: Vocabulary, seed: int) -> CtrModel:
    model = init_model(spec, expanded, seed)
    model.meta["init"] = "scratch"
    return model
