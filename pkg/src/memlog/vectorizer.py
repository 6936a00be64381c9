"""Mean-pooling of token embeddings into fixed-width log vectors.

Each of the six token groups pools to one 32-dimensional segment (the
mean of the input vectors of its in-vocabulary tokens); concatenated in
:class:`~memlog.tokenizer.GroupId` order they form the 192-dimensional
log vector.  Out-of-vocabulary tokens are skipped; a group with no
usable tokens contributes a zero segment.  Coverage records, per group,
the fraction of tokens found in the vocabulary.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EMBEDDING_DIM, EmbeddingModel
from .errors import LengthMismatch, UnlabeledLog
from .logmodel import CanonicalLog, Label
from .tokenizer import GROUP_COUNT, GroupedTokens, GroupId, tokenize

LOG_VECTOR_DIM = GROUP_COUNT * EMBEDDING_DIM

#: Numeric label encoding used throughout training and evaluation.
MALICIOUS, BENIGN = 1, 0


@dataclass
class LogVector:
    values: np.ndarray
    coverage: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogVector):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(
            self.coverage, other.coverage
        )


def vectorize_log(tokens: GroupedTokens, model: EmbeddingModel) -> LogVector:
    values = np.zeros(GROUP_COUNT * model.dim, dtype=np.float32)
    coverage = np.zeros(GROUP_COUNT, dtype=np.float64)
    index = model.vocab.index
    for group_id in GroupId:
        group = tokens.group(group_id)
        ids = [index[t] for t in group if t in index]
        if ids:
            segment = model.input_vectors[ids].mean(axis=0, dtype=np.float64)
            values[group_id * model.dim:(group_id + 1) * model.dim] = segment.astype(np.float32)
        if group:
            coverage[group_id] = len(ids) / len(group)
    return LogVector(values, coverage)


def vectorize_corpus(
    logs: Sequence[CanonicalLog], model: EmbeddingModel
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorize labeled logs into (n x 192 matrix, 0/1 label vector)."""
    X = np.zeros((len(logs), GROUP_COUNT * model.dim), dtype=np.float32)
    y = np.zeros(len(logs), dtype=np.int64)
    for i, log in enumerate(logs):
        if log.label is None:
            raise UnlabeledLog(f"log {i} has no label")
        X[i] = vectorize_log(tokenize(log), model).values
        y[i] = MALICIOUS if log.label is Label.MALICIOUS else BENIGN
    return X, y


# --------------------------------------------------------------------------
# CSV interchange: header "label,v0..v191", one row per log


def save_dataset_csv(path: str, X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} rows vs {y.shape[0]} labels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"v{i}" for i in range(X.shape[1])])
        for row, label in zip(X, y):
            name = Label.MALICIOUS.value if label == MALICIOUS else Label.BENIGN.value
            writer.writerow([name] + [repr(float(v)) for v in row])


def load_dataset_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise LengthMismatch(f"{path} is not a vector dataset (bad header)")
        width = len(header) - 1
        rows = []
        labels = []
        for line, record in enumerate(reader, start=2):
            if len(record) != width + 1:
                raise LengthMismatch(f"{path}:{line}: expected {width + 1} columns, got {len(record)}")
            labels.append(MALICIOUS if record[0] == Label.MALICIOUS.value else BENIGN)
            rows.append([np.float32(float(v)) for v in record[1:]])
    X = np.asarray(rows, dtype=np.float32).reshape(len(rows), width)
    return X, np.asarray(labels, dtype=np.int64)
