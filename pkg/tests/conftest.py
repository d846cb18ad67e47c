"""Shared dataset builders for the test suite."""

import numpy as np
import pytest

from statcert.core import Dataset, Schema


def build_dataset(columns, roles, **kwargs):
    """Dataset from plain dicts: {name: values}, {name: role}."""
    schema = Schema.from_roles(roles)
    arrays = {name: np.asarray(values) for name, values in columns.items()}
    return Dataset(schema, arrays, **kwargs)


def labeled(labels, predictions):
    """Minimal classification dataset: one label and one prediction column."""
    return build_dataset(
        {"label": np.asarray(labels), "prediction": np.asarray(predictions)},
        {"label": "label", "prediction": "prediction"},
    )


def feature_dataset(x, labels=None):
    """Feature-only (or feature+label) dataset from a 2-d array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    columns = {f"x{j}": x[:, j] for j in range(x.shape[1])}
    roles = {f"x{j}": "feature" for j in range(x.shape[1])}
    if labels is not None:
        columns["label"] = np.asarray(labels)
        roles["label"] = "label"
    return build_dataset(columns, roles)


def grouped(group, labels, predictions):
    """Binary-group fairness dataset."""
    return build_dataset(
        {
            "group": np.asarray(group, dtype=int),
            "label": np.asarray(labels, dtype=int),
            "prediction": np.asarray(predictions, dtype=int),
        },
        {"group": "group", "label": "label", "prediction": "prediction"},
    )


def counts_to_rows(n: int, k: int):
    """Label/prediction arrays realizing k correct out of n."""
    labels = np.zeros(n, dtype=int)
    preds = np.concatenate([np.zeros(k, dtype=int), np.ones(n - k, dtype=int)])
    return labels, preds


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
