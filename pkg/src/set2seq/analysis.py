"""Cosine-distance panels comparing the early careers of two entities."""
import warnings

import numpy as np

from .ranking import pairwise_cosine_matrix
from .seq_encoder import Set2SeqTransformer

PANELS = ("set", "positional", "temporal", "composed", "encoded")


def career_components(model, sequence, first_n):
    if not isinstance(model, Set2SeqTransformer):
        raise TypeError("embedding analysis needs a set2seq model")
    if len(sequence) < first_n:
        raise ValueError(f"entity {sequence.entity_id!r} has {len(sequence)} timesteps, fewer than first_n={first_n}")
    comps = model.components(sequence)
    return {k: v[:first_n] for k, v in comps.items()}


def analyze(model, seq_a, seq_b, first_n=10):
    """Five [first_n x first_n] cosine-distance matrices, plus the raw components.

    Panels whose vectors contain a zero row (a disabled or out-of-vocabulary
    embedding) come back filled with NaN.
    """
    ca = career_components(model, seq_a, first_n)
    cb = career_components(model, seq_b, first_n)
    panels = {}
    for name in PANELS:
        try:
            panels[name] = pairwise_cosine_matrix(ca[name], cb[name])
        except ValueError as exc:
            warnings.warn(f"panel {name!r} undefined: {exc}")
            panels[name] = np.full((first_n, first_n), np.nan)
    return panels, ca, cb


def write_matrix_csv(path, matrix, row_labels, col_labels):
    with open(path, "w") as f:
        f.write("," + ",".join(str(c) for c in col_labels) + "\n")
        for label, row in zip(row_labels, matrix):
            f.write(str(label) + "," + ",".join(repr(float(v)) for v in row) + "\n")
