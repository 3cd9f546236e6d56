"""Mean-pooled ensembles, accuracy, and leave-one-out ablation tables."""
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class EnsembleBundle:
    """Named class-probability matrices sharing one shape."""

    members: list
    n_classes: int

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("an ensemble needs at least one member")
        shape = np.shape(self.members[0][1])
        for name, probs in self.members:
            if np.shape(probs) != shape or shape[1] != self.n_classes:
                raise InvalidInputError(f"member {name!r} has shape {np.shape(probs)}, expected {shape}")

    @classmethod
    def of(cls, members):
        members = list(members)
        if not members:
            raise InvalidInputError("an ensemble needs at least one member")
        return cls(members, np.shape(members[0][1])[1])


def check_probabilities(probs, atol=1e-9):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise InvalidInputError("prediction matrix must be 2-d")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > atol):
        raise InvalidInputError("prediction rows must be non-negative and sum to 1")
    return probs


def mean_pool(bundle):
    """Arithmetic mean of the member probability matrices.

    Member values are sorted entrywise before summation, so the result does
    not depend on member order down to the last bit.
    """
    if not isinstance(bundle, EnsembleBundle):
        bundle = EnsembleBundle.of(bundle)
    stack = np.stack([np.asarray(p, dtype=np.float64) for _, p in bundle.members])
    if len(stack) == 1:
        return stack[0].copy()
    stack.sort(axis=0)
    total = stack[0].copy()
    for layer in stack[1:]:
        total += layer
    return total / len(stack)


def accuracy(preds, labels, idx):
    """Share of ``idx`` whose argmax class equals the label (ties go to the lowest class)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise InvalidInputError("accuracy needs a non-empty index set")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    return float(np.mean(np.argmax(preds[idx], axis=1) == labels[idx]))


def ablation_rows(members, labels, idx):
    """Accuracy of the full ensemble, every leave-one-out subset and every member."""
    members = list(members)
    if len(members) < 2:
        raise InvalidInputError("ablation needs at least two members")
    names = [name for name, _ in members]
    if len(set(names)) != len(names):
        raise InvalidInputError("member names must be unique")
    rows = [{"row": "Full Ensemble", "members": names,
             "accuracy": accuracy(mean_pool(members), labels, idx)}]
    for i, name in enumerate(names):
        rest = members[:i] + members[i + 1:]
        rows.append({"row": f"No {name}", "members": [n for n, _ in rest],
                     "accuracy": accuracy(mean_pool(rest), labels, idx)})
    for name, probs in members:
        rows.append({"row": name, "members": [name], "accuracy": accuracy(probs, labels, idx)})
    return rows


def ablation_table(members, labels, splits):
    """Test-split ablation rows.  ``splits`` is ``(train, val, test)``."""
    return ablation_rows(members, labels, splits[2])


def summarize(values):
    """Mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())


def aggregate(per_seed_rows, key="accuracy"):
    """Collapse rows from several seeds into ``mean``/``std`` per row label.

    Row order follows the first seed.
    """
    order = [r["row"] for r in per_seed_rows[0]]
    by_row = {name: [] for name in order}
    for rows in per_seed_rows:
        for r in rows:
            by_row[r["row"]].append(r[key])
    out = []
    for name in order:
        mean, std = summarize(by_row[name])
        out.append({"row": name, "mean": mean, "std": std, "n_seeds": len(by_row[name]),
                    "values": by_row[name]})
    return out


def format_table(rows, title=None):
    """Aligned text table with ``mean ± std`` per row."""
    width = max([len("Method")] + [len(r["row"]) for r in rows])
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Method':<{width}}  Accuracy")
    lines.append("-" * (width + 20))
    for r in rows:
        lines.append(f"{r['row']:<{width}}  {r['mean']:.4f} ± {r['std']:.4f}")
    return "\n".join(lines)


def write_records(path, records):
    """One JSON object per line, keys sorted so output is byte-stable."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
