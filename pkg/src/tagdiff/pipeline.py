"""End-to-end cascade: embeddings in, diffusion and heads, ensemble out."""
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .diffusion import (
    PprParams,
    SignConfig,
    build_sign_features,
    gcn_normalize,
    simple_gcn_features,
    symmetrize,
)
from .ensemble import ablation_rows, accuracy, aggregate, mean_pool
from .errors import InvalidInputError, LoadError, StageError
from .nn import TrainConfig, init_head, predict, standardize_features, train
from .sparse import SparseMatrix, as_dense

log = logging.getLogger(__name__)

HEADS = ("logistic", "mlp", "gcn", "simple_gcn", "sign")
DISPLAY = {"logistic": "Logistic", "mlp": "MLP", "gcn": "GCN",
           "simple_gcn": "Simple-GCN", "sign": "SIGN"}
DIFFUSION_HEADS = ("simple_gcn", "sign")
SIMPLE_GCN_GRID = (2, 3, 4)
SIGN_GRID = ((3, 0, 0), (3, 0, 1), (3, 3, 0), (4, 2, 1), (5, 3, 0))
DEFAULT_SEEDS = (0, 1, 2, 3)


@dataclass
class Dataset:
    graph: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    splits: tuple
    n_classes: int

    def __post_init__(self):
        n = self.graph.n_rows
        self.features = as_dense(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = tuple(np.asarray(s, dtype=np.int64) for s in self.splits)
        if self.graph.n_cols != n:
            raise InvalidInputError("graph must be square")
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise InvalidInputError(
                f"graph has {n} nodes, features {self.features.shape[0]} rows, "
                f"labels {self.labels.shape[0]} entries")
        if len(self.splits) != 3:
            raise InvalidInputError("need train, validation and test splits")
        seen = np.zeros(n, dtype=bool)
        for name, split in zip(("train", "val", "test"), self.splits):
            if np.any(seen[split]):
                raise InvalidInputError(f"{name} split overlaps an earlier split")
            seen[split] = True
            if np.any(self.labels[split] < 0):
                raise InvalidInputError(f"{name} split contains unlabeled nodes")
            if np.any(self.labels[split] >= self.n_classes):
                raise InvalidInputError(f"{name} split has labels >= n_classes")

    @property
    def n_nodes(self):
        return self.graph.n_rows

    @property
    def n_edges(self):
        return self.graph.nnz

    @property
    def train_idx(self):
        return self.splits[0]

    @property
    def val_idx(self):
        return self.splits[1]

    @property
    def test_idx(self):
        return self.splits[2]

    def summary(self):
        return {"nodes": self.n_nodes, "edges": self.n_edges, "features": self.features.shape[1],
                "classes": self.n_classes, "train": len(self.splits[0]),
                "val": len(self.splits[1]), "test": len(self.splits[2])}


@dataclass
class RunConfig:
    heads: tuple = ("mlp", "gcn", "simple_gcn", "sign")
    sign_grid: tuple = SIGN_GRID
    simple_gcn_k: tuple = SIMPLE_GCN_GRID
    simple_gcn_head: str = "logistic"
    train: TrainConfig = field(default_factory=TrainConfig)
    ppr: PprParams = field(default_factory=PprParams)
    symmetrize: bool = True
    seeds: tuple = DEFAULT_SEEDS
    n_threads: int = 1

    def __post_init__(self):
        self.heads = tuple(self.heads)
        self.sign_grid = tuple(tuple(int(v) for v in spt) for spt in self.sign_grid)
        self.simple_gcn_k = tuple(int(k) for k in self.simple_gcn_k)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.heads:
            raise InvalidInputError("enable at least one head")
        unknown = set(self.heads) - set(HEADS)
        if unknown:
            raise InvalidInputError(f"unknown heads: {sorted(unknown)}")
        if len(set(self.heads)) != len(self.heads):
            raise InvalidInputError("heads listed twice")
        if "sign" in self.heads and not self.sign_grid:
            raise InvalidInputError("SIGN grid is empty")
        if "simple_gcn" in self.heads and not self.simple_gcn_k:
            raise InvalidInputError("Simple-GCN grid is empty")
        if any(k < 1 for k in self.simple_gcn_k):
            raise InvalidInputError("Simple-GCN powers must be >= 1")
        for spt in self.sign_grid:
            SignConfig(*spt)
        if self.simple_gcn_head not in ("logistic", "mlp"):
            raise InvalidInputError("Simple-GCN head must be 'logistic' or 'mlp'")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        if "ppr" in d:
            d["ppr"] = PprParams(**d["ppr"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["sign_grid"] = [list(t) for t in self.sign_grid]
        for key in ("heads", "simple_gcn_k", "seeds"):
            d[key] = list(d[key])
        return d


# -- ingestion --------------------------------------------------------------

def load_dataset(edge_path, feature_path, label_path, split_paths, n_classes=None):
    """Read and validate a dataset; the node count comes from the feature file."""
    x = io.read_features(feature_path)
    n = x.shape[0]
    src, dst = io.read_edges(edge_path, n)
    labels = io.read_labels(label_path)
    if labels.shape[0] != n:
        raise LoadError(label_path, f"{labels.shape[0]} labels for {n} feature rows")
    split_paths = list(split_paths)
    if len(split_paths) != 3:
        raise LoadError(", ".join(map(str, split_paths)), "expected train, val and test split files")
    splits = []
    owner = np.full(n, -1, dtype=np.int64)
    for k, path in enumerate(split_paths):
        idx = io.read_index_file(path, n)
        clash = np.flatnonzero(owner[idx] >= 0)
        if clash.size:
            node = idx[clash[0]]
            raise LoadError(path, f"node {node} already in split file {split_paths[owner[node]]}",
                            _line_of(path, clash[0]))
        unlabeled = np.flatnonzero(labels[idx] < 0)
        if unlabeled.size:
            raise LoadError(path, f"node {idx[unlabeled[0]]} has no label", _line_of(path, unlabeled[0]))
        owner[idx] = k
        splits.append(idx)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    graph = SparseMatrix.from_edges(src, dst, n)
    return Dataset(graph, x, labels, tuple(splits), n_classes)


def _line_of(path, entry):
    """1-based line number of the ``entry``-th non-blank line."""
    seen = -1
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            if line.strip():
                seen += 1
                if seen == entry:
                    return no
    return None


def save_dataset(ds, out_dir):
    """Write ``ds`` in the on-disk formats; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": out / "edges.txt",
        "features": out / "features.stgf",
        "labels": out / "labels.txt",
        "splits": [out / "train.txt", out / "val.txt", out / "test.txt"],
    }
    io.write_edges(paths["edges"], ds.graph.row_ids(), ds.graph.col_indices)
    io.write_features(paths["features"], ds.features)
    io.write_ints(paths["labels"], ds.labels)
    for path, split in zip(paths["splits"], ds.splits):
        io.write_ints(path, split)
    return paths


def make_splits(n, labels, fractions=(0.6, 0.2, 0.2), seed=0):
    """Shuffle labeled nodes and cut them into train/val/test by ``fractions``."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise InvalidInputError("fractions must be three non-negative numbers summing to 1")
    labels = np.asarray(labels)
    if labels.shape[0] != n:
        raise InvalidInputError("labels must have n entries")
    labeled = np.flatnonzero(labels >= 0)
    order = np.random.default_rng(seed).permutation(labeled)
    m = order.size
    n_train = int(np.floor(fractions[0] * m + 1e-9))
    n_val = int(np.floor(fractions[1] * m + 1e-9))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    for name, part in zip(("train", "val", "test"), parts):
        if part.size == 0:
            raise InvalidInputError(f"{m} labeled nodes leave the {name} split empty")
    return tuple(np.sort(p) for p in parts)


def generate_synthetic(n, n_classes, d, p_intra, p_inter, noise, seed=0):
    """Planted-partition digraph with noisy class-centroid features.

    Every ordered pair of distinct nodes is an edge independently, with
    probability ``p_intra`` inside a class and ``p_inter`` across classes.
    Features are a random unit centroid per class plus Gaussian noise.
    """
    if not 0.0 <= p_inter < p_intra <= 1.0:
        raise InvalidInputError("need 0 <= p_inter < p_intra <= 1")
    if d < 1 or n_classes < 1 or n < n_classes:
        raise InvalidInputError("need d >= 1 and n >= n_classes >= 1")
    if noise < 0:
        raise InvalidInputError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_classes)
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    src, dst = [], []
    for cu in range(n_classes):
        for cv in range(n_classes):
            p = p_intra if cu == cv else p_inter
            nu, nv = members[cu], members[cv]
            size = nu.size * nv.size
            m = rng.binomial(size, p) if p > 0 else 0
            pos = rng.choice(size, size=m, replace=False) if m else np.zeros(0, dtype=np.int64)
            u, v = nu[pos // nv.size], nv[pos % nv.size]
            keep = u != v
            src.append(u[keep])
            dst.append(v[keep])
    graph = SparseMatrix.from_edges(np.concatenate(src), np.concatenate(dst), n)
    centroids = rng.normal(size=(n_classes, d))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    x = centroids[labels] + noise * rng.normal(size=(n, d))
    splits = make_splits(n, labels, (0.6, 0.2, 0.2), seed)
    return Dataset(graph, x, labels, splits, n_classes)


# -- cascade ----------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


class Prepared:
    """Per-dataset state shared by every seed: standardized inputs and operators."""

    def __init__(self, ds, cfg):
        self.ds, self.cfg = ds, cfg
        self._std = None
        self._a_hat = None
        self._sgc = {}
        self._sign = {}

    @property
    def standardized(self):
        if self._std is None:
            self._std = _stage("standardize", standardize_features,
                               self.ds.features, self.ds.train_idx)[0]
        return self._std

    @property
    def a_hat(self):
        if self._a_hat is None:
            a = symmetrize(self.ds.graph) if self.cfg.symmetrize else self.ds.graph
            self._a_hat = _stage("normalize", gcn_normalize, a)
        return self._a_hat

    def simple_gcn(self, k):
        if k not in self._sgc:
            self._sgc[k] = _stage("diffuse", simple_gcn_features, self.ds.graph, self.standardized,
                                  k, self.cfg.symmetrize, self.cfg.n_threads)
        return self._sgc[k]

    def sign(self, spt):
        if spt not in self._sign:
            feats = _stage("diffuse", build_sign_features, self.ds.graph, self.standardized,
                           SignConfig(*spt, ppr=self.cfg.ppr), self.cfg.symmetrize,
                           self.cfg.n_threads, True)
            self._sign[spt] = feats.concat()
        return self._sign[spt]

    def inputs(self, head, choice=None):
        """Features, adjacency and model kind for ``head``."""
        if head in ("logistic", "mlp"):
            return self.ds.features, None, head
        if head == "gcn":
            return self.ds.features, self.a_hat, "gcn"
        if head == "simple_gcn":
            return self.simple_gcn(choice), None, self.cfg.simple_gcn_head
        if head == "sign":
            return self.sign(tuple(choice)), None, "mlp"
        raise InvalidInputError(f"unknown head {head!r}")


def fit_head(prep, head, seed, choice=None):
    """Train one head with ``seed``; returns ``(model, probs, history)``."""
    ds, tc = prep.ds, prep.cfg.train
    x, adj, kind = prep.inputs(head, choice)
    model = init_head(kind, x.shape[1], ds.n_classes, tc.hidden_dim, tc.dropout_rate, seed)
    model, history = _stage(f"train:{head}", train, model, x, adj, ds.labels,
                            ds.train_idx, ds.val_idx, replace(tc, seed=seed))
    return model, predict(model, x, adj), history


def _pick(scores):
    # highest validation accuracy, then fewest total powers, then grid order
    best = max(range(len(scores)),
               key=lambda i: (scores[i]["val_acc"], -scores[i]["total_powers"], -i))
    return scores[best]


def _select(prep, head, grid, seed):
    if len(grid) == 1:
        return {"choice": grid[0], "scores": []}
    scores = []
    for choice in grid:
        _, probs, _ = fit_head(prep, head, seed, choice)
        total = choice if np.isscalar(choice) else sum(choice)
        scores.append({"choice": choice, "total_powers": int(total),
                       "val_acc": accuracy(probs, prep.ds.labels, prep.ds.val_idx)})
        log.info("select %s %s: val_acc=%.4f", head, choice, scores[-1]["val_acc"])
    return {"choice": _pick(scores)["choice"], "scores": scores}


def select_model(dataset, cfg=None, heads=None, _prep=None):
    """Validation-argmax over the Simple-GCN ``k`` and SIGN ``(s, p, t)`` grids.

    Uses the first configured seed.  A grid with a single entry is returned
    without training.
    """
    cfg = cfg or RunConfig()
    prep = _prep or Prepared(dataset, cfg)
    heads = heads if heads is not None else [h for h in cfg.heads if h in DIFFUSION_HEADS]
    out = {}
    if "simple_gcn" in heads:
        out["simple_gcn"] = _stage("select", _select, prep, "simple_gcn", cfg.simple_gcn_k, cfg.seeds[0])
    if "sign" in heads:
        out["sign"] = _stage("select", _select, prep, "sign", cfg.sign_grid, cfg.seeds[0])
    return out


def train_members(dataset, cfg, seed, choices=None, _prep=None):
    """Train every enabled head with ``seed``; returns ``{head: probs}`` in head order."""
    prep = _prep or Prepared(dataset, cfg)
    choices = choices or {}
    return {head: fit_head(prep, head, seed, choices.get(head))[1] for head in cfg.heads}


def run_cascade(dataset, cfg=None, return_predictions=False):
    """Train all enabled heads for every seed and mean-pool their predictions.

    The report carries one row per head plus an ``Ensemble`` row, each with
    the mean and standard deviation of test accuracy across seeds.
    """
    cfg = cfg or RunConfig()
    prep = Prepared(dataset, cfg)
    selection = select_model(dataset, cfg, _prep=prep)
    choices = {h: s["choice"] for h, s in selection.items()}
    per_seed, predictions = [], {}
    for seed in cfg.seeds:
        members = train_members(dataset, cfg, seed, choices, _prep=prep)
        ens = _stage("ensemble", mean_pool, [(h, p) for h, p in members.items()])
        rows = [{"row": DISPLAY[h], "accuracy": accuracy(p, dataset.labels, dataset.test_idx)}
                for h, p in members.items()]
        rows.append({"row": "Ensemble", "accuracy": accuracy(ens, dataset.labels, dataset.test_idx)})
        per_seed.append(rows)
        if return_predictions:
            predictions[seed] = {**members, "ensemble": ens}
    rows = aggregate(per_seed)
    for row in rows:
        head = next((h for h in cfg.heads if DISPLAY[h] == row["row"]), None)
        if head in choices:
            row["config"] = _choice_record(head, choices[head])
    report = {"dataset": dataset.summary(), "seeds": list(cfg.seeds), "rows": rows,
              "selection": {h: _selection_record(h, s) for h, s in selection.items()}}
    if return_predictions:
        report["predictions"] = predictions
    return report


def run_ablation(dataset, cfg=None):
    """Leave-one-out ablation over the enabled heads, aggregated across seeds."""
    cfg = cfg or RunConfig()
    if len(cfg.heads) < 2:
        raise StageError("ablate", InvalidInputError("ablation needs at least two heads"))
    prep = Prepared(dataset, cfg)
    choices = {h: s["choice"] for h, s in select_model(dataset, cfg, _prep=prep).items()}
    per_seed = []
    for seed in cfg.seeds:
        members = train_members(dataset, cfg, seed, choices, _prep=prep)
        named = [(DISPLAY[h], p) for h, p in members.items()]
        per_seed.append(_stage("ablate", ablation_rows, named, dataset.labels, dataset.test_idx))
    return aggregate(per_seed)


def _choice_record(head, choice):
    if head == "simple_gcn":
        return {"k": int(choice)}
    s, p, t = choice
    return {"s": s, "p": p, "t": t}


def _selection_record(head, sel):
    return {"chosen": _choice_record(head, sel["choice"]),
            "evaluated": [{**_choice_record(head, sc["choice"]), "val_acc": sc["val_acc"]}
                          for sc in sel["scores"]]}


def report_records(report):
    return [dict(r) for r in report["rows"]]
