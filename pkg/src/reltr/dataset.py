"""Scene records, the on-disk dataset document, and deterministic splits.

A dataset file is a single JSON document::

    {
      "format": "reltr-dataset",
      "format_version": "1.0",
      "vocab": {"object_classes": [...], "predicates": ["__background__", ...]},
      "feature_dims": {"d_vis": 32},
      "meta": {...},                       # free-form, e.g. the generator config
      "samples": [
        {"sample_id": "s00000", "image_size": [640, 480],
         "nodes": [{"box": [x1, y1, x2, y2], "gt_class": 3,
                    "visual_feature": [...], "class_prior": [...]}],
         "edge_features": [[...], ...],    # optional, one row per pair i<j
         "gt_triples": [[subject, predicate, object], ...],
         "split": "train"}                 # optional
      ]
    }

Files are written with sorted keys and compact separators, so
``save(load(path))`` reproduces a canonical file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

FORMAT_NAME = "reltr-dataset"
FORMAT_VERSION = "1.0"
BACKGROUND = "__background__"


class DatasetError(ValueError):
    """A dataset file failed to parse or validate."""


@dataclass
class Node:
    box: tuple
    gt_class: int
    visual_feature: np.ndarray
    class_prior: np.ndarray | None = None


@dataclass
class SceneSample:
    sample_id: str
    image_size: tuple
    nodes: list
    gt_triples: list
    edge_features: np.ndarray | None = None
    split: str | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def pairs(self) -> list[tuple[int, int]]:
        """Canonical undirected pairs (i, j), i < j, in lexicographic order."""
        return list(combinations(range(len(self.nodes)), 2))

    def gt_classes(self) -> np.ndarray:
        return np.array([node.gt_class for node in self.nodes], dtype=np.int64)


@dataclass
class Vocab:
    object_classes: list
    predicates: list

    @property
    def num_classes(self) -> int:
        return len(self.object_classes)

    @property
    def num_relations(self) -> int:
        """Predicate count including the background slot."""
        return len(self.predicates)


@dataclass
class DatasetFile:
    vocab: Vocab
    samples: list
    d_vis: int
    meta: dict = field(default_factory=dict)
    format_version: str = FORMAT_VERSION

    def by_id(self, sample_id: str) -> SceneSample:
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        known = ", ".join(s.sample_id for s in self.samples[:20])
        raise KeyError(f"unknown sample id {sample_id!r}; available: {known}"
                       + (" ..." if len(self.samples) > 20 else ""))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _fail(sample_id, field_name, msg):
    raise DatasetError(f"sample {sample_id!r}, field {field_name}: {msg}")


def validate_sample(sample: SceneSample, vocab: Vocab, d_vis: int) -> None:
    sid = sample.sample_id
    width, height = sample.image_size
    if not (width > 0 and height > 0):
        _fail(sid, "image_size", f"must be positive, got {sample.image_size}")
    n = len(sample.nodes)
    for idx, node in enumerate(sample.nodes):
        x1, y1, x2, y2 = node.box
        if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
            _fail(sid, f"nodes[{idx}].box", f"{tuple(node.box)} invalid for image {width}x{height}")
        if not 0 <= node.gt_class < vocab.num_classes:
            _fail(sid, f"nodes[{idx}].gt_class", f"{node.gt_class} outside [0, {vocab.num_classes})")
        if node.visual_feature.shape != (d_vis,):
            _fail(sid, f"nodes[{idx}].visual_feature",
                  f"length {node.visual_feature.size} != d_vis {d_vis}")
        if not np.all(np.isfinite(node.visual_feature)):
            _fail(sid, f"nodes[{idx}].visual_feature", "non-finite value")
        if node.class_prior is not None:
            prior = node.class_prior
            if prior.shape != (vocab.num_classes,) or np.any(prior < 0) or not prior.sum() > 0:
                _fail(sid, f"nodes[{idx}].class_prior",
                      f"must be {vocab.num_classes} non-negative weights with positive sum")
    if sample.edge_features is not None:
        expected = (n * (n - 1) // 2, d_vis)
        if sample.edge_features.shape != expected:
            _fail(sid, "edge_features", f"shape {sample.edge_features.shape} != {expected}")
    for t_idx, triple in enumerate(sample.gt_triples):
        s, r, o = triple
        if not (0 <= s < n and 0 <= o < n):
            _fail(sid, f"gt_triples[{t_idx}]", f"{tuple(triple)} references a node outside [0, {n})")
        if s == o:
            _fail(sid, f"gt_triples[{t_idx}]", "subject equals object")
        if not 1 <= r < vocab.num_relations:
            _fail(sid, f"gt_triples[{t_idx}]",
                  f"predicate {r} outside [1, {vocab.num_relations}) (0 is background)")


def validate_dataset(ds: DatasetFile) -> None:
    if not ds.vocab.predicates or ds.vocab.predicates[0] != BACKGROUND:
        raise DatasetError(f"vocab.predicates[0] must be {BACKGROUND!r}")
    if ds.vocab.num_classes < 1:
        raise DatasetError("vocab.object_classes is empty")
    seen = set()
    for sample in ds.samples:
        if sample.sample_id in seen:
            raise DatasetError(f"duplicate sample_id {sample.sample_id!r}")
        seen.add(sample.sample_id)
        validate_sample(sample, ds.vocab, ds.d_vis)


# ---------------------------------------------------------------------------
# (de)serialisation
# ---------------------------------------------------------------------------

def _sample_to_json(sample: SceneSample) -> dict:
    out = {
        "sample_id": sample.sample_id,
        "image_size": [float(v) for v in sample.image_size],
        "nodes": [],
        "gt_triples": [[int(s), int(r), int(o)] for s, r, o in sample.gt_triples],
    }
    for node in sample.nodes:
        rec = {
            "box": [float(v) for v in node.box],
            "gt_class": int(node.gt_class),
            "visual_feature": node.visual_feature.tolist(),
        }
        if node.class_prior is not None:
            rec["class_prior"] = node.class_prior.tolist()
        out["nodes"].append(rec)
    if sample.edge_features is not None:
        out["edge_features"] = sample.edge_features.tolist()
    if sample.split is not None:
        out["split"] = sample.split
    return out


def _sample_from_json(rec: dict, d_vis: int) -> SceneSample:
    sid = rec.get("sample_id", "<missing id>")
    try:
        nodes = []
        for idx, n in enumerate(rec["nodes"]):
            prior = n.get("class_prior")
            nodes.append(Node(
                box=tuple(float(v) for v in n["box"]),
                gt_class=int(n["gt_class"]),
                visual_feature=np.asarray(n["visual_feature"], dtype=np.float64),
                class_prior=None if prior is None else np.asarray(prior, dtype=np.float64),
            ))
            if len(nodes[-1].box) != 4:
                _fail(sid, f"nodes[{idx}].box", "must have 4 coordinates")
        edges = rec.get("edge_features")
        if edges is not None:
            edges = np.asarray(edges, dtype=np.float64).reshape(-1, d_vis) if edges else np.zeros((0, d_vis))
        triples = [tuple(int(v) for v in t) for t in rec["gt_triples"]]
        if any(len(t) != 3 for t in triples):
            _fail(sid, "gt_triples", "every triple needs (subject, predicate, object)")
        return SceneSample(
            sample_id=str(rec["sample_id"]),
            image_size=tuple(float(v) for v in rec["image_size"]),
            nodes=nodes,
            gt_triples=triples,
            edge_features=edges,
            split=rec.get("split"),
        )
    except KeyError as exc:
        _fail(sid, exc.args[0], "missing")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        _fail(sid, "?", f"malformed record ({exc})")


def dataset_to_json(ds: DatasetFile) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": ds.format_version,
        "vocab": {"object_classes": list(ds.vocab.object_classes),
                  "predicates": list(ds.vocab.predicates)},
        "feature_dims": {"d_vis": int(ds.d_vis)},
        "meta": ds.meta,
        "samples": [_sample_to_json(s) for s in ds.samples],
    }


def dumps_dataset(ds: DatasetFile) -> str:
    return json.dumps(dataset_to_json(ds), sort_keys=True, separators=(",", ":"),
                      allow_nan=False) + "\n"


def save_dataset(ds: DatasetFile, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def parse_dataset(doc: dict) -> DatasetFile:
    if not isinstance(doc, dict):
        raise DatasetError("dataset document must be a JSON object")
    if doc.get("format") != FORMAT_NAME:
        raise DatasetError(f"not a {FORMAT_NAME} document (format={doc.get('format')!r})")
    version = str(doc.get("format_version", ""))
    if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
        raise DatasetError(f"unsupported format_version {version!r}; this reader handles "
                           f"{FORMAT_VERSION.split('.')[0]}.x")
    try:
        vocab = Vocab(list(doc["vocab"]["object_classes"]), list(doc["vocab"]["predicates"]))
        d_vis = int(doc["feature_dims"]["d_vis"])
        records = doc["samples"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"missing top-level field: {exc}") from exc
    samples = [_sample_from_json(rec, d_vis) for rec in records]
    ds = DatasetFile(vocab=vocab, samples=samples, d_vis=d_vis, meta=doc.get("meta", {}),
                     format_version=version)
    validate_dataset(ds)
    return ds


def load_dataset(path) -> DatasetFile:
    """Parse and fully validate a dataset file; any violation rejects the file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    return parse_dataset(doc)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float = 5 / 6
    val: float = 1 / 12
    test: float = 1 / 12
    seed: int = 42

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")


SPLITS = ("train", "val", "test")


def split_dataset(ds: DatasetFile, spec: SplitSpec = SplitSpec()) -> dict[str, list]:
    """Disjoint train/val/test partition.

    Samples carrying an explicit ``split`` field keep it when every sample has
    one; otherwise a seeded permutation is cut by the requested fractions.
    """
    if ds.samples and all(s.split is not None for s in ds.samples):
        out = {name: [] for name in SPLITS}
        for s in ds.samples:
            if s.split not in out:
                raise DatasetError(f"sample {s.sample_id!r}: unknown split {s.split!r}")
            out[s.split].append(s)
        return out
    n = len(ds.samples)
    order = np.random.Generator(np.random.PCG64(spec.seed)).permutation(n)
    n_train = int(round(spec.train * n))
    n_val = min(int(round(spec.val * n)), n - n_train)
    chunks = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return {name: [ds.samples[i] for i in sorted(idx)] for name, idx in zip(SPLITS, chunks)}
