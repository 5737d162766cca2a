"""Relation transformer: node encoder, edge decoder and directed relation head."""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .attention import AttentionTrace, DecoderLayer, EncoderLayer, decoder_stack, encoder_stack
from .frequency import FrequencyTable
from .geometry import boxes_geometry, union_box
from .layers import LayerNorm, Linear, Module
from .posenc import PosEncConfig, node_pos_table, pair_pos_table
from .rng import Rng
from .semantics import class_semantic_vectors
from .tensor import Tensor, concat, dropout, leaky_relu, take_rows

SGCLS = "sgcls"
PREDCLS = "predcls"
TASKS = (SGCLS, PREDCLS)

CHECKPOINT_FORMAT = "reltr-checkpoint"
CHECKPOINT_VERSION = "1.0"

# Dimensions used for the Visual Genome model; the defaults below are desk scale.
REFERENCE_SCALE = dict(d_model=2048, d_vis=4096, d_sem=200, num_heads=12, enc_layers=3, dec_layers=2)


class ConfigError(ValueError):
    pass


class EmptySceneError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int = 12
    num_predicates: int = 6
    d_vis: int = 32
    d_sem: int = 16
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 0
    enc_layers: int = 3
    dec_layers: int = 2
    pos_m: float = 10000.0
    dropout: float = 0.25
    leaky_slope: float = 0.01
    freq_eps: float = 1.0
    seed: int = 42
    sem_seed: int = 0

    def __post_init__(self):
        if self.d_ff <= 0:
            self.d_ff = 2 * self.d_model
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.d_model % 4:
            raise ConfigError(f"d_model={self.d_model} must be a multiple of 4 for pair encoding")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.num_classes < 1 or self.num_predicates < 1:
            raise ConfigError("need at least one object class and one predicate")

    @property
    def num_relations(self) -> int:
        return self.num_predicates + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ForwardOutput:
    object_logits: Tensor          # n x C
    relation_logits: Tensor | None  # n(n-1) x (R+1), rows follow ``directed``
    directed: np.ndarray           # n(n-1) x 2 (subject, object)
    edges: np.ndarray              # E x 2, canonical i < j
    labels: np.ndarray             # class per node used for the relation head
    n_final: Tensor
    e_final: Tensor | None
    trace: AttentionTrace


class RelationHead(Module):
    """LayerNorm -> Linear -> Dropout -> Linear -> LeakyReLU over [subject, edge, object]."""

    _children = ("norm", "w1", "w2")

    def __init__(self, d_model: int, rng: Rng):
        self.norm = LayerNorm(3 * d_model)
        self.w1 = Linear(3 * d_model, 2 * d_model, rng)
        self.w2 = Linear(2 * d_model, d_model, rng)

    def __call__(self, rel_in: Tensor, slope: float, p_drop: float, training: bool, rng) -> Tensor:
        return leaky_relu(self.w2(dropout(self.w1(self.norm(rel_in)), p_drop, training, rng)), slope)


class RelationTransformer(Module):
    _children = ("f_nlp", "encoder", "f_classifier", "f_elp", "decoder", "rpm", "w_final")

    def __init__(self, cfg: ModelConfig, class_names=None, predicate_names=None,
                 freq: FrequencyTable | None = None):
        self.cfg = cfg
        self.class_names = list(class_names or [f"class_{i}" for i in range(cfg.num_classes)])
        self.predicate_names = list(predicate_names or
                                    ["__background__"] + [f"pred_{i}" for i in range(1, cfg.num_relations)])
        if len(self.class_names) != cfg.num_classes or len(self.predicate_names) != cfg.num_relations:
            raise ConfigError("vocabulary sizes do not match the model config")
        rng = Rng(cfg.seed)
        d = cfg.d_model
        self.class_vectors = class_semantic_vectors(self.class_names, cfg.d_sem, cfg.sem_seed)
        self.f_nlp = Linear(cfg.d_vis + cfg.d_sem + 5, d, rng)
        self.encoder = [EncoderLayer(d, cfg.num_heads, cfg.d_ff, rng) for _ in range(cfg.enc_layers)]
        self.f_classifier = Linear(d, cfg.num_classes, rng)
        self.f_elp = Linear(cfg.d_vis + 5 + 2 * cfg.d_sem, d, rng)
        self.decoder = [DecoderLayer(d, cfg.num_heads, cfg.d_ff, rng) for _ in range(cfg.dec_layers)]
        self.rpm = RelationHead(d, rng)
        self.w_final = Linear(d, cfg.num_relations, rng)
        self.pos_cfg = PosEncConfig(d, cfg.pos_m)
        self.freq = freq or FrequencyTable.empty(cfg.num_classes, cfg.num_relations, cfg.freq_eps)
        if self.freq.counts.shape != (cfg.num_classes, cfg.num_classes, cfg.num_relations):
            raise ConfigError(f"frequency table shape {self.freq.counts.shape} does not match config")

    # -- inputs ------------------------------------------------------------
    def node_semantics(self, sample, mode: str) -> np.ndarray:
        """PREDCLS: ground-truth class vectors. SGCLS: prior-weighted mixture of class vectors."""
        if mode == PREDCLS:
            return self.class_vectors[sample.gt_classes()]
        rows = []
        for node in sample.nodes:
            prior = node.class_prior
            if prior is None:
                prior = np.full(self.cfg.num_classes, 1.0 / self.cfg.num_classes)
            rows.append((prior / prior.sum()) @ self.class_vectors)
        return np.stack(rows)

    def node_inputs(self, sample, mode: str) -> np.ndarray:
        vis = np.stack([node.visual_feature for node in sample.nodes])
        if vis.shape[1] != self.cfg.d_vis:
            raise ConfigError(f"visual feature width {vis.shape[1]} != model d_vis {self.cfg.d_vis}")
        geom = boxes_geometry([node.box for node in sample.nodes], sample.image_size)
        return np.concatenate([vis, self.node_semantics(sample, mode), geom], axis=1)

    def edge_inputs(self, sample, edges: np.ndarray, labels: np.ndarray) -> np.ndarray:
        if sample.edge_features is not None:
            vis = sample.edge_features
        else:
            feats = np.stack([node.visual_feature for node in sample.nodes])
            vis = np.maximum(feats[edges[:, 0]], feats[edges[:, 1]])
        if vis.shape[1] != self.cfg.d_vis:
            raise ConfigError(f"edge feature width {vis.shape[1]} != model d_vis {self.cfg.d_vis}")
        boxes = [node.box for node in sample.nodes]
        unions = [union_box(boxes[i], boxes[j]) for i, j in edges]
        geom = boxes_geometry(unions, sample.image_size)
        cv = self.class_vectors
        return np.concatenate([vis, geom, cv[labels[edges[:, 0]]], cv[labels[edges[:, 1]]]], axis=1)

    def node_input_embedding(self, sample, mode: str) -> Tensor:
        return self.f_nlp(Tensor(self.node_inputs(sample, mode)))

    def edge_input_embedding(self, sample, edges, labels) -> Tensor:
        return self.f_elp(Tensor(self.edge_inputs(sample, np.asarray(edges), np.asarray(labels))))

    # -- forward -------------------------------------------------------------
    def forward(self, sample, mode: str = PREDCLS, training: bool = False,
                rng: Rng | None = None) -> ForwardOutput:
        if mode not in TASKS:
            raise ValueError(f"mode must be one of {TASKS}, got {mode!r}")
        n = sample.num_nodes
        if n == 0:
            raise EmptySceneError(f"sample {sample.sample_id!r} has no nodes")
        if training and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        cfg = self.cfg
        p = cfg.dropout

        n_in = self.node_input_embedding(sample, mode) + Tensor(node_pos_table(np.arange(n), self.pos_cfg))
        n_final, trace = encoder_stack(n_in, self.encoder, training, p, rng)
        object_logits = self.f_classifier(n_final)
        if mode == PREDCLS:
            labels = sample.gt_classes()
        else:
            labels = np.argmax(object_logits.data, axis=1)

        edges = np.array(sample.pairs(), dtype=np.int64).reshape(-1, 2)
        if len(edges) == 0:
            return ForwardOutput(object_logits, None, np.zeros((0, 2), dtype=np.int64), edges,
                                 labels, n_final, None, trace)

        e_in = self.edge_input_embedding(sample, edges, labels)
        e_in = e_in + Tensor(pair_pos_table(edges[:, 0], edges[:, 1], self.pos_cfg))
        e_final, trace = decoder_stack(e_in, n_final, self.decoder, training, p, rng, trace)

        # row 2e is i -> j, row 2e + 1 is j -> i for canonical edge e = (i, j)
        edge_idx = np.repeat(np.arange(len(edges)), 2)
        subj = np.empty(2 * len(edges), dtype=np.int64)
        obj = np.empty_like(subj)
        subj[0::2], obj[0::2] = edges[:, 0], edges[:, 1]
        subj[1::2], obj[1::2] = edges[:, 1], edges[:, 0]

        rel_in = concat([take_rows(n_final, subj), take_rows(e_final, edge_idx),
                         take_rows(n_final, obj)], axis=1)
        rel_emb = self.rpm(rel_in, cfg.leaky_slope, p, training, rng)
        bias = self.freq.bias(labels[subj], labels[obj])
        relation_logits = self.w_final(rel_emb) + Tensor(bias)
        return ForwardOutput(object_logits, relation_logits, np.stack([subj, obj], axis=1), edges,
                             labels, n_final, e_final, trace)

    __call__ = forward

    # -- parameter utilities -------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state["class_vectors"] = self.class_vectors.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = (set(params) | {"class_vectors"}) - set(state)
        extra = set(state) - set(params) - {"class_vectors"}
        if missing or extra:
            raise ConfigError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ConfigError(f"parameter {name}: checkpoint shape {state[name].shape} "
                                  f"!= model shape {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        self.class_vectors = np.array(state["class_vectors"], dtype=np.float64)

    def zero_final(self) -> None:
        """Frequency-only ablation: relation logits reduce to the frequency bias."""
        self.w_final.weight.data[...] = 0.0
        self.w_final.bias.data[...] = 0.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _encode(arr: np.ndarray, dtype: str) -> dict:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    return {"dtype": dtype, "shape": list(arr.shape),
            "data": base64.b64encode(arr.astype(arr.dtype.newbyteorder("<")).tobytes()).decode("ascii")}


def _decode(rec: dict) -> np.ndarray:
    dtype = np.dtype(rec["dtype"]).newbyteorder("<")
    return np.frombuffer(base64.b64decode(rec["data"]), dtype=dtype).reshape(rec["shape"]).astype(rec["dtype"])


def checkpoint_document(model: RelationTransformer, extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "class_names": model.class_names,
        "predicate_names": model.predicate_names,
        "frequency": {"eps": model.freq.eps, "counts": _encode(model.freq.counts, "int64")},
        "params": {name: _encode(arr, "float64") for name, arr in model.state_dict().items()},
        "meta": extra or {},
    }


def dumps_checkpoint(model: RelationTransformer, extra: dict | None = None) -> str:
    return json.dumps(checkpoint_document(model, extra), sort_keys=True, indent=1) + "\n"


def save_checkpoint(model: RelationTransformer, path, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_checkpoint(model, extra), encoding="utf-8")


def load_checkpoint(path) -> tuple[RelationTransformer, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if str(doc.get("format_version", "")).split(".")[0] != CHECKPOINT_VERSION.split(".")[0]:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    cfg = ModelConfig.from_dict(doc["config"])
    freq = FrequencyTable(_decode(doc["frequency"]["counts"]), doc["frequency"]["eps"])
    model = RelationTransformer(cfg, doc["class_names"], doc["predicate_names"], freq)
    model.load_state_dict({name: _decode(rec) for name, rec in doc["params"].items()})
    return model, doc.get("meta", {})
