"""Rule-driven synthetic scenes with learnable class, layout and relation structure.

Scenes are assembled from object groups (a person with clothing, a table
with tableware, a car with wheels, a building with windows, ...).  Ground
truth predicates are then derived for every ordered node pair by
:func:`derive_triples`, a pure function of boxes and classes, so the labels
can always be replayed from the stored geometry.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import BACKGROUND, DatasetFile, Node, SceneSample, Vocab
from .geometry import box_geometry, union_box

BASE_CLASSES = ["person", "shirt", "hat", "glove", "table", "cup", "plate",
                "car", "wheel", "building", "window", "tree"]
BASE_PREDICATES = ["on", "wearing", "has", "above", "near", "in"]

ON, WEARING, HAS, ABOVE, NEAR, IN = range(1, 7)

WEARABLES = {"shirt", "hat", "glove"}
HOLDERS = {"car", "building"}
PARTS = {"wheel", "window"}


@dataclass
class SyntheticConfig:
    num_samples: int = 2400
    nodes_per_scene: tuple = (5, 10)
    num_classes: int = 12
    num_predicates: int = 6
    seed: int = 42
    d_vis: int = 32
    image_size: tuple = (640.0, 480.0)
    feature_noise: float = 0.3
    prior_confusion: float = 0.2

    def __post_init__(self):
        self.nodes_per_scene = tuple(int(v) for v in self.nodes_per_scene)
        self.image_size = tuple(float(v) for v in self.image_size)
        lo, hi = self.nodes_per_scene
        if lo < 2 or hi < lo:
            raise ValueError(f"nodes_per_scene must satisfy 2 <= min <= max, got {self.nodes_per_scene}")
        if self.num_predicates < 3:
            raise ValueError("num_predicates must be at least 3")
        if self.num_classes < len(BASE_CLASSES):
            raise ValueError(f"the rule set needs at least {len(BASE_CLASSES)} object classes")
        if self.num_samples < 0 or self.d_vis < 1:
            raise ValueError("num_samples must be >= 0 and d_vis >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nodes_per_scene"] = list(self.nodes_per_scene)
        d["image_size"] = list(self.image_size)
        return d


def default_vocab(num_classes: int = 12, num_predicates: int = 6) -> Vocab:
    classes = BASE_CLASSES + [f"object_{i}" for i in range(len(BASE_CLASSES), num_classes)]
    preds = BASE_PREDICATES[:num_predicates] + [
        f"predicate_{i}" for i in range(len(BASE_PREDICATES) + 1, num_predicates + 1)]
    return Vocab(classes, [BACKGROUND] + preds)


# ---------------------------------------------------------------------------
# predicate rules
# ---------------------------------------------------------------------------

def _center(b):
    return (b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0


def _contains_point(b, pt):
    return b[0] <= pt[0] <= b[2] and b[1] <= pt[1] <= b[3]


def _area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def relation_for(bs, cs: str, bo, co: str, image_width: float) -> int:
    """Predicate for the ordered pair (subject, object); 0 if no rule fires."""
    if cs == "person" and co in WEARABLES and _contains_point(bs, _center(bo)):
        return WEARING
    if cs in HOLDERS and co in PARTS and _contains_point(bs, _center(bo)):
        return HAS
    inside = bs[0] >= bo[0] and bs[1] >= bo[1] and bs[2] <= bo[2] and bs[3] <= bo[3]
    if inside and co in HOLDERS and cs not in PARTS and _area(bs) < 0.5 * _area(bo):
        return IN
    h_o = bo[3] - bo[1]
    cx_s = (bs[0] + bs[2]) / 2.0
    smaller = _area(bs) < _area(bo)
    if smaller and abs(bs[3] - bo[1]) <= 0.1 * h_o and bo[0] <= cx_s <= bo[2]:
        return ON
    overlap_x = min(bs[2], bo[2]) - max(bs[0], bo[0])
    if bs[3] <= bo[1] and overlap_x > 0 and bo[1] - bs[3] <= h_o:
        return ABOVE
    gap_x = max(bo[0] - bs[2], bs[0] - bo[2], 0.0)
    gap_y = max(bo[1] - bs[3], bs[1] - bo[3], 0.0)
    if smaller and 0 < max(gap_x, gap_y) <= 0.05 * image_width:
        return NEAR
    return 0


def derive_triples(boxes, class_names, image_width: float, num_predicates: int = 6) -> list:
    """All (subject, predicate, object) triples the rule set assigns to a scene."""
    triples = []
    n = len(boxes)
    for s in range(n):
        for o in range(n):
            if s == o:
                continue
            r = relation_for(boxes[s], class_names[s], boxes[o], class_names[o], image_width)
            if 0 < r <= num_predicates:
                triples.append((s, r, o))
    return triples


# ---------------------------------------------------------------------------
# scene layout
# ---------------------------------------------------------------------------

GROUP_KINDS = ("person", "table", "car", "building", "tree", "filler")
GROUP_WEIGHTS = np.array([0.30, 0.25, 0.15, 0.13, 0.10, 0.07])


class _Layout:
    def __init__(self, gen: np.random.Generator, width: float, height: float):
        self.gen, self.W, self.H = gen, width, height

    def u(self, lo, hi):
        return float(self.gen.uniform(lo, hi))

    def place(self, w, h, y_lo=0.0, y_hi=1.0):
        """Box of size w x h whose bottom edge falls in [y_lo, y_hi] * H."""
        w, h = min(w, self.W - 2), min(h, self.H - 2)
        x1 = self.u(0, self.W - w)
        bottom = self.u(max(h, y_lo * self.H), max(h, y_hi * self.H) + 1e-9)
        return [x1, bottom - h, x1 + w, bottom]

    def clip(self, b):
        x1, y1, x2, y2 = (round(v, 2) for v in b)
        x1, y1 = max(0.0, x1), max(0.0, y1)
        x2, y2 = min(self.W, x2), min(self.H, y2)
        if x2 - x1 < 2:
            x2 = min(self.W, x1 + 2)
            x1 = x2 - 2
        if y2 - y1 < 2:
            y2 = min(self.H, y1 + 2)
            y1 = y2 - 2
        return (x1, y1, x2, y2)

    def group(self, kind: str, filler_classes: list) -> list:
        """List of (class name, box) with the anchor object first."""
        u = self.u
        if kind == "person":
            w = u(40, 80)
            pb = self.place(w, u(2.2, 3.0) * w, 0.5, 1.0)
            items = [("person", pb)]
            ph = pb[3] - pb[1]
            if self.gen.random() < 0.6:
                hw = 0.6 * w
                cx = (pb[0] + pb[2]) / 2 + u(-0.1, 0.1) * w
                items.append(("hat", [cx - hw / 2, pb[1] - 0.08 * ph, cx + hw / 2, pb[1] + 0.1 * ph]))
            if self.gen.random() < 0.6:
                items.append(("shirt", [pb[0] + 0.05 * w, pb[1] + 0.25 * ph,
                                        pb[2] - 0.05 * w, pb[1] + 0.6 * ph]))
            if self.gen.random() < 0.4:
                gx = pb[0] + u(0.0, 0.7) * w
                gy = pb[1] + u(0.45, 0.6) * ph
                items.append(("glove", [gx, gy, gx + 0.3 * w, gy + 0.12 * ph]))
            return items
        if kind == "table":
            tb = self.place(u(120, 220), u(50, 90), 0.6, 1.0)
            items = [("table", tb)]
            th = tb[3] - tb[1]
            for _ in range(int(self.gen.integers(1, 4))):
                roll = self.gen.random()
                name = "cup" if roll < 0.45 else "plate" if roll < 0.9 else "hat"
                iw = u(18, 30) if name == "cup" else u(30, 45)
                ih = u(20, 32) if name == "cup" else u(8, 14)
                mode = self.gen.random()
                if mode < 0.5:
                    # resting on the table top
                    cx = u(tb[0] + iw / 2, tb[2] - iw / 2)
                    bottom = tb[1] + u(-0.06, 0.08) * th
                elif mode < 0.75:
                    # hovering over it
                    cx = u(tb[0] + iw / 2, tb[2] - iw / 2)
                    bottom = tb[1] - u(0.2, 0.8) * th
                else:
                    # standing beside it
                    gap = u(2, 20)
                    left = self.gen.random() < 0.5
                    cx = tb[0] - gap - iw / 2 if left else tb[2] + gap + iw / 2
                    bottom = tb[3] - u(0, 0.3) * th
                items.append((name, [cx - iw / 2, bottom - ih, cx + iw / 2, bottom]))
            return items
        if kind == "car":
            w = u(140, 240)
            cb = self.place(w, u(60, 100), 0.5, 1.0)
            items = [("car", cb)]
            ch = cb[3] - cb[1]
            for side in range(int(self.gen.integers(1, 3))):
                ww = 0.22 * w
                x1 = cb[0] + 0.08 * w if side == 0 else cb[2] - 0.08 * w - ww
                items.append(("wheel", [x1, cb[3] - 0.4 * ch, x1 + ww, cb[3]]))
            return items
        if kind == "building":
            w = u(150, 260)
            bb = self.place(w, u(180, 300), 0.4, 0.9)
            items = [("building", bb)]
            bh = bb[3] - bb[1]
            for _ in range(int(self.gen.integers(1, 4))):
                ww, wh = u(0.12, 0.2) * w, u(0.1, 0.15) * bh
                x1 = u(bb[0] + 0.05 * w, bb[2] - 0.05 * w - ww)
                y1 = u(bb[1] + 0.05 * bh, bb[1] + 0.6 * bh)
                items.append(("window", [x1, y1, x1 + ww, y1 + wh]))
            if self.gen.random() < 0.3:
                pw = u(18, 28)
                x1 = u(bb[0] + 2, bb[2] - pw - 2)
                y2 = bb[3] - u(1, 0.05 * bh)
                items.append(("person", [x1, y2 - 2.4 * pw, x1 + pw, y2]))
            return items
        if kind == "tree":
            w = u(60, 120)
            return [("tree", self.place(w, u(150, 260), 0.5, 1.0))]
        name = filler_classes[int(self.gen.integers(0, len(filler_classes)))]
        return [(name, self.place(u(20, 80), u(20, 80), 0.2, 1.0))]


def _scene(gen, cfg: SyntheticConfig, vocab: Vocab):
    width, height = cfg.image_size
    layout = _Layout(gen, width, height)
    class_index = {name: i for i, name in enumerate(vocab.object_classes)}
    fillers = vocab.object_classes[len(BASE_CLASSES):] or ["cup", "plate", "tree"]
    lo, hi = cfg.nodes_per_scene
    while True:
        target = int(gen.integers(lo, hi + 1))
        objects = []
        while len(objects) < target:
            kind = GROUP_KINDS[int(gen.choice(len(GROUP_KINDS), p=GROUP_WEIGHTS))]
            objects.extend(layout.group(kind, fillers)[: target - len(objects)])
        order = gen.permutation(len(objects))
        names = [objects[i][0] for i in order]
        boxes = [layout.clip(objects[i][1]) for i in order]
        triples = derive_triples(boxes, names, width, cfg.num_predicates)
        if triples:
            return boxes, [class_index[n] for n in names], triples


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> DatasetFile:
    """Build a dataset whose content is a pure function of ``cfg`` (seed included)."""
    gen = np.random.Generator(np.random.PCG64(cfg.seed))
    vocab = default_vocab(cfg.num_classes, cfg.num_predicates)
    C, d_vis = cfg.num_classes, cfg.d_vis
    prototypes = gen.standard_normal((C, d_vis))
    spatial_proj = gen.standard_normal((d_vis, 5))
    samples = []
    for idx in range(cfg.num_samples):
        boxes, classes, triples = _scene(gen, cfg, vocab)
        nodes = []
        for box, c in zip(boxes, classes):
            geom = box_geometry(box, cfg.image_size)
            feat = prototypes[c] + spatial_proj @ geom + cfg.feature_noise * gen.standard_normal(d_vis)
            peak = c
            if gen.random() < cfg.prior_confusion:
                peak = int((c + gen.integers(1, C)) % C)
            prior = 0.4 * gen.dirichlet(np.ones(C))
            prior[peak] += 0.6
            nodes.append(Node(box=box, gt_class=c, visual_feature=np.round(feat, 5),
                              class_prior=np.round(prior, 5)))
        n = len(nodes)
        edge_rows = []
        for i in range(n):
            for j in range(i + 1, n):
                ub = union_box(boxes[i], boxes[j])
                feat = (0.5 * (prototypes[classes[i]] + prototypes[classes[j]])
                        + spatial_proj @ box_geometry(ub, cfg.image_size)
                        + cfg.feature_noise * gen.standard_normal(d_vis))
                edge_rows.append(np.round(feat, 5))
        edges = np.stack(edge_rows) if edge_rows else np.zeros((0, d_vis))
        samples.append(SceneSample(sample_id=f"s{idx:05d}", image_size=cfg.image_size,
                                   nodes=nodes, gt_triples=triples, edge_features=edges))
    return DatasetFile(vocab=vocab, samples=samples, d_vis=d_vis,
                       meta={"generator": "reltr.synthetic", "config": cfg.to_dict()})
