import json
from collections import Counter

import numpy as np
import pytest

from helpers import make_scene
from reltr.dataset import (
    DatasetError, DatasetFile, Node, SceneSample, SplitSpec, Vocab, dumps_dataset, load_dataset,
    parse_dataset, save_dataset, split_dataset,
)
from reltr.frequency import build_frequency_table
from reltr.semantics import class_semantic_vectors, class_vector
from reltr.synthetic import SyntheticConfig, default_vocab, derive_triples, generate_synthetic

SMALL = SyntheticConfig(num_samples=40, seed=3, d_vis=8)


@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SMALL)


def toy_dataset(samples):
    vocab = Vocab([f"c{i}" for i in range(5)], ["__background__", "p1", "p2", "p3"])
    return DatasetFile(vocab=vocab, samples=samples, d_vis=6)


def write_doc(tmp_path, doc):
    path = tmp_path / "ds.json"
    path.write_text(json.dumps(doc))
    return path


class TestLoad:
    def test_empty_samples(self, tmp_path):
        save_dataset(toy_dataset([]), tmp_path / "e.json")
        assert load_dataset(tmp_path / "e.json").samples == []

    def test_round_trip_bytewise(self, tmp_path, small_ds):
        save_dataset(small_ds, tmp_path / "a.json")
        first = (tmp_path / "a.json").read_bytes()
        save_dataset(load_dataset(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "b.json").read_bytes() == first

    def test_round_trip_values(self, tmp_path, small_ds):
        save_dataset(small_ds, tmp_path / "a.json")
        back = load_dataset(tmp_path / "a.json")
        for a, b in zip(small_ds.samples, back.samples):
            assert a.gt_triples == b.gt_triples and a.image_size == b.image_size
            assert np.array_equal(a.edge_features, b.edge_features)
            for na, nb in zip(a.nodes, b.nodes):
                assert na.box == nb.box and na.gt_class == nb.gt_class
                assert np.array_equal(na.visual_feature, nb.visual_feature)

    def _doc(self, mutate):
        doc = json.loads(dumps_dataset(toy_dataset([make_scene(3, seed=1, sample_id="bad_one")])))
        mutate(doc["samples"][0])
        return doc

    @pytest.mark.parametrize("mutate,field", [
        (lambda s: s["gt_triples"].append([0, 1, 5]), "gt_triples"),
        (lambda s: s["gt_triples"].append([1, 1, 1]), "gt_triples"),
        (lambda s: s["gt_triples"].append([0, 0, 1]), "gt_triples"),
        (lambda s: s["gt_triples"].append([0, 4, 1]), "gt_triples"),
        (lambda s: s["nodes"][0].update(gt_class=9), "gt_class"),
        (lambda s: s["nodes"][1].update(visual_feature=[0.0] * 5), "visual_feature"),
        (lambda s: s["nodes"][2].update(box=[10, 10, 5, 20]), "box"),
        (lambda s: s["nodes"][2].update(box=[10, 10, 120, 20]), "box"),
        (lambda s: s.pop("nodes"), "nodes"),
    ])
    def test_invalid_sample_rejected_naming_it(self, tmp_path, mutate, field):
        with pytest.raises(DatasetError, match=rf"bad_one.*{field}"):
            load_dataset(write_doc(tmp_path, self._doc(mutate)))

    def test_unknown_major_version(self, tmp_path):
        doc = json.loads(dumps_dataset(toy_dataset([])))
        doc["format_version"] = "2.0"
        with pytest.raises(DatasetError, match="2.0"):
            load_dataset(write_doc(tmp_path, doc))

    def test_minor_version_accepted(self):
        doc = json.loads(dumps_dataset(toy_dataset([])))
        doc["format_version"] = "1.7"
        assert parse_dataset(doc).format_version == "1.7"

    def test_not_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{nope")
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "x.json")

    def test_duplicate_ids(self, tmp_path):
        ds = toy_dataset([make_scene(2, seed=1, sample_id="dup"), make_scene(2, seed=2, sample_id="dup")])
        with pytest.raises(DatasetError, match="dup"):
            load_dataset(write_doc(tmp_path, json.loads(dumps_dataset(ds))))

    def test_by_id_lists_available(self, small_ds):
        assert small_ds.by_id("s00003").sample_id == "s00003"
        with pytest.raises(KeyError, match="s00000"):
            small_ds.by_id("missing")


# independent restatement of the rule table, written from the rule descriptions
def replay_relation(s_box, s_name, o_box, o_name, width):
    sx1, sy1, sx2, sy2 = s_box
    ox1, oy1, ox2, oy2 = o_box
    ocx, ocy = (ox1 + ox2) / 2, (oy1 + oy2) / 2
    s_area, o_area = (sx2 - sx1) * (sy2 - sy1), (ox2 - ox1) * (oy2 - oy1)
    holds_center = sx1 <= ocx <= sx2 and sy1 <= ocy <= sy2
    if s_name == "person" and o_name in ("shirt", "hat", "glove") and holds_center:
        return 2
    if s_name in ("car", "building") and o_name in ("wheel", "window") and holds_center:
        return 3
    if (o_name in ("car", "building") and s_name not in ("wheel", "window")
            and ox1 <= sx1 and oy1 <= sy1 and sx2 <= ox2 and sy2 <= oy2 and 2 * s_area < o_area):
        return 6
    o_h = oy2 - oy1
    if s_area < o_area and abs(sy2 - oy1) <= o_h / 10 and ox1 <= (sx1 + sx2) / 2 <= ox2:
        return 1
    if sy2 <= oy1 and min(sx2, ox2) > max(sx1, ox1) and oy1 - sy2 <= o_h:
        return 4
    gap = max(ox1 - sx2, sx1 - ox2, oy1 - sy2, sy1 - oy2)
    if s_area < o_area and 0 < gap <= width / 20:
        return 5
    return 0


class TestSynthetic:
    def test_bitwise_determinism(self):
        assert dumps_dataset(generate_synthetic(SMALL)) == dumps_dataset(generate_synthetic(SMALL))

    def test_seed_changes_content(self):
        other = SyntheticConfig(num_samples=40, seed=4, d_vis=8)
        assert dumps_dataset(generate_synthetic(SMALL)) != dumps_dataset(generate_synthetic(other))

    def test_every_scene_has_a_triple(self, small_ds):
        assert all(len(s.gt_triples) >= 1 for s in small_ds.samples)

    def test_node_counts_in_range(self, small_ds):
        assert all(5 <= s.num_nodes <= 10 for s in small_ds.samples)

    def test_rule_replay_matches(self, small_ds):
        names = small_ds.vocab.object_classes
        width = SMALL.image_size[0]
        for sample in small_ds.samples:
            boxes = [n.box for n in sample.nodes]
            labels = [names[n.gt_class] for n in sample.nodes]
            replayed = [(s, r, o) for s in range(len(boxes)) for o in range(len(boxes))
                        if s != o and (r := replay_relation(boxes[s], labels[s], boxes[o], labels[o], width))]
            assert sorted(replayed) == sorted(sample.gt_triples), sample.sample_id
            assert derive_triples(boxes, labels, width) == sample.gt_triples

    def test_every_predicate_occurs(self):
        ds = generate_synthetic(SyntheticConfig(num_samples=150, seed=1, d_vis=4))
        counts = Counter(r for s in ds.samples for _, r, _ in s.gt_triples)
        assert set(counts) == set(range(1, 7))

    def test_features_carry_class_signal(self, small_ds):
        # nearest class mean recovers most labels, so features are learnable
        feats = np.array([n.visual_feature for s in small_ds.samples for n in s.nodes])
        labels = np.array([n.gt_class for s in small_ds.samples for n in s.nodes])
        present = np.unique(labels)
        means = np.array([feats[labels == c].mean(axis=0) for c in present])
        pred = present[np.argmin(((feats[:, None, :] - means[None]) ** 2).sum(-1), axis=1)]
        assert (pred == labels).mean() > 0.8

    def test_edge_features_one_row_per_pair(self, small_ds):
        for s in small_ds.samples:
            assert s.edge_features.shape == (s.num_nodes * (s.num_nodes - 1) // 2, SMALL.d_vis)

    def test_priors_are_distributions(self, small_ds):
        for s in small_ds.samples:
            for n in s.nodes:
                assert abs(n.class_prior.sum() - 1.0) < 1e-4 and np.all(n.class_prior >= 0)

    @pytest.mark.parametrize("kwargs", [dict(nodes_per_scene=(1, 4)), dict(num_predicates=2),
                                        dict(num_classes=5), dict(nodes_per_scene=(6, 5))])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticConfig(**kwargs)

    def test_vocab_extension(self):
        vocab = default_vocab(14, 8)
        assert vocab.num_classes == 14 and vocab.num_relations == 9
        assert vocab.predicates[0] == "__background__"


class TestSemantics:
    def test_deterministic(self):
        assert class_vector("person", 16).tobytes() == class_vector("person", 16).tobytes()

    def test_unit_norm(self):
        table = class_semantic_vectors([f"c{i}" for i in range(30)], 16)
        np.testing.assert_allclose(np.linalg.norm(table, axis=1), 1.0, atol=1e-12)

    def test_spread_for_150_classes(self):
        table = class_semantic_vectors([f"class_{i}" for i in range(150)], 16)
        cos = np.abs(table @ table.T)
        np.fill_diagonal(cos, 0.0)
        assert cos.max() < 0.95

    def test_seed_matters(self):
        assert not np.allclose(class_vector("cup", 8, seed=0), class_vector("cup", 8, seed=1))

    def test_dimension_floor(self):
        with pytest.raises(ValueError):
            class_semantic_vectors(["a"], 1)


class TestFrequencyTable:
    def test_empty_split(self):
        table = build_frequency_table([], 3, 4)
        assert not table.counts.any()
        np.testing.assert_allclose(table.log_probs, np.log(0.25))

    def test_single_triple(self):
        nodes = [Node((0, 0, 5, 5), 0, np.zeros(2)), Node((1, 1, 9, 9), 2, np.zeros(2))]
        table = build_frequency_table([SceneSample("x", (10, 10), nodes, [(0, 1, 1)])], 3, 3)
        assert table.counts[0, 2, 1] == 1 and table.counts.sum() == 1

    def test_matches_single_pass_count(self):
        ds = generate_synthetic(SyntheticConfig(num_samples=120, seed=9, d_vis=4))
        train = split_dataset(ds)["train"][:100]
        counter = Counter()
        for sample in train:
            for s, r, o in sample.gt_triples:
                counter[sample.nodes[s].gt_class, sample.nodes[o].gt_class, r] += 1
        table = build_frequency_table(train, 12, 7)
        assert {k: v for k, v in np.ndenumerate(table.counts) if v} == dict(counter)
        assert not table.counts[:, :, 0].any()


class TestSplit:
    def test_partition(self, small_ds):
        parts = split_dataset(small_ds)
        ids = [s.sample_id for part in parts.values() for s in part]
        assert sorted(ids) == sorted(s.sample_id for s in small_ds.samples)
        assert len(set(ids)) == len(ids)

    def test_deterministic(self, small_ds):
        a, b = split_dataset(small_ds), split_dataset(small_ds)
        assert {k: [s.sample_id for s in v] for k, v in a.items()} == \
            {k: [s.sample_id for s in v] for k, v in b.items()}

    def test_seed_changes_membership(self, small_ds):
        a = {s.sample_id for s in split_dataset(small_ds, SplitSpec(seed=1))["test"]}
        b = {s.sample_id for s in split_dataset(small_ds, SplitSpec(seed=2))["test"]}
        assert a != b

    def test_sizes(self):
        ds = toy_dataset([make_scene(2, seed=i, sample_id=f"t{i}") for i in range(24)])
        sizes = {k: len(v) for k, v in split_dataset(ds).items()}
        assert sizes == {"train": 20, "val": 2, "test": 2}

    def test_explicit_splits_respected(self):
        samples = [make_scene(2, seed=i, sample_id=f"t{i}") for i in range(3)]
        for s, name in zip(samples, ("test", "train", "val")):
            s.split = name
        parts = split_dataset(toy_dataset(samples))
        assert [s.sample_id for s in parts["test"]] == ["t0"]

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            SplitSpec(train=0.5, val=0.1, test=0.1)
