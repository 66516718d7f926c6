import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segquery.builder import (EMPTY_RESPONSE, TEMPLATES, BuilderConfig, build_dataset, build_query,
                              build_response, build_single_target_sample, image_rng,
                              sample_class_list)
from segquery.core import CategoryTable, ImageRecord
from segquery.parser import extract_query_names

TABLE = CategoryTable.from_names(["sky", "cat", "road", "person", "tree", "car", "dog", "boat",
                                  "bench", "grass"])


def cfg(**kw):
    return BuilderConfig(**kw).resolved(TABLE)


def test_sample_full_permutation():
    t4 = CategoryTable.from_names(["a", "b", "c", "d"])
    c = BuilderConfig(min_sample=4, max_sample=4).resolved(t4)
    got = sample_class_list(t4, c, random.Random(1))
    assert sorted(got) == [0, 1, 2, 3]


def test_sample_single_and_deterministic():
    assert len(sample_class_list(TABLE, cfg(min_sample=1, max_sample=1), random.Random(0))) == 1
    c = cfg(min_sample=3, max_sample=3, seed=7)
    a = sample_class_list(TABLE, c, image_rng(7, "img"))
    b = sample_class_list(TABLE, c, image_rng(7, "img"))
    assert a == b and len(set(a)) == 3


def test_sample_size_range():
    c = cfg(min_sample=2, max_sample=6)
    rng = random.Random(3)
    sizes = {len(sample_class_list(TABLE, c, rng)) for _ in range(400)}
    assert sizes == {2, 3, 4, 5, 6}


def test_config_validation():
    assert BuilderConfig().resolved(TABLE).max_sample == 10
    with pytest.raises(ValueError):
        BuilderConfig(min_sample=0).resolved(TABLE)
    with pytest.raises(ValueError):
        BuilderConfig(min_sample=4, max_sample=3).resolved(TABLE)
    with pytest.raises(ValueError):
        BuilderConfig(max_sample=11).resolved(TABLE)
    with pytest.raises(ValueError):
        BuilderConfig(template_id=len(TEMPLATES)).resolved(TABLE)


def test_build_query_template0():
    assert build_query(["sky", "road"], 0) == "<IMAGE> Can you segment the sky, road in this image?"
    q = build_query(["sky"], 0)
    assert "," not in q and q.count("<IMAGE>") == 1
    with pytest.raises(ValueError):
        build_query([])


def test_build_query_other_templates():
    q0 = build_query(["sky", "road"], 0)
    q2 = build_query(["sky", "road"], 2)
    assert q2 == TEMPLATES[2].format(names="sky, road")
    assert q0 != q2
    assert extract_query_names(q2) == ["sky", "road"]
    for i in range(len(TEMPLATES)):
        assert build_query(["a b", "c"], i).count("<IMAGE>") == 1


def test_build_response_paper_format():
    sky, cat, road = 0, 1, 2
    text, targets = build_response([sky, cat, road], {sky, road}, TABLE, cfg())
    assert text == "sky<SEG>,cat<NEG>,road<SEG>."
    assert targets == [sky, road]


def test_build_response_all_present_and_all_absent():
    text, targets = build_response([4, 2], {2, 4, 5}, TABLE, cfg())
    assert "<NEG>" not in text and targets == [4, 2]
    text, targets = build_response([4, 2], {7}, TABLE, cfg())
    assert text == "tree<NEG>,road<NEG>." and targets == []


def test_build_response_without_augmentation():
    text, targets = build_response([4, 1, 2], {2, 4}, TABLE, cfg(augment_negatives=False))
    assert text == "tree<SEG>,road<SEG>." and targets == [4, 2]
    text, targets = build_response([4, 1], {7}, TABLE, cfg(augment_negatives=False))
    assert text == EMPTY_RESPONSE and targets == []


def test_build_response_canonical_order_when_inconsistent():
    text, targets = build_response([4, 1, 2], {2, 4}, TABLE, cfg(order_consistent=False))
    assert text == "cat<NEG>,road<SEG>,tree<SEG>." and targets == [2, 4]


def test_single_target():
    rec = ImageRecord("x", None, frozenset({3}))
    s = build_single_target_sample(rec, TABLE, random.Random(0))
    assert extract_query_names(s.query) == ["person"]
    assert s.response == "person<SEG>." and s.seg_target_ids == (3,)
    rec2 = ImageRecord("y", None, frozenset({3, 6}))
    a = build_single_target_sample(rec2, TABLE, image_rng(5, "y"))
    b = build_single_target_sample(rec2, TABLE, image_rng(5, "y"))
    assert a == b and a.seg_target_ids[0] in {3, 6}
    with pytest.raises(ValueError):
        build_single_target_sample(ImageRecord("z", None, frozenset()), TABLE, random.Random(0))


@settings(max_examples=200)
@given(st.integers(0, 2**64 - 1), st.sets(st.integers(0, 9)), st.booleans())
def test_response_invariants(seed, present, consistent):
    c = cfg(min_sample=1, max_sample=10, seed=seed, order_consistent=consistent)
    rng = random.Random(seed)
    sampled = sample_class_list(TABLE, c, rng)
    text, targets = build_response(sampled, present, TABLE, c)
    items = text[:-1].split(",")
    assert len(items) == len(sampled)
    names = [i.replace("<SEG>", "").replace("<NEG>", "") for i in items]
    assert sorted(names) == sorted(TABLE.name(s) for s in sampled)
    assert text.count("<SEG>") == len(set(sampled) & present) == len(targets)
    if consistent:
        assert names == [TABLE.name(s) for s in sampled]
    assert set(targets) <= present


def test_build_dataset_counts_and_determinism(small_manifest):
    c = BuilderConfig(min_sample=1, max_sample=4, seed=11)
    first = [s.to_json() for s in build_dataset(small_manifest, c, 3)]
    second = [s.to_json() for s in build_dataset(small_manifest, c, 3)]
    assert len(first) == 6 and first == second
    assert [json.loads(l)["image_id"] for l in first] == ["a"] * 3 + ["b"] * 3
    for line in first:
        doc = json.loads(line)
        assert set(doc) == {"image_id", "query", "response", "seg_targets"}
        n_items = doc["response"].count("<SEG>") + doc["response"].count("<NEG>")
        assert n_items == len(extract_query_names(doc["query"]))
