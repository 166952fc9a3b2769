import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netprofile.errors import BadConfig, EmptyTraining
from netprofile.profiler import (
    OTHER,
    VOCAB,
    ProfileDB,
    ProfileRecord,
    TraitModel,
    event_key,
    nb_predict,
    nb_train,
    replay,
)

EV = [e for e in VOCAB if e != OTHER]


def rec(user, counts):
    return ProfileRecord(user, dict(counts), sum(counts.values()))


def enumerate_posterior(train, query, labels, alpha=1):
    """Bayes rule written out with exact fractions."""
    V = len(VOCAB)
    joint = {}
    for lab in labels:
        users = [c for c, l in train if l == lab]
        prior = Fraction(len(users), len(train))
        pooled = {e: sum(c.get(e, 0) for c in users) for e in VOCAB}
        total = sum(pooled.values())
        like = Fraction(1)
        for e, k in query.items():
            like *= Fraction(alpha + pooled[e], alpha * V + total) ** k
        joint[lab] = prior * like
    z = sum(joint.values())
    return {lab: float(v / z) for lab, v in joint.items()}


def test_toy_corpus_matches_enumeration():
    train = [
        ({EV[0]: 3, EV[1]: 1}, "a"),
        ({EV[0]: 1, EV[2]: 4}, "b"),
        ({EV[3]: 2, EV[0]: 2}, "a"),
    ]
    models = nb_train([(rec(str(i), c), {"t": l}) for i, (c, l) in enumerate(train)], {"t": ["a", "b"]})
    query = {EV[0]: 2, EV[2]: 1, OTHER: 1}
    got = nb_predict(models["t"], rec("q", query))
    want = enumerate_posterior(train, query, ["a", "b"])
    for lab in want:
        assert abs(got[lab] - want[lab]) < 1e-12


def test_symmetric_labels_give_half():
    train = [(rec("1", {EV[0]: 2}), {"t": "x"}), (rec("2", {EV[0]: 2}), {"t": "y"})]
    post = nb_predict(nb_train(train, {"t": ["x", "y"]})["t"], rec("q", {EV[0]: 5, EV[1]: 1}))
    assert post == {"x": 0.5, "y": 0.5}


def test_single_label_is_certain_and_empty_record_is_prior():
    train = [(rec("1", {EV[0]: 1}), {"t": "x"}), (rec("2", {EV[1]: 1}), {"t": "x"}), (rec("3", {}), {"t": "y"})]
    m = nb_train(train, {"t": ["x", "y"]}, alpha=1)
    assert nb_predict(m["t"], rec("q", {})) == pytest.approx({"x": 2 / 3, "y": 1 / 3}, abs=1e-15)
    train_u = [(r, {"u": "only"}) for r, _ in train]
    mu = nb_train(train_u, {"u": ["only"]})
    assert nb_predict(mu["u"], rec("q", {EV[2]: 9})) == {"only": 1.0}


@given(st.integers(1, 20))
def test_scaling_counts_keeps_argmax_when_priors_equal(k):
    train = [(rec("1", {EV[0]: 5, EV[1]: 1}), {"t": "x"}), (rec("2", {EV[1]: 5, EV[0]: 1}), {"t": "y"})]
    m = nb_train(train, {"t": ["x", "y"]})["t"]
    base = {EV[0]: 2, EV[1]: 1}
    post = nb_predict(m, rec("q", {e: c * k for e, c in base.items()}))
    assert max(post, key=post.get) == "x"
    assert abs(sum(post.values()) - 1) < 1e-12


def test_vocabulary_order_does_not_matter():
    rng = np.random.default_rng(0)
    train = [(rec(str(i), {e: int(rng.integers(0, 5)) for e in VOCAB}), {"t": "ab"[i % 2]}) for i in range(10)]
    q = rec("q", {e: int(rng.integers(0, 5)) for e in VOCAB})
    a = nb_predict(nb_train(train, {"t": ["a", "b"]})["t"], q)
    b = nb_predict(nb_train(train, {"t": ["a", "b"]}, vocab=VOCAB[::-1])["t"], q)
    assert a == pytest.approx(b, abs=1e-12)


def test_errors():
    train = [(rec("1", {EV[0]: 1}), {"t": "x"})]
    with pytest.raises(EmptyTraining):
        nb_train(train, {"t": ["x", "y"]})
    with pytest.raises(BadConfig):
        nb_train([(rec("1", {}), {"t": "z"})], {"t": ["x"]})
    with pytest.raises(BadConfig):
        nb_train(train, {"t": ["x"]}, alpha=0)


def test_event_keys():
    assert event_key("facebook", "post_text") == "facebook/post_text"
    assert event_key("gmail", None) == "gmail/mail" == event_key("gmail", "mail")
    assert event_key("impertinent", None) == "impertinent"
    assert event_key("youtube", None) == OTHER
    assert event_key("facebook", "unknown") == OTHER
    assert event_key(None, None) == OTHER
    assert len(VOCAB) == 9 and VOCAB[-1] == OTHER


events_st = st.lists(
    st.tuples(st.sampled_from(["u1", "u2", "u3"]), st.sampled_from([("gmail", None), ("youtube", "comment"), ("x", "y")])),
    max_size=30,
)


@given(events_st, st.randoms())
def test_replay_is_order_free(events, rnd):
    evs = [{"user": u, "app": a, "activity": b} for u, (a, b) in events]
    shuffled = list(evs)
    rnd.shuffle(shuffled)
    a, b = replay(evs), replay(shuffled)
    assert {u: r.counts for u, r in a.items()} == {u: r.counts for u, r in b.items()}


def test_profile_db_snapshot_plus_tail(tmp_path):
    db = ProfileDB(str(tmp_path))
    for i in range(5):
        db.record("u", "gmail", None, ts=float(i))
    db.compact()
    db.record("u", "youtube", "comment", ts=10.0)
    db.record("v", "facebook", "post_image")
    again = ProfileDB(str(tmp_path))
    snap = again.snapshot()
    assert snap["u"].counts == {"gmail/mail": 5, "youtube/comment": 1} and snap["u"].last_updated == 10.0
    assert snap["v"].total_streams == 1
    with open(tmp_path / "events.jsonl") as fh:
        direct = replay(json.loads(line) for line in fh)
    assert {u: r.to_json() for u, r in direct.items()} == {u: r.to_json() for u, r in snap.items()}


def test_trait_model_json_round_trip():
    m = nb_train([(rec("1", {EV[0]: 1}), {"t": "x"}), (rec("2", {}), {"t": "y"})], {"t": ["x", "y"]})["t"]
    back = TraitModel.from_json(json.loads(json.dumps(m.to_json())))
    q = rec("q", {EV[0]: 3})
    assert nb_predict(back, q) == nb_predict(m, q)
