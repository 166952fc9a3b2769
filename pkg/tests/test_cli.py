import json
import os

import pytest

from netprofile import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "out"
    assert run("synth", "--scale", 0.03, "--seed", 5, "--users", 12, "--events-per-user", 30, "--out", data) == 0
    assert run("ingest", "--data", data, "--out", out) == 0
    return root, data, out


def test_help_and_usage_codes(capsys):
    assert run("--help") == 0
    assert run() == 64
    assert run("synth", "--scale", "lots") == 64
    assert run("bogus") == 64
    assert run("ingest") == 64


def test_missing_input_is_a_data_error(tmp_path):
    assert run("train", "--streams", tmp_path / "none.jsonl", "--out", tmp_path) == 2
    assert run("eval", "--bundle", tmp_path, "--streams", tmp_path / "x") == 2


def test_internal_error_code(monkeypatch, tmp_path):
    def boom(args):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "gradcheck", boom)
    assert run("gradcheck") == 70


def test_synth_manifest_is_deterministic_and_config_sensitive(tmp_path, workspace):
    _, data, _ = workspace
    again = tmp_path / "again"
    assert run("synth", "--scale", 0.03, "--seed", 5, "--users", 12, "--events-per-user", 30, "--out", again) == 0
    assert (again / "manifest.json").read_bytes() == (data / "manifest.json").read_bytes()
    cfg = tmp_path / "c.cfg"
    cfg.write_text("lr = 0.002\n")
    other = tmp_path / "other"
    assert run("synth", "--config", cfg, "--scale", 0.03, "--seed", 5, "--users", 12, "--events-per-user", 30, "--out", other) == 0
    a = json.loads((data / "manifest.json").read_text())
    b = json.loads((other / "manifest.json").read_text())
    assert a["config_sha256"] != b["config_sha256"] and a["files"] == b["files"]


def test_ingest_report(workspace):
    _, data, out = workspace
    report = json.loads((out / "ingest_report.json").read_text())
    manifest = json.loads((data / "manifest.json").read_text())
    assert report["labeled_streams"] == report["kept_streams"] == sum(manifest["counts"].values())
    assert report["skipped_frames"] == 0


def test_empty_pcap_gives_empty_jsonl(tmp_path):
    from netprofile.capture import write_pcap

    p = tmp_path / "empty.pcap"
    p.write_bytes(write_pcap([]))
    assert run("ingest", p, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "streams.jsonl").read_text() == ""


def test_corrupt_pcap_leaves_no_output(tmp_path):
    p = tmp_path / "bad.pcap"
    p.write_bytes(b"\x00" * 40)
    assert run("ingest", p, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o" / "streams.jsonl").exists()


def test_zero_batch_training_and_eval_counts(workspace, tmp_path):
    _, _, out = workspace
    model = tmp_path / "m"
    assert run("train", "--streams", out / "streams.jsonl", "--batches", 0, "--out", model) == 0
    assert run("eval", "--bundle", model, "--streams", out / "streams.jsonl", "--out", tmp_path / "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    rows = [json.loads(line) for line in (tmp_path / "e" / "predictions.jsonl").read_text().splitlines()]
    bundle = json.loads((model / "bundle.json").read_text())
    assert len(rows) == metrics["n_streams"] == len(bundle["test_keys"])
    hits = sum(r["app"] == r["app_pred"] for r in rows)
    assert metrics["app"]["accuracy"] == pytest.approx(hits / len(rows))
    for app, task in metrics["activity"].items():
        mine = [r for r in rows if r["app"] == app]
        if mine:
            assert task["accuracy"] == pytest.approx(sum(r["activity"] == r["activity_pred"] for r in mine) / len(mine))
    header = (tmp_path / "e" / "confusion_app.csv").read_text().splitlines()[0]
    assert header.startswith("true\\pred,facebook")


def test_forest_train_is_byte_deterministic(workspace, tmp_path):
    _, _, out = workspace
    for d in ("a", "b"):
        assert run("train", "--streams", out / "streams.jsonl", "--model", "forest", "--out", tmp_path / d) == 0
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_profile_train_and_predict(workspace, tmp_path):
    _, data, _ = workspace
    assert run(
        "profile", "train", "--events", data / "events.jsonl", "--traits", data / "traits.json",
        "--labels", data / "users.json", "--out", tmp_path,
    ) == 0
    models = tmp_path / "trait_models.json"
    assert run("profile", "predict", "--events", data / "events.jsonl", "--model", models, "--out", tmp_path) == 0
    post = json.loads((tmp_path / "posteriors.json").read_text())
    assert len(post) == 12
    for traits in post.values():
        for dist in traits.values():
            assert abs(sum(dist.values()) - 1) < 1e-12
    assert run("profile", "train", "--events", data / "events.jsonl", "--out", tmp_path) == 64


def test_profile_on_empty_log_gives_priors(workspace, tmp_path):
    _, data, _ = workspace
    run(
        "profile", "train", "--events", data / "events.jsonl", "--traits", data / "traits.json",
        "--labels", data / "users.json", "--out", tmp_path,
    )
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("profile", "predict", "--events", empty, "--model", tmp_path / "trait_models.json", "--out", tmp_path) == 0
    post = json.loads((tmp_path / "posteriors.json").read_text())[""]
    doc = json.loads((tmp_path / "trait_models.json").read_text())
    import math

    for t, dist in post.items():
        for lab, lp in zip(doc[t]["labels"], doc[t]["log_prior"]):
            assert dist[lab] == pytest.approx(math.exp(lp), abs=1e-12)


def test_gradcheck_and_negative_control(tmp_path):
    assert run("gradcheck", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"]
    assert run("gradcheck", "--corrupt") == 1
