"""Smoke test for the skelact extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py` or `pytest python/smoke_test.py`.
"""

import json
import math
import tempfile

import skelact


def test_sequence_round_trip():
    seq = skelact.toy_dataset()[0]
    text = skelact.write_sequence(seq)
    back, warnings = skelact.parse_sequence(text)
    assert warnings == []
    assert back.id == seq.id and len(back) == len(seq)
    assert back.frames() == seq.frames()


def test_invalid_sequence_is_rejected():
    try:
        skelact.Sequence("bad", [[[[0.0, 0.0, 0.0]] * 3, None]])
    except ValueError:
        return
    raise AssertionError("a 3-joint body should be rejected")


def test_lines_and_features():
    lines = skelact.select_lines()
    kinds = [k for _, _, k in lines]
    assert len(lines) == 19
    assert (kinds.count("Adjacent"), kinds.count("EndTwoStep"), kinds.count("EndEnd")) == (6, 3, 10)
    seq = skelact.toy_dataset()[5]
    for channel, width in [("R", 396), ("J", 132), ("L", 380), ("concat", 908)]:
        rows = skelact.extract_channel(seq, channel)
        assert len(rows) == len(seq) and all(len(r) == width for r in rows)
    assert math.isclose(skelact.triangle_area_heron(3.0, 4.0, 5.0), 6.0)


def test_maps():
    seq = skelact.toy_dataset()[10]
    w, h, rgb = skelact.encode_jtm(seq, "xy", size=32)
    assert (w, h, len(rgb)) == (32, 32, 32 * 32 * 3)
    w, h, rgb = skelact.encode_jdm(seq, "xyz", 0.0, 2.0, width=40)
    assert (w, h, len(rgb)) == (40, 132, 40 * 132 * 3)


def test_fusion_and_evaluation():
    fused = skelact.fuse_scores([[0.2, 0.8], [0.6, 0.4]], "mul")
    assert all(math.isclose(a, b) for a, b in zip(fused, [0.12, 0.32]))
    assert skelact.fuse_scores([[0.2, 0.8], [0.6, 0.4]], "max") == [0.6, 0.8]
    assert skelact.predict_label([0.3, 0.3, 0.1]) == 0
    labels = [i // 5 for i in range(20)]

    def channel(confident_on):
        return [[0.7 if k == l else 0.1 for k in range(4)] if l in confident_on else [0.25] * 4 for l in labels]

    report = json.loads(skelact.evaluate_scores([("R", channel({0, 1})), ("J", channel({2, 3}))], labels))
    assert report["fusions"] and report["best"]
    fused = {row["name"]: row["accuracy"] for row in report["fusions"]}
    assert fused["All-Mul"] == 1.0


def test_gradients():
    assert skelact.gradient_check("lstm") < 1e-4
    assert skelact.gradient_check("cnn") < 1e-4


def test_small_run():
    with tempfile.TemporaryDirectory() as out:
        config = f"""
seed = 5
out = "{out}"
channels = ["J", "JTM-xy"]

[dataset]
source = "toy"

[protocol]
kind = "cross-view"
train = [0]

[preprocess]
subseq = 8
augment_rotations = 1
lstm_resamples = 1

[maps]
jtm_size = 16
jtm_margin = 2
jdm_width = 16
cnn_input = 16

[training]
lstm_hidden = 8

[training.lstm]
epochs = 2

[training.cnn]
optimizer = "sgd"
learning_rate = 0.01
momentum = 0.9
epochs = 1
"""
        table, summary = skelact.run_pipeline(config)
        assert "All-Mul" in table
        assert {row["name"] for row in json.loads(summary)["channels"]} == {"J", "JTM-xy"}


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} passed")
