import csv
import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from birdtag import cli, dsp, synth
from birdtag.dsp import AudioClip


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synth.generate_corpus(6, 0.5, 3, root / "c")
    return root / "c"


@pytest.fixture(scope="module")
def models(tmp_path_factory, corpus):
    root = tmp_path_factory.mktemp("models")
    for task in ("unet", "classifier"):
        assert cli.main(["train", "--corpus", str(corpus), "--task", task, "--epochs", "1",
                         "--out", str(root / f"{task}.sntg")]) == 0
    return root


def test_synth(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--n", 10, "--pos-fraction", 0.5, "--seed", 7, "--out", tmp_path / "a")
    assert code == 0
    rows = synth.read_manifest(tmp_path / "a" / "manifest.csv")
    assert len(rows) == 10
    run(capsys, "synth", "--n", 10, "--pos-fraction", 0.5, "--seed", 7, "--out", tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_usage_errors(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--n", 10)
    assert code == 2 and "usage" in err
    assert run(capsys, "synth", "--n", 0, "--out", tmp_path)[0] == 2
    assert run(capsys, "synth", "--pos-fraction", 1.5, "--out", tmp_path)[0] == 2
    assert run(capsys, "segment", "--input", tmp_path, "--out", tmp_path, "--median-k", 4)[0] == 2
    assert run(capsys, "nosuchcommand")[0] == 2
    assert run(capsys)[0] == 2


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text(f"# corpus settings\nn = 4\npos-fraction = 0.25\nout = {tmp_path / 'from_file'}\n")
    assert run(capsys, "synth", "--config", cfg)[0] == 0
    rows = synth.read_manifest(tmp_path / "from_file" / "manifest.csv")
    assert len(rows) == 4 and sum(r["label"] for r in rows) == 1
    assert run(capsys, "synth", "--config", cfg, "--n", 3, "--out", tmp_path / "flags")[0] == 0
    rows = synth.read_manifest(tmp_path / "flags" / "manifest.csv")
    assert len(rows) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(capsys, "synth", "--config", bad, "--out", tmp_path / "x")[0] == 2
    bad.write_text("n = -3\n")
    assert run(capsys, "synth", "--config", bad, "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "synth", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "x")[0] == 2


def test_spectrogram(tmp_path, capsys, corpus):
    code, out, _ = run(capsys, "spectrogram", "--input", corpus, "--out", tmp_path / "s", "--png",
                       "--variant", "mean_subtract")
    assert code == 0
    assert out.splitlines()[0] == "scene_0000 256x624"
    v = np.load(tmp_path / "s" / "scene_0000.npy")
    assert v.shape == (256, 624)
    assert np.abs(v.mean(axis=1)).max() < 1e-9
    with Image.open(tmp_path / "s" / "scene_0000.png") as im:
        assert im.size == (624, 256) and im.mode == "L"
    assert run(capsys, "spectrogram", "--input", corpus, "--out", tmp_path / "m", "--variant", "mel")[0] == 0


def test_segment(tmp_path, capsys, corpus):
    before = tree_digest(corpus)
    code, out, _ = run(capsys, "segment", "--input", corpus, "--out", tmp_path / "s1", "--yolo")
    assert code == 0
    lines = out.splitlines()
    assert [l.split()[0] for l in lines] == sorted(l.split()[0] for l in lines)
    for line in lines:
        sid, n = line.split()
        boxes = synth.load_boxes_json(tmp_path / "s1" / "boxes" / f"{sid}.json")
        assert len(boxes) == int(n)
        yolo = (tmp_path / "s1" / "yolo" / f"{sid}.txt").read_text()
        assert len(yolo.splitlines()) == int(n)
        assert synth.load_mask_png(tmp_path / "s1" / "masks" / f"{sid}.png").shape == (256, 624)
    code, out2, _ = run(capsys, "segment", "--input", corpus, "--out", tmp_path / "s2", "--yolo", "--jobs", 3)
    assert out2 == out
    assert tree_digest(tmp_path / "s1") == tree_digest(tmp_path / "s2")
    assert tree_digest(corpus) == before


def test_segment_silent_and_corrupt(tmp_path, capsys):
    d = tmp_path / "in"
    d.mkdir()
    dsp.save_wav(d / "quiet.wav", AudioClip(np.zeros(44100), 44100))
    clip, _ = synth.generate_scene(synth.random_scene_spec(2, positive=True))
    dsp.save_wav(d / "birds.wav", clip)
    code, out, _ = run(capsys, "segment", "--input", d / "quiet.wav", "--out", tmp_path / "o")
    assert code == 0 and out == "quiet 0\n"
    assert synth.load_boxes_json(tmp_path / "o" / "boxes" / "quiet.json") == []
    (d / "broken.wav").write_bytes(b"RIFF....garbage")
    code, out, _ = run(capsys, "segment", "--input", d, "--out", tmp_path / "o2")
    assert code == 1
    ids = [l.split()[0] for l in out.splitlines()]
    assert ids == ["birds", "quiet"]


def test_train_outputs(tmp_path, capsys, corpus, models):
    report = json.loads((models / "unet.report.json").read_text())
    assert len(report["epochs"]) == 1
    assert {"epoch", "mean_loss", "mean_dice"} <= set(report["epochs"][0])
    assert (models / "unet.sntg").read_bytes()[:4] == b"SNTG"
    run(capsys, "train", "--corpus", corpus, "--task", "unet", "--epochs", 1, "--out", tmp_path / "again.sntg")
    assert (tmp_path / "again.sntg").read_bytes() == (models / "unet.sntg").read_bytes()
    assert run(capsys, "train", "--corpus", tmp_path, "--out", tmp_path / "x.sntg")[0] == 1


def test_predict_modes(tmp_path, capsys, corpus, models):
    code, out, _ = run(capsys, "predict", "--model", models / "unet.sntg", "--input", corpus,
                       "--out", tmp_path / "pm", "--mode", "mask")
    assert code == 0 and len(out.splitlines()) == 6
    assert synth.load_mask_png(tmp_path / "pm" / "masks" / "scene_0000.png").shape == (256, 624)
    for mode in ("cam", "saliency"):
        code, out, _ = run(capsys, "predict", "--model", models / "classifier.sntg", "--input", corpus,
                           "--out", tmp_path / mode, "--mode", mode, "--yolo")
        assert code == 0
        with Image.open(tmp_path / mode / "heatmaps" / "scene_0000.png") as im:
            assert im.size == (624, 256) and im.mode == "L"
        with open(tmp_path / mode / "scores.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6 and all(0 < float(r["score"]) < 1 for r in rows)
    code, _, _ = run(capsys, "predict", "--model", models / "classifier.sntg", "--input", corpus,
                     "--out", tmp_path / "bad", "--mode", "mask")
    assert code == 1
    code, _, _ = run(capsys, "predict", "--model", models / "unet.sntg", "--input", corpus,
                     "--out", tmp_path / "bad", "--mode", "saliency")
    assert code == 1
    (tmp_path / "junk.sntg").write_bytes(b"nope")
    assert run(capsys, "predict", "--model", tmp_path / "junk.sntg", "--input", corpus, "--out", tmp_path)[0] == 1


def test_predict_deterministic_across_jobs(tmp_path, capsys, corpus, models):
    outs = []
    for jobs, name in ((1, "a"), (3, "b")):
        code, out, _ = run(capsys, "predict", "--model", models / "classifier.sntg", "--input", corpus,
                           "--out", tmp_path / name, "--mode", "cam", "--jobs", jobs)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_eval_identity(tmp_path, capsys, corpus):
    code, out, _ = run(capsys, "eval", "--pred", corpus, "--truth", corpus, "--kind", "boxes", "--out", tmp_path)
    assert code == 0 and out.strip() == "mean_iou 1.0000"
    report = json.loads((tmp_path / "eval_boxes.json").read_text())
    assert report["mean_iou"] == 1.0 and len(report["per_item"]) == 6
    assert (tmp_path / "eval_boxes.csv").read_text().startswith("id,")
    code, out, _ = run(capsys, "eval", "--pred", corpus, "--truth", corpus, "--kind", "masks")
    assert code == 0 and out.startswith("mean_dice 1.0000")


def test_eval_scrambled_labels(tmp_path, capsys):
    rng = np.random.default_rng(0)
    labels = np.array([0, 1] * 50)
    scrambled = rng.permutation(labels)
    for name, col, vals in (("truth.csv", "label", labels), ("pred.csv", "score", scrambled)):
        with open(tmp_path / name, "w") as fh:
            fh.write(f"id,{col}\n" + "".join(f"s{i:03d},{v}\n" for i, v in enumerate(vals)))
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "pred.csv", "--truth", tmp_path / "truth.csv",
                       "--kind", "labels")
    assert code == 0
    acc = float(out.split()[1])
    assert abs(acc - 0.5) <= 0.15


def test_eval_unmatched_ids(tmp_path, capsys, corpus):
    pred = tmp_path / "pred" / "boxes"
    pred.mkdir(parents=True)
    for p in sorted((corpus / "boxes").glob("*.json"))[:4]:
        (pred / p.name).write_bytes(p.read_bytes())
    synth.save_boxes_json(pred / "stray.json", [])
    code, out, err = run(capsys, "eval", "--pred", tmp_path / "pred", "--truth", corpus, "--kind", "boxes")
    assert code == 1
    assert out.startswith("mean_iou")
