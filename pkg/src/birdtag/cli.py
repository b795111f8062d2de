"""Command-line front end: ``birdtag <command> [flags]``.

Commands: synth, spectrogram, segment, train, predict, eval. Exit codes
are 0 on success, 1 on runtime or data failures, 2 on usage errors.
Every command accepts ``--config FILE`` with ``key = value`` lines naming
its long flags; flags given on the command line win over the file.
"""
import argparse
import csv
import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import attention, blobseg, dsp, metrics, nnet, pipeline, synth
from .nnet import checkpoint

log = logging.getLogger("birdtag")


class UsageError(Exception):
    pass


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s}")
    return v


def _fraction(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {s}")
    return v


def _open_unit(s):
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _odd_int(s):
    v = _positive_int(s)
    if v % 2 == 0:
        raise argparse.ArgumentTypeError(f"expected an odd size, got {s}")
    return v


# ---- inputs and outputs ----------------------------------------------------

def wav_inputs(path):
    """``[(id, wav_path)]`` sorted by id from a file, a corpus or a directory."""
    path = Path(path)
    if path.is_file():
        return [(path.stem, path)]
    if not path.is_dir():
        raise FileNotFoundError(f"{path}: no such file or directory")
    manifest = path / "manifest.csv"
    if manifest.exists():
        pairs = [(r["id"], path / r["path"]) for r in synth.read_manifest(manifest)]
    else:
        pairs = [(p.stem, p) for p in path.rglob("*.wav")]
    ids = [i for i, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate ids among inputs")
    return sorted(pairs)


def run_per_file(fn, items, jobs):
    """Apply ``fn(id, path)`` to every item; return sorted results and failures."""
    def safe(item):
        sid, p = item
        try:
            return sid, fn(sid, p), None
        except (dsp.AudioError, OSError, ValueError) as e:
            return sid, None, str(e)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(safe, items))
    else:
        results = [safe(it) for it in items]
    results.sort(key=lambda r: r[0])
    failed = [(sid, err) for sid, _, err in results if err is not None]
    for sid, err in failed:
        log.error("%s: %s", sid, err)
    return [(sid, out) for sid, out, err in results if err is None], failed


def write_boxes(out, sid, boxes, n_rows, n_cols, yolo):
    synth.save_boxes_json(out / "boxes" / f"{sid}.json", boxes)
    if yolo:
        image_boxes = [attention.flip_rows(b, n_rows) for b in boxes]
        (out / "yolo" / f"{sid}.txt").write_text(attention.export_yolo_labels(image_boxes, n_cols, n_rows))


def make_dirs(out, *subs):
    for s in subs:
        (out / s).mkdir(parents=True, exist_ok=True)


# ---- commands --------------------------------------------------------------

def cmd_synth(args):
    rows = synth.generate_corpus(args.n, args.pos_fraction, args.seed, args.out, snr_db=args.snr_db)
    n_pos = sum(r["label"] for r in rows)
    print(f"wrote {len(rows)} scenes ({n_pos} positive) to {args.out}")
    return 0


def _spectrogram_variant(spec, args):
    if args.variant == "mel":
        spec = dsp.mel_reconstruct(spec, dsp.mel_filterbank(spec.sample_rate, spec.window_len, args.n_mels))
    if args.scale == "log_db":
        spec = dsp.to_db(spec)
    if args.variant == "mean_subtract":
        spec = dsp.mean_subtract(spec)
    return spec


def save_gray_png(path, values):
    """Min-max scaled 8-bit image, highest frequency on top."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    v = (v - v.min()) / span if span > 0 else np.zeros_like(v)
    Image.fromarray(np.round(v[::-1] * 255).astype(np.uint8), mode="L").save(path)


def cmd_spectrogram(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(sid, p):
        clip = dsp.load_wav(p)
        spec = dsp.stft_spectrogram(clip, args.window_len, args.hop, scale="linear")
        spec = _spectrogram_variant(spec, args)
        np.save(out / f"{sid}.npy", spec.values)
        if args.png:
            save_gray_png(out / f"{sid}.png", spec.values)
        return spec.shape

    done, failed = run_per_file(one, wav_inputs(args.input), args.jobs)
    for sid, (rows, cols) in done:
        print(f"{sid} {rows}x{cols}")
    return 1 if failed else 0


def cmd_segment(args):
    out = Path(args.out)
    make_dirs(out, "masks", "boxes", *(["yolo"] if args.yolo else []))
    params = blobseg.SegParams(args.factor, args.close_size, args.dilate_size, args.median_k, args.min_area)

    def one(sid, p):
        spec = dsp.stft_spectrogram(dsp.load_wav(p), args.window_len, args.hop, scale="linear")
        mask, blobs = blobseg.segment(spec, params)
        synth.save_mask_png(out / "masks" / f"{sid}.png", mask)
        write_boxes(out, sid, [b.bbox for b in blobs], spec.n_bins, spec.n_frames, args.yolo)
        return len(blobs)

    done, failed = run_per_file(one, wav_inputs(args.input), args.jobs)
    for sid, n in done:
        print(f"{sid} {n}")
    return 1 if failed else 0


def cmd_train(args):
    corpus = Path(args.corpus)
    if not (corpus / "manifest.csv").exists():
        raise FileNotFoundError(f"{corpus}: no manifest.csv")
    items = pipeline.load_corpus(corpus)
    lr = args.lr if args.lr is not None else (0.1 if args.task == "unet" else 0.05)
    cfg = nnet.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=lr,
                           seed=args.seed, dice_smooth=args.dice_smooth)
    shape = (1,) + pipeline.GRID
    if args.task == "unet":
        net = nnet.build_unet(shape, seed=args.seed)
        report = nnet.train(net, pipeline.unet_dataset(items), cfg)
    else:
        net = nnet.build_classifier(shape, seed=args.seed)
        report = nnet.train_classifier(net, pipeline.classifier_dataset(items), cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(net, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(report.to_json())
    t = report.trend()
    print(f"{args.task}: {len(report.epochs)} epochs, loss {t['first']:.4f} -> {t['last']:.4f}; "
          f"wrote {out} and {report_path}")
    return 0


MODE_TOPOLOGY = {"mask": "unet", "cam": "classifier", "saliency": "classifier"}


def cmd_predict(args):
    blob = Path(args.model).read_bytes()
    net = checkpoint.from_bytes(blob)
    want = MODE_TOPOLOGY[args.mode]
    if net.topology != want:
        raise checkpoint.CheckpointError(
            f"--mode {args.mode} needs a {want} checkpoint, {args.model} holds a {net.topology}")
    grid = net.input_shape[1:]
    out = Path(args.out)
    subs = ["boxes"] + (["masks"] if args.mode == "mask" else ["heatmaps"]) + (["yolo"] if args.yolo else [])
    make_dirs(out, *subs)
    # layers cache activations, so each worker thread gets its own copy
    local = threading.local()

    def model():
        if not hasattr(local, "net"):
            local.net = checkpoint.from_bytes(blob)
        return local.net

    def one(sid, p):
        spec = pipeline.spectrogram(dsp.load_wav(p))
        x = pipeline.net_input(spec, grid)
        m = model()
        if args.mode == "mask":
            prob = m.forward(x[None])[0, 0]
            mask = dsp.unpool(prob >= args.threshold, *spec.shape)
            synth.save_mask_png(out / "masks" / f"{sid}.png", mask)
            boxes = [b.bbox for b in blobseg.connected_components(mask) if b.area >= args.min_area]
            score = float(prob.max())
        else:
            score = float(m.forward(x[None])[0, 0])
            hm = attention.grad_cam(m, x) if args.mode == "cam" else attention.guided_backprop(m, x)
            hm = pipeline.native_heatmap(hm, spec.shape)
            attention.save_heatmap_png(out / "heatmaps" / f"{sid}.png", hm)
            boxes = attention.heatmap_to_bboxes(hm, args.threshold, args.min_area)
        write_boxes(out, sid, boxes, spec.n_bins, spec.n_frames, args.yolo)
        return score, len(boxes)

    done, failed = run_per_file(one, wav_inputs(args.input), args.jobs)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score"])
        for sid, (score, _) in done:
            w.writerow([sid, repr(score)])
    for sid, (_, n) in done:
        print(f"{sid} {n}")
    return 1 if failed else 0


def _files_by_id(root, sub, suffix):
    root = Path(root)
    base = root / sub if (root / sub).is_dir() else root
    return {p.stem: p for p in sorted(base.glob(f"*{suffix}"))}


def _read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    key = "score" if "score" in rows[0] else "label"
    return {r["id"]: float(r[key]) for r in rows}


def cmd_eval(args):
    if args.kind == "labels":
        pred_file = Path(args.pred)
        pred_file = pred_file / "scores.csv" if pred_file.is_dir() else pred_file
        truth_file = Path(args.truth)
        truth_file = truth_file / "manifest.csv" if truth_file.is_dir() else truth_file
        pred, truth = _read_scores(pred_file), _read_scores(truth_file)
    else:
        sub, suffix = ("boxes", ".json") if args.kind == "boxes" else ("masks", ".png")
        pred, truth = _files_by_id(args.pred, sub, suffix), _files_by_id(args.truth, sub, suffix)

    unmatched = sorted(set(pred) ^ set(truth))
    for sid in unmatched:
        side = "prediction" if sid in pred else "truth"
        log.error("%s: only in %s", sid, side)
    ids = sorted(set(pred) & set(truth))
    if not ids:
        raise ValueError("no ids in common between --pred and --truth")

    report = metrics.EvalReport()
    if args.kind == "boxes":
        scores = []
        for sid in ids:
            p, t = synth.load_boxes_json(pred[sid]), synth.load_boxes_json(truth[sid])
            v = metrics.mean_iou(p, t)
            report.per_item.append({"id": sid, "iou": v, "n_pred": len(p), "n_truth": len(t)})
            if t:
                scores.append(v)
        report.mean_iou = float(np.mean(scores)) if scores else None
        headline = f"mean_iou {report.mean_iou:.4f}" if scores else "mean_iou n/a (no truth boxes)"
    elif args.kind == "masks":
        for sid in ids:
            p, t = synth.load_mask_png(pred[sid]), synth.load_mask_png(truth[sid])
            if p.shape != t.shape:
                raise ValueError(f"{sid}: mask shapes differ {p.shape} vs {t.shape}")
            report.per_item.append({"id": sid, "dice": metrics.mask_dice(p, t),
                                    "density": float(p.mean()), "truth_empty": int(not t.any())})
        pos = [r["dice"] for r in report.per_item if not r["truth_empty"]]
        neg = [r["density"] for r in report.per_item if r["truth_empty"]]
        report.mean_dice = float(np.mean(pos)) if pos else None
        headline = (f"mean_dice {report.mean_dice:.4f}" if pos else "mean_dice n/a (no truth masks)")
        if neg:
            headline += f" negative_density {np.mean(neg):.4f}"
    else:
        y = [int(truth[s]) for s in ids]
        s = [pred[i] for i in ids]
        labels = [int(v >= args.threshold) for v in s]
        report.accuracy = metrics.accuracy(y, labels)
        report.auc = metrics.roc_auc(y, s) if 0 < sum(y) < len(y) else None
        report.per_item = [{"id": i, "score": v, "label": t} for i, v, t in zip(ids, s, y)]
        auc = f"{report.auc:.4f}" if report.auc is not None else "n/a"
        headline = f"accuracy {report.accuracy:.4f} auc {auc}"

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.kind}.json").write_text(report.to_json())
        (out / f"eval_{args.kind}.csv").write_text(report.to_csv())
    print(headline)
    return 1 if unmatched else 0


# ---- parser ----------------------------------------------------------------

def _add_stft(p):
    p.add_argument("--window-len", type=_positive_int, default=dsp.WINDOW_LEN)
    p.add_argument("--hop", type=_positive_int, default=dsp.HOP)


def _add_jobs(p):
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker threads for per-file work")


def build_parser():
    parser = argparse.ArgumentParser(prog="birdtag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    cmds = {}

    def command(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file of defaults for this command")
        p.set_defaults(func=fn)
        cmds[name] = p
        return p

    p = command("synth", cmd_synth, "generate a synthetic corpus")
    p.add_argument("--n", type=_positive_int, default=200)
    p.add_argument("--pos-fraction", type=_fraction, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--out", required=True)

    p = command("spectrogram", cmd_spectrogram, "write spectrogram matrices (.npy)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_stft(p)
    p.add_argument("--scale", choices=["log_db", "linear"], default="log_db")
    p.add_argument("--variant", choices=["plain", "mean_subtract", "mel"], default="plain")
    p.add_argument("--n-mels", type=_positive_int, default=64)
    p.add_argument("--png", action="store_true", help="also write an 8-bit preview image")
    _add_jobs(p)

    p = command("segment", cmd_segment, "blind median-clipping segmentation")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_stft(p)
    d = blobseg.SegParams()
    p.add_argument("--factor", type=_positive_float, default=d.factor)
    p.add_argument("--close-size", type=_odd_int, default=d.close_size)
    p.add_argument("--dilate-size", type=_odd_int, default=d.dilate_size)
    p.add_argument("--median-k", type=_odd_int, default=d.median_k)
    p.add_argument("--min-area", type=_positive_int, default=d.min_area)
    p.add_argument("--yolo", action="store_true", help="also write YOLO label files")
    _add_jobs(p)

    p = command("train", cmd_train, "train a unet or classifier on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=["unet", "classifier"], default="unet")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="report JSON path (default: next to the checkpoint)")
    p.add_argument("--epochs", type=_positive_int, default=60)
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--lr", type=_positive_float, default=None, help="default 0.1 unet, 0.05 classifier")
    p.add_argument("--dice-smooth", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = command("predict", cmd_predict, "masks or attention boxes from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=sorted(MODE_TOPOLOGY), default="mask")
    p.add_argument("--threshold", type=_open_unit, default=0.5)
    p.add_argument("--min-area", type=_positive_int, default=20)
    p.add_argument("--yolo", action="store_true")
    _add_jobs(p)

    p = command("eval", cmd_eval, "score predictions against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--kind", choices=["boxes", "masks", "labels"], required=True)
    p.add_argument("--threshold", type=_open_unit, default=0.5, help="score threshold for labels")
    p.add_argument("--out")
    return parser, cmds


def read_config(path):
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def apply_config(subparser, values):
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config", "func")}
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        a = actions[key]
        if a.const is True and a.nargs == 0:  # store_true flag
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects true/false")
            defaults[key] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            v = a.type(raw) if a.type else raw
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"config key {key!r}: {e}") from e
        if a.choices and v not in a.choices:
            raise UsageError(f"config key {key!r}: {v!r} not in {sorted(a.choices)}")
        defaults[key] = v
        a.required = False
    subparser.set_defaults(**defaults)


def parse(argv):
    parser, cmds = build_parser()
    # peek at --config before the full parse so file values become defaults
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args([a for a in argv if a not in ("-v", "-vv", "--verbose")])
    if known.config and known.command in cmds:
        try:
            apply_config(cmds[known.command], read_config(known.config))
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from e
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except UsageError as e:
        print(f"birdtag: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, dsp.AudioError, checkpoint.CheckpointError, nnet.TrainingDiverged) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
