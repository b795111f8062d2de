"""Seeded synthetic scenes: FM chirps over coloured noise, with exact truth.

The ground-truth mask marks the bins within one bin of each chirp's
instantaneous-frequency track, frame by frame, at the default STFT
parameters. It is computed from the chirp parameters, never from audio.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import lfilter

from . import dsp
from .dsp import AudioClip
from .metrics import BBox

FADE = 0.010
TRACK_HALF_WIDTH = 1  # bins either side of the FM track


@dataclass(frozen=True)
class ChirpSpec:
    t_start: float
    t_end: float
    f_start: float
    f_end: float
    amplitude: float = 1.0
    shape: str = "linear_sweep"  # or "sinusoidal_fm"
    fm_rate: float = 4.0  # Hz, sinusoidal_fm only

    def inst_freq(self, t):
        """Instantaneous frequency at absolute times ``t`` (seconds)."""
        tau = np.asarray(t, dtype=float) - self.t_start
        if self.shape == "linear_sweep":
            return self.f_start + (self.f_end - self.f_start) * tau / (self.t_end - self.t_start)
        return self.f_start + (self.f_end - self.f_start) * 0.5 * (1 - np.cos(2 * np.pi * self.fm_rate * tau))

    def phase(self, t):
        tau = np.asarray(t, dtype=float) - self.t_start
        df = self.f_end - self.f_start
        if self.shape == "linear_sweep":
            inst = self.f_start * tau + 0.5 * df * tau ** 2 / (self.t_end - self.t_start)
        else:
            w = 2 * np.pi * self.fm_rate
            inst = self.f_start * tau + 0.5 * df * (tau - np.sin(w * tau) / w)
        return 2 * np.pi * inst


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"  # white | pink | wind_lowpass
    snr_db: float = 20.0


@dataclass(frozen=True)
class SceneSpec:
    duration: float = 10.0
    sample_rate: int = dsp.SAMPLE_RATE
    events: tuple = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    clicks: int = 0  # broadband transients, not part of the truth
    noise_rms: float = 0.05  # level used when the scene has no events

    def validate(self):
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")
        if not math.isfinite(self.noise.snr_db):
            raise ValueError("snr_db must be finite")
        if self.noise.kind not in ("white", "pink", "wind_lowpass"):
            raise ValueError(f"unknown noise kind {self.noise.kind!r}")
        nyq = self.sample_rate / 2
        for ev in self.events:
            if not 0 <= ev.t_start < ev.t_end <= self.duration:
                raise ValueError(f"event outside scene: {ev}")
            if not (0 < ev.f_start < nyq and 0 < ev.f_end < nyq):
                raise ValueError(f"event frequency outside (0, Nyquist): {ev}")
            if not 0 <= ev.amplitude <= 1:
                raise ValueError("amplitude must lie in [0, 1]")
            if ev.shape not in ("linear_sweep", "sinusoidal_fm"):
                raise ValueError(f"unknown chirp shape {ev.shape!r}")


@dataclass
class GroundTruth:
    mask: np.ndarray  # (n_bins, n_frames) bool, row 0 = lowest bin
    boxes: list
    label: int


def frame_support(ev: ChirpSpec, sample_rate, n_frames, window_len=dsp.WINDOW_LEN, hop=dsp.HOP):
    """Frames whose centre lies inside the chirp, as an inclusive range."""
    eps = 1e-9
    first = math.ceil((ev.t_start * sample_rate - window_len / 2) / hop - eps)
    last = math.floor((ev.t_end * sample_rate - window_len / 2) / hop + eps)
    return max(first, 0), min(last, n_frames - 1)


def freq_to_bin(f, sample_rate, window_len=dsp.WINDOW_LEN):
    return np.rint(np.asarray(f) * window_len / sample_rate).astype(int)


def event_mask(ev: ChirpSpec, sample_rate, n_samples, window_len=dsp.WINDOW_LEN, hop=dsp.HOP):
    n_bins = window_len // 2
    n_frames = dsp.n_frames_for(n_samples, window_len, hop)
    mask = np.zeros((n_bins, n_frames), dtype=bool)
    j0, j1 = frame_support(ev, sample_rate, n_frames, window_len, hop)
    for j in range(j0, j1 + 1):
        # frequencies swept while this frame's window overlaps the chirp
        a = max(j * hop / sample_rate, ev.t_start)
        b = min((j * hop + window_len) / sample_rate, ev.t_end)
        f = ev.inst_freq(np.linspace(a, b, 33))
        lo = int(freq_to_bin(f.min(), sample_rate, window_len)) - TRACK_HALF_WIDTH
        hi = int(freq_to_bin(f.max(), sample_rate, window_len)) + TRACK_HALF_WIDTH
        mask[max(lo, 0):min(hi, n_bins - 1) + 1, j] = True
    return mask


def _chirp_audio(ev: ChirpSpec, sample_rate, n_samples):
    out = np.zeros(n_samples)
    i0 = int(math.ceil(ev.t_start * sample_rate))
    i1 = min(int(math.floor(ev.t_end * sample_rate)), n_samples - 1)
    t = np.arange(i0, i1 + 1) / sample_rate
    env = np.ones_like(t)
    ramp = min(FADE, (ev.t_end - ev.t_start) / 2)
    rise = t - ev.t_start
    fall = ev.t_end - t
    env = np.where(rise < ramp, 0.5 - 0.5 * np.cos(np.pi * rise / ramp), env)
    env = np.where(fall < ramp, 0.5 - 0.5 * np.cos(np.pi * fall / ramp), env)
    out[i0:i1 + 1] = ev.amplitude * env * np.sin(ev.phase(t))
    return out, (i0, i1)


def _noise(kind, n, rng, sample_rate):
    w = rng.standard_normal(n)
    if kind == "white":
        return w
    if kind == "pink":
        # Paul Kellet's economy pink filter
        b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
        a = [1, -2.494956002, 2.017265875, -0.522189400]
        return lfilter(b, a, w)
    # one-pole lowpass at 500 Hz
    alpha = 1.0 - math.exp(-2 * math.pi * 500.0 / sample_rate)
    return lfilter([alpha], [1, alpha - 1], w)


def _rms(x):
    return float(np.sqrt(np.mean(x ** 2))) if len(x) else 0.0


def generate_scene(spec: SceneSpec, window_len=dsp.WINDOW_LEN, hop=dsp.HOP):
    """Synthesize one scene; returns ``(AudioClip, GroundTruth)``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))

    signal = np.zeros(n)
    support = np.zeros(n, dtype=bool)
    for ev in spec.events:
        audio, (i0, i1) = _chirp_audio(ev, sr, n)
        signal += audio
        support[i0:i1 + 1] = True

    noise = _noise(spec.noise.kind, n, rng, sr)
    noise /= _rms(noise)
    if spec.events and support.any() and _rms(signal[support]) > 0:
        level = _rms(signal[support]) / 10 ** (spec.noise.snr_db / 20)
    else:
        level = spec.noise_rms
    x = signal + level * noise

    for _ in range(spec.clicks):
        width = int(rng.integers(int(0.001 * sr), int(0.004 * sr)))
        at = int(rng.integers(0, n - width))
        x[at:at + width] += rng.uniform(0.3, 1.0) * rng.standard_normal(width)

    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak

    n_bins = window_len // 2
    n_frames = dsp.n_frames_for(n, window_len, hop)
    mask = np.zeros((n_bins, n_frames), dtype=bool)
    boxes = []
    for ev in spec.events:
        m = event_mask(ev, sr, n, window_len, hop)
        if not m.any():
            continue
        rows, cols = np.nonzero(m)
        boxes.append(BBox(int(cols.min()), int(cols.max()), int(rows.min()), int(rows.max())))
        mask |= m
    return AudioClip(x, sr), GroundTruth(mask, boxes, int(bool(boxes)))


def random_scene_spec(seed, positive=True, snr_db=20.0, duration=10.0,
                      sample_rate=dsp.SAMPLE_RATE, max_clicks=2, noise_kind=None):
    """Draw a scene: 1-4 chirps of 0.1-1.0 s in the 1-8 kHz band when positive."""
    rng = np.random.default_rng(seed)
    kind = noise_kind or str(rng.choice(["white", "pink", "wind_lowpass"]))
    events = []
    if positive:
        for _ in range(int(rng.integers(1, 5))):
            dur = rng.uniform(0.1, 1.0)
            t0 = rng.uniform(0.05, duration - dur - 0.05)
            f0, f1 = rng.uniform(1000.0, 8000.0, size=2)
            events.append(ChirpSpec(
                t_start=float(t0), t_end=float(t0 + dur),
                f_start=float(f0), f_end=float(f1),
                amplitude=float(rng.uniform(0.5, 1.0)),
                shape=str(rng.choice(["linear_sweep", "sinusoidal_fm"])),
                fm_rate=float(rng.uniform(2.0, 8.0)),
            ))
    clicks = int(rng.integers(0, max_clicks + 1)) if max_clicks else 0
    return SceneSpec(duration=duration, sample_rate=sample_rate, events=tuple(events),
                     noise=NoiseSpec(kind, snr_db), seed=int(rng.integers(2 ** 31)),
                     clicks=clicks)


def scene_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def corpus_plan(n_scenes, pos_fraction, seed):
    """Per-scene ``(id, seed, positive)`` triples for a corpus."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if not 0 <= pos_fraction <= 1:
        raise ValueError("pos_fraction must lie in [0, 1]")
    n_pos = int(math.floor(n_scenes * pos_fraction + 0.5))
    positive = np.zeros(n_scenes, dtype=bool)
    positive[:n_pos] = True
    positive = np.random.default_rng(seed).permutation(positive)
    return [(f"scene_{i:04d}", s, bool(p))
            for i, (s, p) in enumerate(zip(scene_seeds(seed, n_scenes), positive))]


def iter_scenes(n_scenes, pos_fraction, seed, snr_db=20.0, **kw):
    """Yield ``(id, clip, truth)`` for an in-memory corpus."""
    for sid, s, pos in corpus_plan(n_scenes, pos_fraction, seed):
        clip, truth = generate_scene(random_scene_spec(s, pos, snr_db=snr_db, **kw))
        yield sid, clip, truth


def save_mask_png(path, mask):
    """1-bit PNG with the highest frequency on the top row."""
    Image.fromarray(np.flipud(np.asarray(mask, dtype=bool))).save(path, format="PNG")


def load_mask_png(path):
    with Image.open(path) as im:
        return np.flipud(np.array(im.convert("1"), dtype=bool)).copy()


def save_boxes_json(path, boxes):
    Path(path).write_text(json.dumps([b.to_dict() for b in boxes]) + "\n")


def load_boxes_json(path):
    return [BBox.from_dict(d) for d in json.loads(Path(path).read_text())]


def generate_corpus(n_scenes, pos_fraction, seed, out_dir, snr_db=20.0):
    """Write a corpus under ``out_dir`` and return the manifest rows."""
    out = Path(out_dir)
    for sub in ("audio", "masks", "boxes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for sid, clip, truth in iter_scenes(n_scenes, pos_fraction, seed, snr_db=snr_db):
        dsp.save_wav(out / "audio" / f"{sid}.wav", clip)
        save_mask_png(out / "masks" / f"{sid}.png", truth.mask)
        save_boxes_json(out / "boxes" / f"{sid}.json", truth.boxes)
        rows.append({"id": sid, "path": f"audio/{sid}.wav", "label": truth.label})
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "path", "label"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def read_manifest(path):
    with open(path, newline="") as fh:
        return [{"id": r["id"], "path": r["path"], "label": int(r["label"])}
                for r in csv.DictReader(fh)]
