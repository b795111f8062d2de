"""Audio loading, STFT spectrograms and the input variants fed to networks."""
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

WINDOW_LEN = 512
HOP = 706  # 10 s at 44.1 kHz -> 624 frames
SAMPLE_RATE = 44100
FLOOR_DB = -80.0


class AudioError(Exception):
    """Base class for WAV loading failures."""


class UnreadableAudioError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if len(self.samples) == 0:
            raise EmptyAudioError("audio clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude matrix of shape (n_bins, n_frames); row 0 is the lowest bin."""
    values: np.ndarray
    sample_rate: int = SAMPLE_RATE
    window_len: int = WINDOW_LEN
    hop: int = HOP
    scale: str = "linear"  # or "log_db"
    normalized: bool = False  # True for mean-subtracted variants

    @property
    def n_bins(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_bins)
    f_min: float
    f_max: float

    @property
    def n_mels(self):
        return self.weights.shape[0]

    @property
    def n_bins(self):
        return self.weights.shape[1]


def load_wav(path) -> AudioClip:
    """Read a PCM/float WAV file as a mono clip scaled to [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as e:
        raise UnreadableAudioError(f"{path}: no such file") from e
    except ValueError as e:
        msg = str(e)
        if "format" in msg.lower() or "bit" in msg.lower() or "support" in msg.lower():
            raise UnsupportedEncodingError(f"{path}: {msg}") from e
        raise UnreadableAudioError(f"{path}: {msg}") from e
    except (OSError, EOFError) as e:
        raise UnreadableAudioError(f"{path}: {e}") from e

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    return AudioClip(x, int(rate))


def save_wav(path, clip: AudioClip):
    """Write a clip as 16-bit PCM."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, clip.sample_rate, pcm)


def n_frames_for(n_samples, window_len=WINDOW_LEN, hop=HOP):
    return 1 + (n_samples - window_len) // hop


def frame_center_time(j, sample_rate=SAMPLE_RATE, window_len=WINDOW_LEN, hop=HOP):
    """Time in seconds of the centre of frame ``j``."""
    return (j * hop + window_len / 2) / sample_rate


def stft_spectrogram(clip: AudioClip, window_len=WINDOW_LEN, hop=HOP,
                     scale="log_db", floor_db=FLOOR_DB) -> Spectrogram:
    """Hamming-windowed STFT magnitude, ``window_len // 2`` bins per frame.

    The Nyquist bin is dropped so a 512-sample window gives 256 rows. With
    ``scale="log_db"`` values are ``20*log10(max(v, floor))`` where the floor
    sits ``floor_db`` below the matrix maximum.
    """
    if window_len % 2:
        raise ValueError("window_len must be even")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < window_len:
        raise ValueError(f"clip has {len(x)} samples, shorter than one {window_len}-sample window")

    frames = sliding_window_view(x, window_len)[::hop]
    win = get_window("hamming", window_len)
    mag = np.abs(np.fft.rfft(frames * win, axis=1))[:, :window_len // 2]
    values = np.ascontiguousarray(mag.T)
    spec = Spectrogram(values, clip.sample_rate, window_len, hop, "linear")
    if scale == "linear":
        return spec
    if scale == "log_db":
        return to_db(spec, floor_db)
    raise ValueError(f"unknown scale {scale!r}")


def to_db(spec: Spectrogram, floor_db=FLOOR_DB) -> Spectrogram:
    if spec.scale != "linear":
        raise ValueError("to_db expects a linear spectrogram")
    peak = float(spec.values.max()) if spec.values.size else 0.0
    floor = peak * 10.0 ** (floor_db / 20.0) if peak > 0 else 1e-12
    return spec.with_values(20.0 * np.log10(np.maximum(spec.values, floor)), scale="log_db")


def mean_subtract(spec: Spectrogram) -> Spectrogram:
    """Remove each frequency row's mean over time."""
    v = spec.values - spec.values.mean(axis=1, keepdims=True)
    return spec.with_values(v, normalized=True)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate=SAMPLE_RATE, window_len=WINDOW_LEN, n_mels=64,
                   f_min=0.0, f_max=None, n_bins=None) -> MelFilterbank:
    """Triangular filters with centres equally spaced in mel.

    Each slope is at least one bin spacing wide so narrow low-frequency
    filters never fall between bin centres and come out empty.
    """
    if f_max is None:
        f_max = sample_rate / 2
    if n_bins is None:
        n_bins = window_len // 2
    df = sample_rate / window_len
    freqs = np.arange(n_bins) * df
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    left, center, right = pts[:-2], pts[1:-1], pts[2:]
    lw = np.maximum(center - left, df)[:, None]
    rw = np.maximum(right - center, df)[:, None]
    d = freqs[None, :] - center[:, None]
    w = np.where(d < 0, 1.0 + d / lw, 1.0 - d / rw)
    return MelFilterbank(np.clip(w, 0.0, None), float(f_min), float(f_max))


def mel_reconstruct(spec: Spectrogram, fb: MelFilterbank) -> Spectrogram:
    """Project onto the mel filters and back: ``W_norm.T @ (W @ S)``.

    ``W_norm`` rescales each filter to unit sum, so an identity filterbank
    reproduces the input exactly. The result is smoother than the input.
    """
    if fb.n_bins != spec.n_bins:
        raise ValueError(f"filterbank has {fb.n_bins} bins, spectrogram has {spec.n_bins}")
    if spec.scale != "linear":
        raise ValueError("mel_reconstruct expects a linear spectrogram")
    w = fb.weights
    back = (w / w.sum(axis=1, keepdims=True)).T
    return spec.with_values(np.maximum(back @ (w @ spec.values), 0.0))


def _bilinear_axis(x, n_out, axis, align_corners):
    n_in = x.shape[axis]
    if n_out == n_in:
        return x
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    elif align_corners:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    else:
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1 - frac) + np.take(x, hi, axis=axis) * frac


def bilinear(values, out_rows, out_cols, align_corners=True):
    """Bilinear resize of the last two axes of an array.

    ``align_corners=True`` maps first/last samples onto first/last outputs.
    ``False`` treats values as pixel-area centres (each input cell covers
    ``out/in`` output pixels), which keeps feature maps registered with the
    grid they were pooled from.
    """
    if out_rows < 1 or out_cols < 1:
        raise ValueError("output size must be positive")
    v = np.asarray(values, dtype=np.float64)
    v = _bilinear_axis(v, out_rows, v.ndim - 2, align_corners)
    return _bilinear_axis(v, out_cols, v.ndim - 1, align_corners)


def resize_bilinear(spec: Spectrogram, out_rows, out_cols) -> Spectrogram:
    return spec.with_values(bilinear(spec.values, out_rows, out_cols))


def _edges(n_in, n_out):
    return (np.arange(n_out) * n_in) // n_out


def pool_max(values, out_rows, out_cols):
    """Downsample by taking the maximum over each block of the input grid.

    Thin bright structures (FM tracks, one-bin-wide mask lines) survive this,
    whereas point-sampled bilinear shrinking can skip them entirely.
    """
    v = np.asarray(values)
    if out_rows > v.shape[-2] or out_cols > v.shape[-1]:
        raise ValueError("pool_max only shrinks")
    v = np.maximum.reduceat(v, _edges(v.shape[-2], out_rows), axis=-2)
    return np.maximum.reduceat(v, _edges(v.shape[-1], out_cols), axis=-1)


def resize_nearest(values, out_rows, out_cols):
    """Nearest-neighbour resize consistent with the pool_max block grid."""
    v = np.asarray(values)
    r = (np.arange(out_rows) * v.shape[-2]) // out_rows
    c = (np.arange(out_cols) * v.shape[-1]) // out_cols
    return v[..., r[:, None], c[None, :]]


def block_index(n_in, n_out):
    """For each input index, the pool_max block that contains it."""
    return np.searchsorted(_edges(n_in, n_out), np.arange(n_in), side="right") - 1


def unpool(values, native_rows, native_cols):
    """Inverse of the pool_max grid: copy each block value back over its block."""
    v = np.asarray(values)
    r = block_index(native_rows, v.shape[-2])
    c = block_index(native_cols, v.shape[-1])
    return v[..., r[:, None], c[None, :]]


def network_input(spec: Spectrogram, rows=64, cols=64, db_range=40.0):
    """Prepare a spectrogram as a single-channel network input.

    Log magnitude, per-frequency-channel mean subtraction, scaling so that
    ``db_range`` above the channel mean maps to 1, then block-max pooling
    to ``rows x cols``.
    """
    if spec.scale == "linear":
        spec = to_db(spec)
    if not spec.normalized:
        spec = mean_subtract(spec)
    x = pool_max(spec.values / db_range, rows, cols)
    return x[None, :, :]
