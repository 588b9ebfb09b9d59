"""Spectrogram representation used for speech enhancement.

16 kHz audio, 512-sample periodic Hann frames with hop 128, 256 bins per
frame (the Nyquist bin is dropped), and the magnitude compression
``A |c|^alpha exp(i angle c)``.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_banded
from scipy.signal import get_window

__all__ = [
    "SAMPLE_RATE",
    "N_FFT",
    "HOP",
    "N_BINS",
    "Waveform",
    "Spectrogram",
    "TransformParams",
    "stft",
    "istft",
    "compress",
    "decompress",
    "complex_noise",
    "snr",
    "snr_improvement",
    "read_wav",
    "write_wav",
    "write_spectrogram",
]

SAMPLE_RATE = 16000
N_FFT = 512
HOP = 128
N_BINS = N_FFT // 2
SNR_CAP_DB = 100.0

WINDOW = get_window("hann", N_FFT, fftbins=True)


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE} Hz audio is supported, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex coefficients, ``N_BINS`` rows by ``T`` frames."""

    coefficients: np.ndarray
    compressed: bool = False
    n_samples: int | None = None

    @property
    def shape(self):
        return self.coefficients.shape

    def to_state(self) -> np.ndarray:
        """Flatten to interleaved ``(re, im)`` reals."""
        c = self.coefficients.reshape(-1)
        return np.stack([c.real, c.imag], axis=-1).reshape(-1)

    @classmethod
    def from_state(cls, state, shape, compressed=False, n_samples=None) -> "Spectrogram":
        pairs = np.asarray(state, dtype=float).reshape(-1, 2)
        coeffs = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(shape)
        return cls(coeffs, compressed, n_samples)

    def replace(self, coefficients, compressed=None) -> "Spectrogram":
        flag = self.compressed if compressed is None else compressed
        return Spectrogram(np.asarray(coefficients), flag, self.n_samples)


@dataclass(frozen=True)
class TransformParams:
    scale: float = 0.15
    exponent: float = 0.5

    def __post_init__(self):
        if not self.scale > 0 or not 0 < self.exponent <= 1:
            raise ValueError("need scale > 0 and 0 < exponent <= 1")


def stft(w: Waveform) -> Spectrogram:
    x = w.samples
    if len(x) < N_FFT:
        raise ValueError(f"need at least {N_FFT} samples, got {len(x)}")
    frames = sliding_window_view(x, N_FFT)[::HOP] * WINDOW
    spec = np.fft.rfft(frames, axis=-1)[:, :N_BINS]
    return Spectrogram(spec.T.copy(), compressed=False, n_samples=len(x))


def _nyquist_atom_overlap(n_frames: int, norm: np.ndarray):
    """Banded normal matrix for the per-frame Nyquist coefficients.

    Frame ``m`` of a signal's windowed STFT equals ``g_m + c_m a`` with ``g_m``
    the inverse of the 256 kept bins and ``a[n] = (-1)^n / N_FFT``. Choosing
    ``c`` to make the frames as consistent as possible is a least-squares
    problem whose normal matrix couples frames at most 3 hops apart.
    """
    atom = (-1.0) ** np.arange(N_FFT) / N_FFT
    u = WINDOW * atom
    inv_norm = np.divide(1.0, norm, out=np.zeros_like(norm), where=norm > 1e-10)
    reach = N_FFT // HOP - 1
    band = np.zeros((2 * reach + 1, n_frames))
    for m in range(n_frames):
        for lag in range(-reach, reach + 1):
            k = m + lag
            if not 0 <= k < n_frames:
                continue
            lo = max(m, k) * HOP
            hi = min(m, k) * HOP + N_FFT
            seg = slice(lo, hi)
            overlap = np.sum(
                u[lo - m * HOP : hi - m * HOP] * u[lo - k * HOP : hi - k * HOP] * inv_norm[seg]
            )
            val = (atom @ atom if lag == 0 else 0.0) - overlap
            band[reach - lag, k] = val  # row of m, column k
    return band, u, inv_norm


def _overlap_add(frames, n_samples):
    out = np.zeros(n_samples)
    for m, frame in enumerate(frames):
        out[m * HOP : m * HOP + N_FFT] += WINDOW * frame
    return out


def istft(s: Spectrogram) -> Waveform:
    """Least-squares inverse of :func:`stft`.

    The dropped Nyquist bin is recovered from the overlap between frames
    before the squared-window-normalized overlap-add, so a spectrogram of a
    real signal round-trips to numerical precision.
    """
    if s.compressed:
        raise ValueError("decompress the spectrogram before inversion")
    coeffs = s.coefficients
    n_frames = coeffs.shape[1]
    n_samples = s.n_samples or (n_frames - 1) * HOP + N_FFT
    full = np.concatenate([coeffs.T, np.zeros((n_frames, 1))], axis=1)
    frames = np.fft.irfft(full, n=N_FFT, axis=-1)

    norm = _overlap_add(np.tile(WINDOW, (n_frames, 1)), n_samples)
    band, u, inv_norm = _nyquist_atom_overlap(n_frames, norm)
    x_kept = _overlap_add(frames, n_samples) * inv_norm
    atom = (-1.0) ** np.arange(N_FFT) / N_FFT
    rhs = np.array(
        [
            atom @ frames[m] - u @ x_kept[m * HOP : m * HOP + N_FFT]
            for m in range(n_frames)
        ]
    )
    reach = N_FFT // HOP - 1
    nyquist = solve_banded((reach, reach), band, -rhs)

    frames = frames + nyquist[:, None] * atom
    return Waveform(_overlap_add(frames, n_samples) * inv_norm)


def compress(s: Spectrogram, p: TransformParams = TransformParams()) -> Spectrogram:
    if s.compressed:
        raise ValueError("spectrogram is already compressed")
    c = s.coefficients
    return s.replace(p.scale * np.abs(c) ** p.exponent * np.exp(1j * np.angle(c)), True)


def decompress(s: Spectrogram, p: TransformParams = TransformParams()) -> Spectrogram:
    if not s.compressed:
        raise ValueError("spectrogram is not compressed")
    c = s.coefficients
    mag = (np.abs(c) / p.scale) ** (1.0 / p.exponent)
    return s.replace(mag * np.exp(1j * np.angle(c)), False)


def complex_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian with ``E|z|^2 = 1``."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def snr(reference, signal) -> float:
    """SNR in dB, capped at +-100."""
    ref = np.asarray(reference, dtype=float)
    err = np.sum((ref - np.asarray(signal, dtype=float)) ** 2)
    energy = np.sum(ref**2)
    if energy == 0.0:
        raise ZeroDivisionError("reference signal has zero energy")
    if err == 0.0:
        return SNR_CAP_DB
    return float(np.clip(10.0 * np.log10(energy / err), -SNR_CAP_DB, SNR_CAP_DB))


def snr_improvement(reference: Waveform, noisy: Waveform, enhanced: Waveform) -> float:
    """``SNR(enhanced) - SNR(noisy)`` in dB; exact recovery reports +100."""
    ref, nsy, enh = (np.asarray(getattr(w, "samples", w), dtype=float) for w in (reference, noisy, enhanced))
    if not len(ref) == len(nsy) == len(enh):
        raise ValueError("signals must have equal length")
    if np.array_equal(enh, ref):
        return SNR_CAP_DB
    return float(np.clip(snr(ref, enh) - snr(ref, nsy), -SNR_CAP_DB, SNR_CAP_DB))


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz audio."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def write_spectrogram(path, s: Spectrogram, fmt: str = "csv") -> None:
    """Dump as CSV rows ``frame,bin,re,im`` or raw little-endian float64 pairs."""
    c = s.coefficients
    if fmt == "bin":
        pairs = np.stack([c.T.real, c.T.imag], axis=-1)
        pairs.astype("<f8").tofile(str(path))
        return
    if fmt != "csv":
        raise ValueError(f"unknown spectrogram format {fmt!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "bin", "re", "im"])
        for m in range(c.shape[1]):
            for k in range(c.shape[0]):
                writer.writerow([m, k, repr(float(c[k, m].real)), repr(float(c[k, m].imag))])
