"""IIR filter design and zero-phase application.

Butterworth bandpass filters are designed from the analog prototype
(lowpass -> bandpass in the prewarped analog domain -> bilinear transform),
so the -3 dB points land exactly on the requested edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ValidationError
from .signal_io import Recording, Role

__all__ = [
    "BiquadSection",
    "SosFilter",
    "design_butter_bandpass",
    "design_notch",
    "cascade",
    "filter_zero_phase",
    "preprocess_recording",
    "line_harmonics",
    "BANDPASS",
    "LINE_FREQ",
    "NOTCH_Q",
]

BANDPASS = (5, 30.0, 499.0)  # order, low edge, high edge (Hz)
LINE_FREQ = 60.0
NOTCH_Q = 30.0


@dataclass(frozen=True)
class BiquadSection:
    """H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def stable(self) -> bool:
        # stability triangle for a monic quadratic denominator
        return abs(self.a2) < 1.0 and abs(self.a1) < 1.0 + self.a2

    def response(self, z: np.ndarray) -> np.ndarray:
        zi = 1.0 / z
        return (self.b0 + self.b1 * zi + self.b2 * zi**2) / (1.0 + self.a1 * zi + self.a2 * zi**2)


@dataclass(frozen=True)
class SosFilter:
    sections: tuple[BiquadSection, ...]
    overall_gain: float
    kind: str
    order: int
    edges: tuple[float, ...]
    fs: float

    def __post_init__(self):
        if not self.sections:
            raise ValidationError("filter has no sections")
        for s in self.sections:
            if not s.stable:
                raise ValidationError(f"unstable section {s}")

    def as_sos(self) -> np.ndarray:
        """``(n_sections, 6)`` array in scipy's sos layout, gain folded into section 0."""
        sos = np.array([[s.b0, s.b1, s.b2, 1.0, s.a1, s.a2] for s in self.sections], dtype=np.float64)
        sos[0, :3] *= self.overall_gain
        return sos

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        z = np.exp(2j * np.pi * np.asarray(freqs, dtype=np.float64) / self.fs)
        h = np.full(z.shape, self.overall_gain, dtype=np.complex128)
        for s in self.sections:
            h = h * s.response(z)
        return h

    @property
    def padlen(self) -> int:
        return 3 * len(self.sections) * 10


def _check_edges(fs, *edges):
    if not fs > 0:
        raise ValidationError(f"sampling rate must be positive, got {fs}")
    nyq = fs / 2.0
    for f in edges:
        if not 0 < f < nyq:
            raise ValidationError(f"edge {f} Hz must lie strictly between 0 and Nyquist ({nyq} Hz)")


def _pair_poles(poles: np.ndarray) -> list[tuple[complex, complex]]:
    """Group poles into conjugate pairs; leftover real poles pair with each other."""
    tol = 1e-10 * max(1.0, float(np.max(np.abs(poles))))
    cplx = sorted((p for p in poles if p.imag > tol), key=lambda p: abs(p))
    real = sorted(p.real for p in poles if abs(p.imag) <= tol)
    pairs = [(p, np.conj(p)) for p in cplx]
    if len(real) % 2:
        raise ValidationError("odd number of real poles cannot be paired into biquads")
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, len(real), 2)]
    return pairs


def design_butter_bandpass(order: int, f_lo: float, f_hi: float, fs: float) -> SosFilter:
    """Digital Butterworth bandpass with ``order`` biquads (2*order poles)."""
    if int(order) != order or order < 1:
        raise ValidationError(f"order must be a positive integer, got {order}")
    order = int(order)
    _check_edges(fs, f_lo, f_hi)
    if not f_lo < f_hi:
        raise ValidationError(f"need f_lo < f_hi, got {f_lo} >= {f_hi}")

    fs2 = 2.0 * fs
    w_lo = fs2 * np.tan(np.pi * f_lo / fs)
    w_hi = fs2 * np.tan(np.pi * f_hi / fs)
    bw = w_hi - w_lo
    w0 = np.sqrt(w_lo * w_hi)

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    half = proto * bw / 2.0
    root = np.sqrt(half**2 - w0**2 + 0j)
    analog = np.concatenate([half + root, half - root])
    # gain of the analog bandpass is bw**order; n zeros at s=0
    digital = (fs2 + analog) / (fs2 - analog)
    gain = np.real(bw**order * fs2**order / np.prod(fs2 - analog))

    sections = []
    norm = np.exp(2j * np.pi * np.sqrt(f_lo * f_hi) / fs)
    for p1, p2 in _pair_poles(digital):
        a1 = float(np.real(-(p1 + p2)))
        a2 = float(np.real(p1 * p2))
        sec = BiquadSection(1.0, 0.0, -1.0, a1, a2)  # zeros at z = +1 and z = -1
        scale = 1.0 / abs(sec.response(norm))
        gain /= scale
        sections.append(BiquadSection(scale, 0.0, -scale, a1, a2))
    return SosFilter(tuple(sections), float(gain), "bandpass", order, (float(f_lo), float(f_hi)), float(fs))


def design_notch(f0: float, q: float = NOTCH_Q, fs: float = 1000.0) -> SosFilter:
    """Second-order notch: zeros on the unit circle at +-f0, unit gain at DC and Nyquist."""
    _check_edges(fs, f0)
    if not q > 0:
        raise ValidationError(f"quality factor must be positive, got {q}")
    w0 = 2.0 * np.pi * f0 / fs
    bw = w0 / q
    g = 1.0 / (1.0 + np.tan(bw / 2.0))
    c = np.cos(w0)
    sec = BiquadSection(1.0, -2.0 * c, 1.0, -2.0 * g * c, 2.0 * g - 1.0)
    return SosFilter((sec,), float(g), "notch", 2, (float(f0),), float(fs))


def cascade(*filters: SosFilter) -> SosFilter:
    """Series connection of filters designed at the same rate."""
    fs = {f.fs for f in filters}
    if len(fs) != 1:
        raise ValidationError("cannot cascade filters with different sampling rates")
    sections = tuple(s for f in filters for s in f.sections)
    gain = float(np.prod([f.overall_gain for f in filters]))
    edges = tuple(e for f in filters for e in f.edges)
    return SosFilter(sections, gain, "cascade", sum(f.order for f in filters), edges, fs.pop())


def filter_zero_phase(f: SosFilter, x) -> np.ndarray:
    """Forward-backward filtering along the last axis with reflective padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] <= f.padlen:
        raise ValidationError(
            f"input of {x.shape[-1]} samples is too short; need more than {f.padlen}"
        )
    return signal.sosfiltfilt(f.as_sos(), x, axis=-1, padtype="even", padlen=f.padlen)


def line_harmonics(fs: float, f_hi: float = BANDPASS[2], line: float = LINE_FREQ) -> list[float]:
    """Multiples of the line frequency strictly below min(f_hi, fs/2)."""
    top = min(f_hi, fs / 2.0)
    n = int(np.ceil(top / line)) - 1
    return [line * k for k in range(1, n + 1) if line * k < top]


def preprocess_recording(rec: Recording, order: int = BANDPASS[0], lo: float = BANDPASS[1],
                         hi: float = BANDPASS[2], notch_q: float = NOTCH_Q,
                         line: float = LINE_FREQ) -> Recording:
    """Bandpass plus line-harmonic notches on every non-reference channel."""
    if not rec.fs > 2 * hi:
        raise ValidationError(f"sampling rate {rec.fs} Hz too low for a {hi} Hz band edge")
    bank = [design_butter_bandpass(order, lo, hi, rec.fs)]
    bank += [design_notch(f0, notch_q, rec.fs) for f0 in line_harmonics(rec.fs, hi, line)]
    full = cascade(*bank)
    picks = [c.index for c in rec.channels if c.role != Role.REFERENCE]
    out = np.array(rec.data, copy=True)
    if picks:
        out[picks] = filter_zero_phase(full, rec.data[picks])
    return rec.with_data(out)
