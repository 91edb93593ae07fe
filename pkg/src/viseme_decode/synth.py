"""Synthetic sentence corpus with viseme-dependent EEG/EMG signatures.

Every class owns two carrier frequencies and a fixed spatial mixing vector;
background is pink noise, optionally with a 60 Hz line component. All output
is a pure function of :class:`SynthConfig` (seed included).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .alignment import ARPABET, DEFAULT_MAP, N_VISEMES, SILENCE, PhonemeInterval, PhonemeTier, write_textgrid
from .errors import ConfigError
from .signal_io import ChannelMeta, Marker, Recording, Role, write_brainvision

__all__ = [
    "SynthConfig",
    "SynthSentence",
    "SynthCorpus",
    "signature_freqs",
    "mixing_vectors",
    "gen_corpus",
    "render_recording",
    "pink_noise",
    "emit",
    "channel_layout",
]


SNR_BAND = (30.0, 499.0)


@dataclass(frozen=True)
class SynthConfig:
    n_sentences: int = 474
    phonemes_per_sentence: tuple[int, int] = (20, 40)  # inclusive, boundary silences included
    duration_ms: tuple[float, float] = (50.0, 200.0)
    fs: float = 1000.0
    n_eeg: int = 16  # includes the reference electrode
    n_emg: int = 4
    snr_db: float = 20.0
    line_noise_amp: float = 1.0
    emg_gain: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phonemes_per_sentence", tuple(self.phonemes_per_sentence))
        object.__setattr__(self, "duration_ms", tuple(self.duration_ms))
        lo, hi = self.phonemes_per_sentence
        if self.n_sentences < 0:
            raise ConfigError("n_sentences must be >= 0")
        if not 2 <= lo <= hi:
            raise ConfigError("phonemes_per_sentence needs 2 <= lo <= hi (two boundary silences)")
        dlo, dhi = self.duration_ms
        if not 0 < dlo <= dhi:
            raise ConfigError("duration_ms needs 0 < lo <= hi")
        if not self.fs > 998:
            raise ConfigError("fs must exceed 998 Hz so the 499 Hz band edge stays below Nyquist")
        if self.n_eeg < 2 or self.n_emg < 0:
            raise ConfigError("need n_eeg >= 2 (one is the reference) and n_emg >= 0")
        if self.line_noise_amp < 0 or self.emg_gain <= 0:
            raise ConfigError("line_noise_amp must be >= 0 and emg_gain > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phonemes_per_sentence"] = list(self.phonemes_per_sentence)
        d["duration_ms"] = list(self.duration_ms)
        return d


@dataclass(frozen=True)
class SynthSentence:
    id: int
    phonemes: tuple[str, ...]
    n_samples: tuple[int, ...]  # per-phoneme duration in samples
    fs: float

    @property
    def text(self) -> str:
        return " ".join(self.phonemes)

    @property
    def visemes(self) -> list[int]:
        return [DEFAULT_MAP[p] for p in self.phonemes]

    @property
    def durations_s(self) -> np.ndarray:
        return np.asarray(self.n_samples) / self.fs

    def tier(self) -> PhonemeTier:
        edges = np.concatenate([[0], np.cumsum(self.n_samples)]) / self.fs
        ivs = [PhonemeInterval(float(edges[i]), float(edges[i + 1]), p) for i, p in enumerate(self.phonemes)]
        return PhonemeTier("phones", tuple(ivs), 0.0, float(edges[-1]))


@dataclass
class SynthCorpus:
    config: SynthConfig
    sentences: list[SynthSentence] = field(default_factory=list)

    def catalog_entries(self) -> list[dict]:
        return [{"id": s.id, "text": s.text, "viseme_sequence": s.visemes} for s in self.sentences]


def signature_freqs(cls: int) -> tuple[float, float]:
    return 35.0 + 12.0 * cls, 41.0 + 13.0 * cls


def channel_layout(cfg: SynthConfig) -> list[ChannelMeta]:
    chans = []
    for i in range(cfg.n_eeg):
        role = Role.REFERENCE if i == cfg.n_eeg - 1 else Role.EEG
        name = "REF" if role == Role.REFERENCE else f"EEG{i + 1:03d}"
        chans.append(ChannelMeta(name, role, 1.0, i))
    for j in range(cfg.n_emg):
        chans.append(ChannelMeta(f"EMG{j + 1:02d}", Role.EMG, 1.0, cfg.n_eeg + j))
    return chans


def mixing_vectors(cfg: SynthConfig) -> np.ndarray:
    """``(15, n_channels)`` spatial patterns; class 0 and the reference are zero.

    EEG weights have unit mean square per class; EMG weights carry ``emg_gain``.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    n = cfg.n_eeg + cfg.n_emg
    eeg = list(range(cfg.n_eeg - 1))
    emg = list(range(cfg.n_eeg, n))
    mix = np.zeros((N_VISEMES, n))
    for c in range(1, N_VISEMES):
        w = rng.standard_normal(n)
        mix[c, eeg] = w[eeg] / np.sqrt(np.mean(w[eeg] ** 2))
        if emg:
            mix[c, emg] = cfg.emg_gain * w[emg] / np.sqrt(np.mean(w[emg] ** 2))
    return mix


def signature_amplitude(cfg: SynthConfig) -> float:
    """Carrier amplitude such that the strongest channel group (EMG when present)
    sees ``snr_db`` of signature power over in-band background power."""
    peak_gain = max(1.0, cfg.emg_gain) if cfg.n_emg else 1.0
    return float(np.sqrt(10.0 ** (cfg.snr_db / 10.0)) / peak_gain)


def gen_corpus(cfg: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng([cfg.seed, 0])
    lo, hi = cfg.phonemes_per_sentence
    smin = int(round(cfg.duration_ms[0] * cfg.fs / 1000))
    smax = int(round(cfg.duration_ms[1] * cfg.fs / 1000))
    sentences = []
    for sid in range(cfg.n_sentences):
        n = int(rng.integers(lo, hi + 1))
        inner = rng.choice(len(ARPABET), size=n - 2)
        phones = (SILENCE, *(ARPABET[i] for i in inner), SILENCE)
        lengths = tuple(int(x) for x in rng.integers(smin, smax + 1, size=n))
        sentences.append(SynthSentence(sid, phones, lengths, cfg.fs))
    return SynthCorpus(cfg, sentences)


def pink_noise(rng: np.random.Generator, shape: tuple[int, int], fs: float = 1000.0,
               band: tuple[float, float] | None = None) -> np.ndarray:
    """1/f noise along the last axis.

    Scaled to unit variance overall, or to unit variance of the ``band``
    (Hz) component when given.
    """
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    spec = spec * scale
    x = np.fft.irfft(spec, n=n, axis=-1)
    if band is None:
        return x / x.std(axis=-1, keepdims=True)
    sel = (f >= band[0]) & (f <= band[1])
    inband = np.fft.irfft(np.where(sel, spec, 0.0), n=n, axis=-1)
    return x / inband.std(axis=-1, keepdims=True)


def render_recording(sentence: SynthSentence, cfg: SynthConfig, mix: np.ndarray | None = None) -> Recording:
    if mix is None:
        mix = mixing_vectors(cfg)
    rng = np.random.default_rng([cfg.seed, 2, sentence.id])
    chans = channel_layout(cfg)
    n_total = int(sum(sentence.n_samples))
    n_ch = len(chans)
    t = np.arange(n_total) / cfg.fs
    amp = signature_amplitude(cfg)

    data = pink_noise(rng, (n_ch, n_total), cfg.fs, SNR_BAND)
    start = 0
    for ph, n in zip(sentence.phonemes, sentence.n_samples):
        cls = DEFAULT_MAP[ph]
        if cls:
            f1, f2 = signature_freqs(cls)
            ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
            tt = t[start:start + n]
            sig = np.sin(2 * np.pi * f1 * tt + ph1) + np.sin(2 * np.pi * f2 * tt + ph2)
            data[:, start:start + n] += amp * mix[cls][:, None] * sig
        start += n
    if cfg.line_noise_amp:
        data += cfg.line_noise_amp * np.sin(2 * np.pi * 60.0 * t + rng.uniform(0, 2 * np.pi))
    ref = cfg.n_eeg - 1
    data[ref] = 0.0
    # stored as float32 on disk; quantize here so emitted and in-memory corpora agree
    return Recording(chans, cfg.fs, data.astype(np.float32).astype(np.float64))


def _markers(sentence: SynthSentence) -> list[Marker]:
    pos = np.concatenate([[0], np.cumsum(sentence.n_samples)[:-1]])
    return [Marker("Phoneme", p, int(x), int(n)) for p, x, n in zip(sentence.phonemes, pos, sentence.n_samples)]


def recording_name(sid: int) -> str:
    return f"s{sid:04d}"


def emit(cfg: SynthConfig, out_dir) -> Path:
    """Write recordings, TextGrids, roles sidecars and the sentence catalog."""
    out = Path(out_dir)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    (out / "alignments").mkdir(parents=True, exist_ok=True)
    corpus = gen_corpus(cfg)
    mix = mixing_vectors(cfg)
    for s in corpus.sentences:
        name = recording_name(s.id)
        rec = render_recording(s, cfg, mix)
        write_brainvision(rec, _markers(s), out / "recordings" / name)
        write_textgrid([s.tier()], out / "alignments" / f"{name}.TextGrid")
    (out / "catalog.json").write_text(json.dumps(corpus.catalog_entries(), indent=1) + "\n", encoding="utf-8")
    manifest = {"format_version": 1, "config": cfg.to_dict(), "n_sentences": len(corpus.sentences)}
    (out / "synth_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out
