"""Phoneme-locked epochs resampled to fixed windows, sentence splits, storage."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import N_VISEMES
from .errors import IntegrityError, ValidationError
from .signal_io import Recording, Role

log = logging.getLogger(__name__)

__all__ = [
    "WINDOWS_MS",
    "MODALITIES",
    "LabeledTrial",
    "TrialSet",
    "modality_channels",
    "resample_linear",
    "extract_epochs",
    "split_by_sentence",
    "save_dataset",
    "load_dataset",
]

WINDOWS_MS = (64, 128, 256)
MODALITIES = ("EEG_ONLY", "EEG_EMG")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledTrial:
    data: np.ndarray  # (channels, L), float32
    label: int
    sentence_id: int
    interval_index: int
    window_ms: int
    source_span: tuple[float, float]


def window_samples(window_ms: int, fs: float) -> int:
    n = window_ms * fs / 1000.0
    if abs(n - round(n)) > 1e-9:
        raise ValidationError(f"{window_ms} ms is not a whole number of samples at {fs} Hz")
    return int(round(n))


def modality_channels(rec: Recording, modality: str) -> list[int]:
    if modality == "EEG_ONLY":
        return rec.indices(Role.EEG)
    if modality == "EEG_EMG":
        return rec.indices(Role.EEG, Role.EMG)
    raise ValidationError(f"unknown modality {modality!r}; expected one of {MODALITIES}")


def resample_linear(x: np.ndarray, n_out: int) -> np.ndarray:
    """Linear interpolation of ``x`` (..., n) onto ``n_out`` points spanning the same
    first-to-last sample range."""
    n = x.shape[-1]
    if n == n_out:
        return np.array(x, copy=True)
    pos = np.linspace(0.0, n - 1.0, n_out)
    lo = np.clip(np.floor(pos).astype(int), 0, n - 2)
    frac = pos - lo
    return x[..., lo] * (1.0 - frac) + x[..., lo + 1] * frac


def _crop_pad(x: np.ndarray, n_out: int) -> np.ndarray:
    n = x.shape[-1]
    if n >= n_out:
        start = (n - n_out) // 2
        return x[..., start:start + n_out].copy()
    out = np.zeros(x.shape[:-1] + (n_out,), dtype=x.dtype)
    start = (n_out - n) // 2
    out[..., start:start + n] = x
    return out


def _zscore(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return (x - mu) / np.where(sd > 1e-12, sd, 1.0)


def extract_epochs(rec: Recording, viseme_intervals, window_ms: int, modality: str,
                   sentence_id: int = 0, length_mode: str = "resample",
                   normalize: str = "zscore", stats: dict | None = None) -> list[LabeledTrial]:
    """One trial per (xmin, xmax, class) interval.

    Intervals shorter than two samples are dropped and counted in
    ``stats["skipped"]`` when a dict is passed.
    """
    if window_ms not in WINDOWS_MS:
        raise ValidationError(f"window_ms must be one of {WINDOWS_MS}, got {window_ms}")
    if length_mode not in ("resample", "crop_pad"):
        raise ValidationError(f"unknown length_mode {length_mode!r}")
    if normalize not in ("zscore", "none"):
        raise ValidationError(f"unknown normalize {normalize!r}")
    L = window_samples(window_ms, rec.fs)
    picks = modality_channels(rec, modality)
    if not picks:
        raise ValidationError(f"recording has no channels for modality {modality}")
    data = rec.data[picks]
    trials = []
    skipped = 0
    for k, (xmin, xmax, cls) in enumerate(viseme_intervals):
        if not 0 <= int(cls) < N_VISEMES:
            raise ValidationError(f"viseme class {cls} out of range")
        i0 = int(round(xmin * rec.fs))
        i1 = int(round(xmax * rec.fs))
        if i0 < 0 or i1 > rec.n_samples or xmin > xmax:
            raise ValidationError(
                f"interval {k} [{xmin}, {xmax}) s lies outside the recording (0, {rec.duration_s}) s"
            )
        if i1 - i0 < 2:
            skipped += 1
            continue
        seg = data[:, i0:i1]
        seg = resample_linear(seg, L) if length_mode == "resample" else _crop_pad(seg, L)
        if normalize == "zscore":
            seg = _zscore(seg)
        trials.append(LabeledTrial(seg.astype(np.float32), int(cls), int(sentence_id), k, int(window_ms),
                                   (float(xmin), float(xmax))))
    if skipped:
        log.warning("sentence %s: skipped %d interval(s) shorter than 2 samples", sentence_id, skipped)
    if stats is not None:
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return trials


@dataclass
class TrialSet:
    """Stacked trials of one (window, modality) configuration."""

    data: np.ndarray  # (n, channels, L) float32
    labels: np.ndarray
    sentence_ids: np.ndarray
    interval_index: np.ndarray
    spans: np.ndarray  # (n, 2) seconds
    fs: float
    window_ms: int
    modality: str
    channel_names: list[str]
    channel_roles: list[str]
    seed: int = 0
    normalize: str = "zscore"
    split: dict | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sentence_ids = np.asarray(self.sentence_ids, dtype=np.int64)
        self.interval_index = np.asarray(self.interval_index, dtype=np.int64)
        self.spans = np.asarray(self.spans, dtype=np.float64).reshape(-1, 2)
        self.validate()

    def __len__(self):
        return len(self.labels)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def length(self) -> int:
        return window_samples(self.window_ms, self.fs)

    def validate(self):
        n = len(self.labels)
        if self.data.shape != (n, self.n_channels, self.length):
            raise IntegrityError(
                f"trial tensor shape {self.data.shape} != ({n}, {self.n_channels}, {self.length})"
            )
        for name, arr in (("sentence_ids", self.sentence_ids), ("interval_index", self.interval_index),
                          ("spans", self.spans)):
            if len(arr) != n:
                raise IntegrityError(f"{name} has {len(arr)} entries for {n} trials")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_VISEMES):
            raise IntegrityError("labels outside 0..14")
        if not np.all(np.isfinite(self.data)):
            raise IntegrityError("trial data contains non-finite values")
        if self.split is not None:
            train, test = set(self.split.get("train", [])), set(self.split.get("test", []))
            if train & test:
                raise IntegrityError(f"sentences in both partitions: {sorted(train & test)}")

    @classmethod
    def from_trials(cls, trials, fs, window_ms, modality, channel_names, channel_roles, **kw) -> "TrialSet":
        L = window_samples(window_ms, fs)
        trials = list(trials)
        for t in trials:
            if t.window_ms != window_ms or t.data.shape[-1] != L:
                raise ValidationError(f"trial window {t.window_ms} ms does not match {window_ms} ms")
        data = (np.stack([t.data for t in trials]) if trials
                else np.zeros((0, len(channel_names), L), np.float32))
        return cls(
            data=data,
            labels=[t.label for t in trials],
            sentence_ids=[t.sentence_id for t in trials],
            interval_index=[t.interval_index for t in trials],
            spans=[t.source_span for t in trials] or np.zeros((0, 2)),
            fs=fs, window_ms=window_ms, modality=modality,
            channel_names=list(channel_names), channel_roles=list(channel_roles), **kw,
        )

    def subset(self, mask) -> "TrialSet":
        mask = np.asarray(mask)
        return TrialSet(self.data[mask], self.labels[mask], self.sentence_ids[mask],
                        self.interval_index[mask], self.spans[mask], self.fs, self.window_ms,
                        self.modality, list(self.channel_names), list(self.channel_roles),
                        self.seed, self.normalize, self.split)

    def trials(self):
        for i in range(len(self)):
            yield LabeledTrial(self.data[i], int(self.labels[i]), int(self.sentence_ids[i]),
                               int(self.interval_index[i]), self.window_ms, tuple(self.spans[i]))

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "fs": self.fs,
            "window_ms": self.window_ms,
            "modality": self.modality,
            "channels": [{"name": n, "role": r} for n, r in zip(self.channel_names, self.channel_roles)],
            "n_trials": len(self),
            "length": self.length,
            "seed": self.seed,
            "normalize": self.normalize,
            "split": self.split,
            "trials": {
                "label": self.labels.tolist(),
                "sentence_id": self.sentence_ids.tolist(),
                "interval_index": self.interval_index.tolist(),
                "span": self.spans.tolist(),
            },
        }


def split_by_sentence(ds: TrialSet, n_test_sentences: int, seed: int = 0) -> tuple[TrialSet, TrialSet]:
    """Hold out ``n_test_sentences`` whole sentences, chosen by a seeded draw."""
    ids = np.unique(ds.sentence_ids)
    if n_test_sentences < 0:
        raise ValidationError("n_test_sentences must be >= 0")
    if n_test_sentences and n_test_sentences >= len(ids):
        raise ValidationError(
            f"cannot hold out {n_test_sentences} of {len(ids)} sentences; at least one must train"
        )
    rng = np.random.default_rng(seed)
    test_ids = np.sort(rng.choice(ids, size=n_test_sentences, replace=False)) if n_test_sentences else ids[:0]
    train_ids = np.setdiff1d(ids, test_ids)
    split = {"train": train_ids.tolist(), "test": test_ids.tolist()}
    is_test = np.isin(ds.sentence_ids, test_ids)
    train, test = ds.subset(~is_test), ds.subset(is_test)
    train.split = test.split = split
    return train, test


def save_dataset(ds: TrialSet, path) -> Path:
    """Write ``trials.f32`` (little-endian float32 blob) and ``manifest.json`` into ``path``."""
    ds.validate()
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.f32").write_bytes(ds.data.astype("<f4").tobytes())
    (out / "manifest.json").write_text(json.dumps(ds.manifest()) + "\n", encoding="utf-8")
    return out


def load_dataset(path) -> TrialSet:
    path = Path(path)
    try:
        m = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        blob = (path / "trials.f32").read_bytes()
    except ValueError as exc:
        raise IntegrityError(f"{path}: corrupt manifest: {exc}") from exc
    try:
        if m["format_version"] != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported dataset format {m['format_version']}")
        n, L = int(m["n_trials"]), int(m["length"])
        chans = m["channels"]
        meta = m["trials"]
    except (KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: manifest missing field {exc}") from None
    expected = n * len(chans) * L * 4
    if len(blob) != expected:
        raise IntegrityError(f"{path}: manifest declares {n} trials ({expected} bytes), blob has {len(blob)}")
    if any(len(meta[k]) != n for k in ("label", "sentence_id", "interval_index", "span")):
        raise IntegrityError(f"{path}: per-trial metadata does not match n_trials={n}")
    data = np.frombuffer(blob, dtype="<f4").reshape(n, len(chans), L)
    ds = TrialSet(
        data=data, labels=meta["label"], sentence_ids=meta["sentence_id"],
        interval_index=meta["interval_index"], spans=np.asarray(meta["span"], dtype=np.float64).reshape(-1, 2),
        fs=float(m["fs"]), window_ms=int(m["window_ms"]), modality=m["modality"],
        channel_names=[c["name"] for c in chans], channel_roles=[c["role"] for c in chans],
        seed=int(m["seed"]), normalize=m.get("normalize", "zscore"), split=m.get("split"),
    )
    if ds.length != L:
        raise IntegrityError(f"{path}: length {L} does not match {ds.window_ms} ms at {ds.fs} Hz")
    return ds
