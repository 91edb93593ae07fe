"""BrainVision (.vhdr/.vmrk/.eeg) recordings and channel-role bookkeeping.

Only multiplexed INT_16 and IEEE_FLOAT_32 binaries are handled, which covers
what Brain Vision Recorder writes by default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ParseError, UnsupportedFormatError, ValidationError

__all__ = [
    "Role",
    "ChannelMeta",
    "Marker",
    "Recording",
    "read_brainvision",
    "write_brainvision",
    "default_roles",
    "N_EMG_CHANNELS",
]

#: EMG electrodes placed around the mouth in the reference montage.
N_EMG_CHANNELS = 10

_HEADER_IDS = (
    "Brain Vision Data Exchange Header File Version 1.0",
    "BrainVision Data Exchange Header File Version 1.0",
    "BrainVision Data Exchange Header File Version 2.0",
)
_MARKER_IDS = (
    "Brain Vision Data Exchange Marker File, Version 1.0",
    "Brain Vision Data Exchange Marker File Version 1.0",
    "BrainVision Data Exchange Marker File Version 1.0",
    "BrainVision Data Exchange Marker File Version 2.0",
)
_DTYPES = {"INT_16": np.dtype("<i2"), "IEEE_FLOAT_32": np.dtype("<f4")}


class Role(str, Enum):
    EEG = "EEG"
    EMG = "EMG"
    REFERENCE = "REFERENCE"


@dataclass(frozen=True)
class ChannelMeta:
    name: str
    role: Role
    resolution: float = 1.0  # µV per stored count
    index: int = 0


@dataclass(frozen=True)
class Marker:
    type: str
    description: str
    position: int  # 0-based sample index
    length: int = 1
    channel: int = 0


@dataclass(frozen=True)
class Recording:
    """Multichannel recording in µV, shape ``(n_channels, n_samples)``."""

    channels: tuple[ChannelMeta, ...]
    fs: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError(f"recording data must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        data.setflags(write=False)
        self.validate()

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.channels]

    def indices(self, *roles: Role) -> list[int]:
        return [c.index for c in self.channels if c.role in roles]

    def validate(self) -> None:
        if not self.channels:
            raise ValidationError("recording has no channels")
        if not (np.isfinite(self.fs) and self.fs > 0):
            raise ValidationError(f"sampling rate must be positive, got {self.fs}")
        if self.data.shape[0] != len(self.channels):
            raise ValidationError(
                f"{len(self.channels)} channels declared but data has {self.data.shape[0]} rows"
            )
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValidationError("channel names must be unique")
        if sum(c.role == Role.REFERENCE for c in self.channels) > 1:
            raise ValidationError("at most one REFERENCE channel is permitted")
        for i, c in enumerate(self.channels):
            if c.index != i:
                raise ValidationError(f"channel {c.name!r} has index {c.index}, expected {i}")
        if not np.all(np.isfinite(self.data)):
            raise IntegrityError("recording contains non-finite samples")

    def with_data(self, data: np.ndarray) -> "Recording":
        return Recording(self.channels, self.fs, data)


def default_roles(names: list[str]) -> dict[str, Role]:
    """Role layout when no sidecar exists: EEG block (last one is the
    reference) followed by the EMG block."""
    n = len(names)
    if n <= N_EMG_CHANNELS:
        return {name: Role.EEG for name in names}
    n_eeg = n - N_EMG_CHANNELS
    roles = {}
    for i, name in enumerate(names):
        if i < n_eeg - 1:
            roles[name] = Role.EEG
        elif i == n_eeg - 1:
            roles[name] = Role.REFERENCE
        else:
            roles[name] = Role.EMG
    return roles


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def _read_ini(path: Path, accepted_ids) -> dict[str, list[tuple[int, str, str]]]:
    """Parse a BrainVision INI-like file into {section: [(line, key, value)]}."""
    try:
        text = _decode(path.read_bytes())
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    lines = text.splitlines()
    if not lines or lines[0].lstrip("﻿").strip() not in accepted_ids:
        raise ParseError("missing or unknown identification line", path, 1)
    sections: dict[str, list[tuple[int, str, str]]] = {}
    current = None
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith(";"):
            continue
        if s.startswith("["):
            if not s.endswith("]") or len(s) < 3:
                raise ParseError(f"malformed section header {s!r}", path, lineno)
            current = s[1:-1]
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ParseError(f"entry outside any section: {s!r}", path, lineno)
        key, sep, value = s.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"malformed key/value line {s!r}", path, lineno)
        sections[current].append((lineno, key.strip(), value))
    return sections


def _lookup(sections, section, key, path, required=True):
    for lineno, k, v in sections.get(section, []):
        if k == key:
            return lineno, v.strip()
    if required:
        raise ParseError(f"[{section}] lacks required key {key!r}", path)
    return None, None


def _to_number(value, kind, path, lineno, what):
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ParseError(f"{what} is not a valid number: {value!r}", path, lineno) from None
    if isinstance(out, float) and not np.isfinite(out):
        raise ParseError(f"{what} is not finite: {value!r}", path, lineno)
    return out


def _read_roles(sidecar: Path, names: list[str]) -> dict[str, Role]:
    try:
        mapping = json.loads(_decode(sidecar.read_bytes()))
    except (OSError, ValueError) as exc:
        raise ParseError(f"unreadable role sidecar: {exc}", sidecar) from exc
    if not isinstance(mapping, dict):
        raise ParseError("role sidecar must be a JSON object", sidecar)
    missing = [n for n in names if n not in mapping]
    if missing:
        raise ParseError(f"role sidecar lacks channels {missing}", sidecar)
    try:
        return {n: Role(str(mapping[n]).upper()) for n in names}
    except ValueError as exc:
        raise ParseError(f"unknown channel role: {exc}", sidecar) from None


def _unescape(text: str) -> str:
    return text.replace("\\1", ",")


def _read_markers(path: Path, n_samples: int) -> list[Marker]:
    sections = _read_ini(path, _MARKER_IDS)
    markers = []
    last = -1
    for lineno, key, value in sections.get("Marker Infos", []):
        if not key.startswith("Mk"):
            raise ParseError(f"unexpected marker key {key!r}", path, lineno)
        fields = value.split(",")
        if len(fields) < 4:
            raise ParseError(f"marker needs at least 4 fields, got {len(fields)}", path, lineno)
        pos = _to_number(fields[2], int, path, lineno, "marker position")
        length = _to_number(fields[3] or "1", int, path, lineno, "marker length")
        channel = _to_number(fields[4] or "0", int, path, lineno, "marker channel") if len(fields) > 4 else 0
        pos -= 1  # positions are 1-based on disk
        if pos < 0 or pos >= max(n_samples, 1) or pos < last:
            raise ParseError(f"marker position {pos + 1} out of order or range", path, lineno)
        last = pos
        markers.append(Marker(_unescape(fields[0]), _unescape(fields[1]), pos, length, channel))
    return markers


def read_brainvision(header_path) -> tuple[Recording, list[Marker]]:
    """Load a BrainVision triple; samples are scaled to µV by channel resolution.

    Channel roles come from ``<base>.roles.json`` when present, otherwise
    from :func:`default_roles`.
    """
    header_path = Path(header_path)
    sections = _read_ini(header_path, _HEADER_IDS)
    directory = header_path.parent

    _, data_file = _lookup(sections, "Common Infos", "DataFile", header_path)
    _, marker_file = _lookup(sections, "Common Infos", "MarkerFile", header_path, required=False)
    ln, fmt = _lookup(sections, "Common Infos", "DataFormat", header_path, required=False)
    if fmt is not None and fmt.upper() != "BINARY":
        raise UnsupportedFormatError(f"{header_path}:{ln}: DataFormat {fmt!r} not supported")
    ln, orient = _lookup(sections, "Common Infos", "DataOrientation", header_path, required=False)
    if orient is not None and orient.upper() != "MULTIPLEXED":
        raise UnsupportedFormatError(f"{header_path}:{ln}: DataOrientation {orient!r} not supported")
    ln, nch = _lookup(sections, "Common Infos", "NumberOfChannels", header_path)
    n_channels = _to_number(nch, int, header_path, ln, "NumberOfChannels")
    if n_channels <= 0:
        raise ParseError("NumberOfChannels must be positive", header_path, ln)
    ln, interval = _lookup(sections, "Common Infos", "SamplingInterval", header_path)
    interval_us = _to_number(interval, float, header_path, ln, "SamplingInterval")
    if interval_us <= 0:
        raise ParseError("SamplingInterval must be positive", header_path, ln)
    ln_dp, dp = _lookup(sections, "Common Infos", "DataPoints", header_path, required=False)
    ln, binfmt = _lookup(sections, "Binary Infos", "BinaryFormat", header_path)
    if binfmt.upper() not in _DTYPES:
        raise UnsupportedFormatError(f"{header_path}:{ln}: BinaryFormat {binfmt!r} not supported")
    dtype = _DTYPES[binfmt.upper()]

    entries = sections.get("Channel Infos", [])
    if len(entries) != n_channels:
        raise IntegrityError(
            f"{header_path}: NumberOfChannels={n_channels} but {len(entries)} channel entries"
        )
    names, resolutions = [], []
    for i, (lineno, key, value) in enumerate(entries):
        if key != f"Ch{i + 1}":
            raise ParseError(f"expected Ch{i + 1}, found {key!r}", header_path, lineno)
        fields = value.split(",")
        if not fields[0]:
            raise ParseError("channel name is empty", header_path, lineno)
        res = fields[2] if len(fields) > 2 and fields[2].strip() else "1"
        resolution = _to_number(res, float, header_path, lineno, "channel resolution")
        if resolution == 0:
            raise ParseError("channel resolution must be non-zero", header_path, lineno)
        names.append(_unescape(fields[0]))
        resolutions.append(resolution)
    if len(set(names)) != len(names):
        raise ParseError("duplicate channel names", header_path)

    eeg_path = directory / data_file
    try:
        raw = eeg_path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read data file: {exc}", eeg_path) from exc
    frame = n_channels * dtype.itemsize
    if dp is not None:
        n_points = _to_number(dp, int, header_path, ln_dp, "DataPoints")
        if n_points < 0 or len(raw) != n_points * frame:
            raise IntegrityError(
                f"{eeg_path}: expected {n_points} x {n_channels} samples "
                f"({n_points * frame} bytes), file has {len(raw)} bytes"
            )
    elif len(raw) % frame:
        raise IntegrityError(
            f"{eeg_path}: {len(raw)} bytes is not a whole number of {n_channels}-channel frames"
        )
    counts = np.frombuffer(raw, dtype=dtype).reshape(-1, n_channels).T
    data = counts.astype(np.float64) * np.asarray(resolutions)[:, None]
    if not np.all(np.isfinite(data)):
        raise IntegrityError(f"{eeg_path}: data contains NaN or Inf")

    sidecar = header_path.with_suffix(".roles.json")
    roles = _read_roles(sidecar, names) if sidecar.exists() else default_roles(names)
    channels = [ChannelMeta(n, roles[n], r, i) for i, (n, r) in enumerate(zip(names, resolutions))]
    fs = 1e6 / interval_us
    if abs(fs - round(fs)) <= 1e-9 * fs:
        fs = float(round(fs))  # undo the microsecond round trip for integer rates
    try:
        rec = Recording(channels, fs, data)
    except IntegrityError:
        raise
    except ValidationError as exc:  # e.g. two REFERENCE roles in the sidecar
        raise IntegrityError(f"{header_path}: {exc}") from None

    markers = []
    if marker_file:
        markers = _read_markers(directory / marker_file, rec.n_samples)
    return rec, markers


def _escape(text: str) -> str:
    return str(text).replace(",", "\\1")


def write_brainvision(rec: Recording, markers, base_path, binary_format="IEEE_FLOAT_32",
                      write_roles=True) -> Path:
    """Write ``base_path`` + .vhdr/.vmrk/.eeg (and a .roles.json sidecar).

    Returns the header path.
    """
    if not isinstance(rec, Recording):
        raise ValidationError("write_brainvision expects a Recording")
    rec.validate()
    binary_format = binary_format.upper()
    if binary_format not in _DTYPES:
        raise UnsupportedFormatError(f"BinaryFormat {binary_format!r} not supported")
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    stem = base.name
    vhdr, vmrk, eeg = (base.with_name(stem + ext) for ext in (".vhdr", ".vmrk", ".eeg"))

    res = np.array([c.resolution for c in rec.channels])[:, None]
    scaled = rec.data / res
    if binary_format == "INT_16":
        counts = np.rint(scaled)
        if counts.min(initial=0) < -32768 or counts.max(initial=0) > 32767:
            raise ValidationError("data exceeds INT_16 range at the given resolutions")
    else:
        counts = scaled
    blob = np.ascontiguousarray(counts.T.astype(_DTYPES[binary_format])).tobytes()

    lines = [
        _HEADER_IDS[0],
        "",
        "[Common Infos]",
        "Codepage=UTF-8",
        f"DataFile={eeg.name}",
        f"MarkerFile={vmrk.name}",
        "DataFormat=BINARY",
        "DataOrientation=MULTIPLEXED",
        f"NumberOfChannels={rec.n_channels}",
        f"DataPoints={rec.n_samples}",
        "; Sampling interval in microseconds",
        f"SamplingInterval={repr(1e6 / rec.fs)}",
        "",
        "[Binary Infos]",
        f"BinaryFormat={binary_format}",
        "",
        "[Channel Infos]",
        "; Ch<n>=<Name>,<Reference channel name>,<Resolution in µV>,<Unit>",
    ]
    for i, c in enumerate(rec.channels):
        lines.append(f"Ch{i + 1}={_escape(c.name)},,{repr(float(c.resolution))},µV")

    mlines = [
        _MARKER_IDS[0],
        "",
        "[Common Infos]",
        "Codepage=UTF-8",
        f"DataFile={eeg.name}",
        "",
        "[Marker Infos]",
        "; Mk<n>=<Type>,<Description>,<Position>,<Size>,<Channel>",
    ]
    for i, m in enumerate(markers or []):
        mlines.append(
            f"Mk{i + 1}={_escape(m.type)},{_escape(m.description)},{m.position + 1},{m.length},{m.channel}"
        )

    eeg.write_bytes(blob)
    vhdr.write_text("\n".join(lines) + "\n", encoding="utf-8")
    vmrk.write_text("\n".join(mlines) + "\n", encoding="utf-8")
    if write_roles:
        roles = {c.name: c.role.value for c in rec.channels}
        base.with_name(stem + ".roles.json").write_text(json.dumps(roles, indent=1), encoding="utf-8")
    return vhdr


def markers_valid(markers, n_samples) -> bool:
    positions = [m.position for m in markers]
    return all(0 <= p < n_samples for p in positions) and positions == sorted(positions)


def read_dir(directory) -> dict[str, tuple[Recording, list[Marker]]]:
    """Every recording in ``directory``, keyed by file stem."""
    out = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".vhdr"):
            out[name[:-5]] = read_brainvision(Path(directory) / name)
    return out
