"""Praat TextGrid phoneme tiers and the 15-class viseme alphabet."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, UnmappedPhonemeError, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "ARPABET",
    "SILENCE",
    "N_VISEMES",
    "VISEME_GROUPS",
    "PhonemeInterval",
    "PhonemeTier",
    "VisemeMap",
    "DEFAULT_MAP",
    "normalize_phoneme",
    "parse_textgrid",
    "write_textgrid",
    "phoneme_to_viseme",
    "tier_to_viseme_intervals",
]

ARPABET = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
SILENCE = "sil"
N_VISEMES = 15

# class id -> phonemes; 0 is neutral / silence
VISEME_GROUPS = {
    0: ("sil",),
    1: ("P", "B", "M"),
    2: ("F", "V"),
    3: ("TH", "DH"),
    4: ("T", "D"),
    5: ("K", "G", "NG", "HH"),
    6: ("CH", "JH", "SH", "ZH"),
    7: ("S", "Z"),
    8: ("N", "L"),
    9: ("R", "ER"),
    10: ("AA", "AH", "AY", "AW"),
    11: ("EH", "EY", "AE"),
    12: ("IY", "IH", "Y"),
    13: ("AO", "OW", "OY"),
    14: ("UW", "UH", "W"),
}

_SILENCE_TOKENS = {"", "SIL", "SP", "SPN"}
_STRESS = re.compile(r"^([A-Z]+)[012]$")


def normalize_phoneme(label: str) -> str:
    """Upper-case, strip stress digits, fold silence/pause tokens to ``sil``."""
    s = str(label).strip().upper()
    if s in _SILENCE_TOKENS:
        return SILENCE
    m = _STRESS.match(s)
    return m.group(1) if m else s


@dataclass(frozen=True)
class PhonemeInterval:
    xmin: float
    xmax: float
    label: str

    def __post_init__(self):
        if not self.xmin < self.xmax:
            raise ValidationError(f"interval {self.label!r} has xmin {self.xmin} >= xmax {self.xmax}")
        if not self.label:
            raise ValidationError("interval label is empty")

    @property
    def duration(self) -> float:
        return self.xmax - self.xmin


@dataclass(frozen=True)
class PhonemeTier:
    name: str
    intervals: tuple[PhonemeInterval, ...] = ()
    xmin: float = 0.0
    xmax: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))
        if self.xmax is None:
            object.__setattr__(self, "xmax", self.intervals[-1].xmax if self.intervals else self.xmin)
        if self.xmax < self.xmin:
            raise ValidationError(f"tier {self.name!r} span is inverted")
        prev = self.xmin
        for iv in self.intervals:
            if iv.xmin < prev - 1e-9:
                raise ValidationError(
                    f"tier {self.name!r}: interval {iv.label!r} at {iv.xmin} overlaps or is out of order"
                )
            prev = iv.xmax
        if self.intervals and self.intervals[-1].xmax > self.xmax + 1e-9:
            raise ValidationError(f"tier {self.name!r}: intervals extend past the tier span")

    @property
    def labels(self) -> list[str]:
        return [iv.label for iv in self.intervals]


class VisemeMap:
    """Phoneme -> viseme class lookup, checked for totality and surjectivity."""

    def __init__(self, mapping: dict[str, int]):
        table = {}
        for ph, cls in mapping.items():
            key = normalize_phoneme(ph)
            if isinstance(cls, bool) or not isinstance(cls, int):
                raise ValidationError(f"viseme class for {ph!r} must be an integer, got {cls!r}")
            if key in table and table[key] != cls:
                raise ValidationError(f"phoneme {ph!r} mapped to two classes")
            table[key] = cls
        missing = [p for p in (*ARPABET, SILENCE) if p not in table]
        if missing:
            raise ValidationError(f"viseme map is not total; missing {missing}")
        bad = sorted({c for c in table.values() if not 0 <= c < N_VISEMES})
        if bad:
            raise ValidationError(f"viseme classes out of range: {bad}")
        unused = sorted(set(range(N_VISEMES)) - set(table.values()))
        if unused:
            raise ValidationError(f"viseme map is not surjective; classes {unused} have no phoneme")
        self._table = table

    @classmethod
    def from_groups(cls, groups: dict[int, tuple[str, ...]]) -> "VisemeMap":
        return cls({ph: c for c, phones in groups.items() for ph in phones})

    @classmethod
    def from_json(cls, path) -> "VisemeMap":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ParseError(f"unreadable viseme map: {exc}", path) from exc
        if not isinstance(raw, dict):
            raise ParseError("viseme map must be a JSON object {phoneme: class_id}", path)
        return cls(raw)

    def to_dict(self) -> dict[str, int]:
        return dict(self._table)

    def __getitem__(self, label: str) -> int:
        key = normalize_phoneme(label)
        try:
            return self._table[key]
        except KeyError:
            raise UnmappedPhonemeError([label]) from None

    def __contains__(self, label) -> bool:
        return normalize_phoneme(label) in self._table

    def __eq__(self, other):
        return isinstance(other, VisemeMap) and self._table == other._table

    def phonemes_of(self, cls: int) -> list[str]:
        return sorted(p for p, c in self._table.items() if c == cls)


DEFAULT_MAP = VisemeMap.from_groups(VISEME_GROUPS)


def phoneme_to_viseme(p: str, m: VisemeMap = DEFAULT_MAP) -> int:
    return m[p]


def tier_to_viseme_intervals(t: PhonemeTier, m: VisemeMap = DEFAULT_MAP) -> list[tuple[float, float, int]]:
    """Relabel every interval with its viseme class; neighbours are never merged."""
    unknown = [iv.label for iv in t.intervals if iv.label not in m]
    if unknown:
        raise UnmappedPhonemeError(dict.fromkeys(unknown))
    return [(iv.xmin, iv.xmax, m[iv.label]) for iv in t.intervals]


# --- TextGrid I/O -----------------------------------------------------------

_KV = re.compile(r"^\s*([A-Za-z ]+?)\s*=\s*(.*?)\s*$")
_ITEM = re.compile(r"^\s*(item|intervals|points)\s*\[(\d*)\]\s*:\s*$")
_SIZE = re.compile(r"^\s*(intervals|points)\s*:\s*size\s*=\s*(\d+)\s*$")


def _records(text: str, path):
    """Yield (lineno, key, value) triples; quoted values may span lines."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        lineno = i + 1
        i += 1
        s = raw.strip()
        if not s or s.startswith("!"):
            continue
        m = _ITEM.match(s)
        if m:
            yield lineno, f"{m.group(1)}[]", m.group(2)
            continue
        m = _SIZE.match(s)
        if m:
            yield lineno, f"{m.group(1)}:size", m.group(2)
            continue
        if s.startswith("tiers?"):
            yield lineno, "tiers?", s[6:].strip()
            continue
        m = _KV.match(s)
        if not m:
            raise ParseError(f"unrecognised line {s!r}", path, lineno)
        key, value = m.group(1).strip(), m.group(2)
        if value.startswith('"'):
            # a string ends at a quote not followed by another quote
            buf = value
            while not _string_closed(buf):
                if i >= len(lines):
                    raise ParseError("unterminated string", path, lineno)
                buf += "\n" + lines[i]
                i += 1
            value = buf
        yield lineno, key, value


def _string_closed(buf: str) -> bool:
    body = buf[1:]
    j = 0
    while j < len(body):
        if body[j] == '"':
            if j + 1 < len(body) and body[j + 1] == '"':
                j += 2
                continue
            return body[j + 1:].strip() == ""
        j += 1
    return False


def _unquote(value: str, path, lineno) -> str:
    if len(value) < 2 or value[0] != '"' or value[-1] != '"':
        raise ParseError(f"expected a quoted string, got {value!r}", path, lineno)
    return value[1:-1].replace('""', '"')


def _quote(text: str) -> str:
    return '"' + text.replace('"', '""') + '"'


class _Cursor:
    def __init__(self, records, path):
        self.records = list(records)
        self.pos = 0
        self.path = path

    def peek(self):
        return self.records[self.pos] if self.pos < len(self.records) else (None, None, None)

    def take(self, key):
        lineno, k, v = self.peek()
        if k != key:
            where = lineno if lineno is not None else (self.records[-1][0] if self.records else 1)
            raise ParseError(f"expected {key!r}, found {k!r}", self.path, where)
        self.pos += 1
        return lineno, v

    def number(self, key):
        lineno, v = self.take(key)
        try:
            return float(v)
        except ValueError:
            raise ParseError(f"{key} is not a number: {v!r}", self.path, lineno) from None

    def integer(self, key):
        lineno, v = self.take(key)
        try:
            return int(v)
        except ValueError:
            raise ParseError(f"{key} is not an integer: {v!r}", self.path, lineno) from None

    def string(self, key):
        lineno, v = self.take(key)
        return _unquote(v, self.path, lineno)


def parse_textgrid(path, normalize: bool = True) -> list[PhonemeTier]:
    """Interval tiers of a long-form TextGrid; point tiers are skipped."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read TextGrid: {exc}", path) from exc
    if raw.startswith((b"\xff\xfe", b"\xfe\xff")):  # Praat writes UTF-16 for non-ASCII labels
        text = raw.decode("utf-16", errors="replace")
    else:
        try:
            text = raw.decode("utf-8-sig")
        except UnicodeDecodeError:
            text = raw.decode("latin-1")
    return parse_textgrid_text(text, path, normalize)


def parse_textgrid_text(text: str, path="<string>", normalize: bool = True) -> list[PhonemeTier]:
    cur = _Cursor(_records(text, path), path)
    if cur.string("File type") != "ooTextFile":
        raise ParseError("not an ooTextFile", path, 1)
    if cur.string("Object class") != "TextGrid":
        raise ParseError("object class is not TextGrid", path, 2)
    lineno, k, _ = cur.peek()
    if k != "xmin":
        raise ParseError("short-form TextGrids are not supported", path, lineno or 3)
    cur.number("xmin")
    cur.number("xmax")
    lineno, exists = cur.take("tiers?")
    if exists != "<exists>":
        return []
    n_tiers = cur.integer("size")
    cur.take("item[]")
    tiers = []
    for expected in range(1, n_tiers + 1):
        lineno, idx = cur.take("item[]")
        if idx != str(expected):
            raise ParseError(f"expected item [{expected}], got [{idx}]", path, lineno)
        cls_line, _ = cur.peek()[:2]
        tier_class = cur.string("class")
        name = cur.string("name")
        txmin, txmax = cur.number("xmin"), cur.number("xmax")
        if tier_class == "IntervalTier":
            n = cur.integer("intervals:size")
            intervals = []
            for j in range(1, n + 1):
                lineno, idx = cur.take("intervals[]")
                if idx != str(j):
                    raise ParseError(f"expected intervals [{j}], got [{idx}]", path, lineno)
                xmin, xmax = cur.number("xmin"), cur.number("xmax")
                tl, _ = cur.peek()[:2]
                label = cur.string("text")
                if xmax < xmin:
                    raise ValidationError(f"{path}:{lineno}: interval xmax {xmax} < xmin {xmin}")
                if normalize:
                    label = normalize_phoneme(label)
                try:
                    intervals.append(PhonemeInterval(xmin, xmax, label))
                except ValidationError as exc:
                    raise ValidationError(f"{path}:{lineno}: {exc}") from None
            try:
                tiers.append(PhonemeTier(name, tuple(intervals), txmin, txmax))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{cls_line}: {exc}") from None
        elif tier_class == "TextTier":
            n = cur.integer("points:size")
            for j in range(1, n + 1):
                cur.take("points[]")
                lineno, k, _ = cur.peek()
                cur.number("number" if k == "number" else "time")
                cur.string("mark")
            log.warning("%s: skipping point tier %r", path, name)
        else:
            raise ParseError(f"unknown tier class {tier_class!r}", path, cls_line)
    lineno, k, _ = cur.peek()
    if k is not None:
        raise ParseError(f"unexpected trailing content {k!r}", path, lineno)
    return tiers


def format_textgrid(tiers) -> str:
    tiers = list(tiers)
    for t in tiers:
        if not isinstance(t, PhonemeTier):
            raise ValidationError("write_textgrid expects PhonemeTier objects")
        PhonemeTier(t.name, t.intervals, t.xmin, t.xmax)  # re-validate
    xmin = min((t.xmin for t in tiers), default=0.0)
    xmax = max((t.xmax for t in tiers), default=0.0)
    out = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        f"xmin = {xmin!r}",
        f"xmax = {xmax!r}",
    ]
    if not tiers:
        out.append("tiers? <absent>")
        return "\n".join(out) + "\n"
    out += ["tiers? <exists>", f"size = {len(tiers)}", "item []:"]
    for i, t in enumerate(tiers, start=1):
        out += [
            f"    item [{i}]:",
            '        class = "IntervalTier"',
            f"        name = {_quote(t.name)}",
            f"        xmin = {float(t.xmin)!r}",
            f"        xmax = {float(t.xmax)!r}",
            f"        intervals: size = {len(t.intervals)}",
        ]
        for j, iv in enumerate(t.intervals, start=1):
            out += [
                f"        intervals [{j}]:",
                f"            xmin = {float(iv.xmin)!r}",
                f"            xmax = {float(iv.xmax)!r}",
                f"            text = {_quote(iv.label)}",
            ]
    return "\n".join(out) + "\n"


def write_textgrid(tiers, path) -> None:
    text = format_textgrid(tiers)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
