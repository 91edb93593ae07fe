"""Viseme sequences to sentences: edit-distance matching and an LSTM classifier
over a closed sentence catalog."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_sequence

from .alignment import N_VISEMES
from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "VisemeSequence",
    "CatalogEntry",
    "SentenceCatalog",
    "MatchResult",
    "assemble_sequence",
    "edit_distance",
    "match_closed_set",
    "corrupt",
    "SequenceConfig",
    "SequenceModel",
    "train_sequence_model",
    "infer_sentence",
]


@dataclass(frozen=True)
class VisemeSequence:
    labels: tuple[int, ...]
    sentence_id: int | None = None

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        bad = [x for x in labels if not 0 <= x < N_VISEMES]
        if bad:
            raise ValidationError(f"viseme labels out of range 0..{N_VISEMES - 1}: {bad}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)


def _seq(s) -> tuple[int, ...]:
    return s.labels if isinstance(s, VisemeSequence) else VisemeSequence(tuple(s)).labels


def assemble_sequence(labels, interval_index=None, sentence_id=None) -> VisemeSequence:
    """Order per-trial top-1 labels by interval index; no merging or smoothing."""
    labels = list(labels)
    if interval_index is not None:
        interval_index = list(interval_index)
        if len(interval_index) != len(labels):
            raise ValidationError("labels and interval indices differ in length")
        if len(set(interval_index)) != len(interval_index):
            raise ValidationError("duplicate interval indices")
        labels = [lab for _, lab in sorted(zip(interval_index, labels), key=lambda p: p[0])]
    return VisemeSequence(tuple(labels), sentence_id)


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = _seq(a), _seq(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class CatalogEntry:
    id: int
    text: str
    sequence: VisemeSequence


class SentenceCatalog:
    def __init__(self, entries):
        self.entries = sorted(entries, key=lambda e: e.id)
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("catalog sentence ids must be unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    def get(self, sentence_id: int) -> CatalogEntry:
        for e in self.entries:
            if e.id == sentence_id:
                return e
        raise KeyError(sentence_id)

    def subset(self, ids) -> "SentenceCatalog":
        keep = set(int(i) for i in ids)
        return SentenceCatalog([e for e in self.entries if e.id in keep])

    def duplicates(self) -> list[list[int]]:
        groups: dict[tuple, list[int]] = {}
        for e in self.entries:
            groups.setdefault(e.sequence.labels, []).append(e.id)
        return [g for g in groups.values() if len(g) > 1]

    @classmethod
    def from_records(cls, records) -> "SentenceCatalog":
        try:
            return cls([CatalogEntry(int(r["id"]), str(r.get("text", "")),
                                     VisemeSequence(tuple(r["viseme_sequence"]), int(r["id"])))
                        for r in records])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad catalog record: {exc}") from None

    def to_records(self) -> list[dict]:
        return [{"id": e.id, "text": e.text, "viseme_sequence": list(e.sequence.labels)} for e in self.entries]

    @classmethod
    def load(cls, path) -> "SentenceCatalog":
        try:
            records = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ParseError(f"catalog is not valid JSON: {exc}", path) from None
        if not isinstance(records, list):
            raise ParseError("catalog must be a JSON list", path)
        return cls.from_records(records)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class MatchResult:
    sentence_id: int
    distance: int
    margin: int  # runner-up distance minus best distance
    tied: tuple[int, ...] = ()  # other ids at the best distance


def match_closed_set(s, cat: SentenceCatalog) -> MatchResult:
    """Nearest catalog sentence by edit distance; ties go to the lower id."""
    seq = _seq(s)
    if not seq:
        raise ValidationError("cannot match an empty viseme sequence")
    if not len(cat):
        raise ValidationError("catalog is empty")
    scored = sorted(((edit_distance(seq, e.sequence), e.id) for e in cat), key=lambda p: (p[0], p[1]))
    best_d, best_id = scored[0]
    runner = scored[1][0] if len(scored) > 1 else best_d
    tied = tuple(i for d, i in scored[1:] if d == best_d)
    return MatchResult(best_id, best_d, runner - best_d, tied)


def corrupt(seq, rate: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Replace each element with probability ``rate`` by a different class."""
    seq = np.array(_seq(seq), dtype=np.int64)
    hit = rng.random(len(seq)) < rate
    shift = rng.integers(1, N_VISEMES, size=len(seq))
    seq[hit] = (seq[hit] + shift[hit]) % N_VISEMES
    return tuple(int(x) for x in seq)


# --- recurrent reconstruction ---------------------------------------------------

@dataclass(frozen=True)
class SequenceConfig:
    hidden: int = 128
    embed: int = 32
    epochs: int = 30
    lr: float = 3e-3
    batch_size: int = 64
    corruption: float = 0.3
    copies: int = 10  # corrupted copies per sentence per epoch
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.embed < 1 or self.epochs < 1 or self.batch_size < 1 or self.copies < 0:
            raise ConfigError("sequence model sizes and counts must be positive")
        if not 0 <= self.corruption < 1:
            raise ConfigError("corruption rate must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sequence config keys: {sorted(unknown)}")
        return cls(**d)


class SequenceModel(nn.Module):
    """Embedding -> single-layer LSTM -> linear head on the final hidden state."""

    def __init__(self, sentence_ids, hidden=128, embed=32):
        super().__init__()
        self.sentence_ids = [int(i) for i in sentence_ids]
        self.embed = nn.Embedding(N_VISEMES, embed)
        self.lstm = nn.LSTM(embed, hidden, batch_first=True)
        self.head = nn.Linear(hidden, len(self.sentence_ids))

    def forward(self, seqs: list[tuple[int, ...]]) -> torch.Tensor:
        lengths = torch.tensor([len(s) for s in seqs])
        if torch.any(lengths == 0):
            raise ValidationError("cannot classify an empty viseme sequence")
        padded = pad_sequence([torch.tensor(s, dtype=torch.long) for s in seqs], batch_first=True)
        packed = pack_padded_sequence(self.embed(padded), lengths, batch_first=True, enforce_sorted=False)
        _, (h, _) = self.lstm(packed)
        return self.head(h[-1])


def train_sequence_model(cat: SentenceCatalog, cfg: SequenceConfig = SequenceConfig()) -> SequenceModel:
    """Fit the LSTM on clean catalog sequences plus substitution-corrupted copies."""
    if not len(cat):
        raise ValidationError("cannot train on an empty catalog")
    for group in cat.duplicates():
        log.warning("catalog sentences %s share a viseme sequence and cannot be separated", group)
    torch.manual_seed(cfg.seed)
    model = SequenceModel(cat.ids, cfg.hidden, cfg.embed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    clean = [e.sequence.labels for e in cat]
    targets = list(range(len(cat)))
    model.train()
    for _ in range(cfg.epochs):
        seqs, ys = list(clean), list(targets)
        for _ in range(cfg.copies):
            for s, y in zip(clean, targets):
                seqs.append(corrupt(s, cfg.corruption, rng))
                ys.append(y)
        order = rng.permutation(len(seqs))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = model([seqs[i] for i in idx])
            loss = nn.functional.cross_entropy(logits, torch.tensor([ys[i] for i in idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return model


@torch.no_grad()
def infer_sentence(model: SequenceModel, s) -> tuple[int, np.ndarray]:
    """(sentence id, posterior over catalog entries in model order)."""
    seq = _seq(s)
    if not seq:
        raise ValidationError("cannot infer a sentence from an empty sequence")
    logits = model([seq])[0].double()
    post = torch.softmax(logits, dim=0).numpy()
    return model.sentence_ids[int(np.argmax(post))], post


def save_sequence_model(model: SequenceModel, cfg: SequenceConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({"config": asdict(cfg), "sentence_ids": model.sentence_ids,
                "state": model.state_dict()}, path)


def load_sequence_model(path) -> SequenceModel:
    blob = torch.load(path, weights_only=True)
    cfg = SequenceConfig.from_dict(blob["config"])
    model = SequenceModel(blob["sentence_ids"], cfg.hidden, cfg.embed)
    model.load_state_dict(blob["state"])
    model.eval()
    return model
