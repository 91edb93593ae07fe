"""Stage functions behind the CLI.

Every stage reads the outputs of earlier stages from the work directory and
writes a versioned manifest next to its own outputs:

    raw/                        synth output (or your own BrainVision + TextGrid corpus)
    work/ingest/                manifest.json, catalog.json
    work/preprocessed/          filtered BrainVision files, manifest.json
    work/epochs/<cell>/         train/ and test/ trial sets
    work/models/<cell>.ckpt     decoder checkpoints
    work/predictions/<cell>.json
    work/eval/metrics.json
    work/reconstruct/reconstruction.json
    work/report.{txt,json,csv}

A *cell* is one (modality, window) pair, named like ``EEG_EMG_128``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import synth as synth_mod
from .alignment import DEFAULT_MAP, VisemeMap, parse_textgrid, tier_to_viseme_intervals, SILENCE
from .config import PipelineConfig
from .dataset import TrialSet, extract_epochs, modality_channels, load_dataset, save_dataset, split_by_sentence
from .decoder import load_checkpoint, predict, save_checkpoint, train as train_decoder
from .dsp import line_harmonics, preprocess_recording
from .errors import IntegrityError, StageMissingError, ValidationError
from .metrics import MetricsReport, compute_metrics, render_report
from .reconstruct import (SentenceCatalog, assemble_sequence, infer_sentence, match_closed_set,
                          save_sequence_model, train_sequence_model)
from .signal_io import read_brainvision, write_brainvision

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
STAGES = ("synth", "ingest", "preprocess", "epoch", "train", "predict", "eval", "reconstruct", "report")


def cell_name(modality: str, window_ms: int) -> str:
    return f"{modality}_{int(window_ms)}"


def _dump(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load(path: Path, stage: str, needed: str):
    if not path.exists():
        raise StageMissingError(stage, needed)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise IntegrityError(f"{path}: corrupt JSON ({exc}); rerun `viseme-decode {needed}`") from None


def _event(event: str, **fields):
    log.info(event, extra={"event": event, **fields})


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.raw = cfg.raw_dir
        self.root = cfg.work_dir

    ingest = property(lambda self: self.root / "ingest")
    preprocessed = property(lambda self: self.root / "preprocessed")
    epochs = property(lambda self: self.root / "epochs")
    models = property(lambda self: self.root / "models")
    predictions = property(lambda self: self.root / "predictions")
    eval = property(lambda self: self.root / "eval")
    reconstruct = property(lambda self: self.root / "reconstruct")

    def cell_dir(self, modality, window_ms) -> Path:
        return self.epochs / cell_name(modality, window_ms)

    def checkpoint(self, modality, window_ms) -> Path:
        return self.models / f"{cell_name(modality, window_ms)}.ckpt"

    def prediction(self, modality, window_ms) -> Path:
        return self.predictions / f"{cell_name(modality, window_ms)}.json"


# --- stages ---------------------------------------------------------------------

def run_synth(cfg: PipelineConfig, out_dir=None, synth_cfg=None) -> Path:
    scfg = synth_cfg or cfg.synth_config()
    out = Path(out_dir) if out_dir is not None else cfg.raw_dir
    synth_mod.emit(scfg, out)
    _event("synth_done", out=str(out), n_sentences=scfg.n_sentences)
    return out


def _viseme_map(cfg: PipelineConfig) -> VisemeMap:
    override = cfg.raw["viseme_map"]
    if override is None:
        return DEFAULT_MAP
    if isinstance(override, dict):
        return VisemeMap(override)
    return VisemeMap.from_json(override)


def run_ingest(cfg: PipelineConfig) -> Path:
    """Pair recordings with alignments, map phonemes to visemes, build the catalog."""
    ws = Workspace(cfg)
    rec_dir, ali_dir = ws.raw / "recordings", ws.raw / "alignments"
    headers = sorted(rec_dir.glob("*.vhdr")) if rec_dir.is_dir() else []
    if not headers:
        raise StageMissingError("ingest", "synth")
    vmap = _viseme_map(cfg)
    texts = {}
    if (ws.raw / "catalog.json").exists():
        texts = {int(r["id"]): r.get("text", "") for r in _load(ws.raw / "catalog.json", "ingest", "synth")}
    recordings, catalog = [], []
    for sid, vhdr in enumerate(headers):
        name = vhdr.stem
        tg = ali_dir / f"{name}.TextGrid"
        if not tg.exists():
            raise ValidationError(f"recording {name} has no alignment {tg}")
        rec, _ = read_brainvision(vhdr)
        if rec.fs != cfg.raw["fs"]:
            raise ValidationError(f"{vhdr}: sampling rate {rec.fs} Hz differs from configured fs {cfg.raw['fs']}")
        tiers = parse_textgrid(tg)
        if not tiers:
            raise ValidationError(f"{tg}: no interval tier")
        intervals = tier_to_viseme_intervals(tiers[0], vmap)
        if intervals and intervals[-1][1] > rec.duration_s + 1e-6:
            raise ValidationError(f"{tg}: alignment ends at {intervals[-1][1]} s, recording lasts {rec.duration_s} s")
        recordings.append({"id": sid, "name": name, "vhdr": str(vhdr), "n_channels": rec.n_channels,
                           "n_samples": rec.n_samples, "intervals": [list(iv) for iv in intervals]})
        phones = [iv.label for iv in tiers[0].intervals if iv.label != SILENCE]
        catalog.append({"id": sid, "text": texts.get(sid, " ".join(phones)),
                        "viseme_sequence": [int(c) for _, _, c in intervals]})
    ws.ingest.mkdir(parents=True, exist_ok=True)
    SentenceCatalog.from_records(catalog).save(ws.ingest / "catalog.json")
    _dump(ws.ingest / "manifest.json", {
        "format_version": FORMAT_VERSION, "stage": "ingest", "fs": cfg.raw["fs"],
        "viseme_map": vmap.to_dict(), "recordings": recordings,
    })
    _event("ingest_done", n_recordings=len(recordings))
    return ws.ingest


def run_preprocess(cfg: PipelineConfig) -> Path:
    ws = Workspace(cfg)
    man = _load(ws.ingest / "manifest.json", "preprocess", "ingest")
    f = cfg.raw["filter"]
    out_recs = []
    for r in man["recordings"]:
        rec, markers = read_brainvision(r["vhdr"])
        clean = preprocess_recording(rec, int(f["order"]), float(f["lo"]), float(f["hi"]),
                                     float(f["notch_q"]), float(f["line"]))
        path = write_brainvision(clean, markers, ws.preprocessed / r["name"])
        out_recs.append({**r, "vhdr": str(path)})
    _dump(ws.preprocessed / "manifest.json", {
        "format_version": FORMAT_VERSION, "stage": "preprocess", "filter": f,
        "notches_hz": line_harmonics(cfg.raw["fs"], f["hi"], f["line"]), "recordings": out_recs,
    })
    _event("preprocess_done", n_recordings=len(out_recs))
    return ws.preprocessed


def run_epoch(cfg: PipelineConfig) -> list[Path]:
    ws = Workspace(cfg)
    man = _load(ws.preprocessed / "manifest.json", "epoch", "preprocess")
    d = cfg.raw["dataset"]
    outs = []
    for modality, window in cfg.cells:
        trials, names, roles, stats = [], None, None, {}
        for r in man["recordings"]:
            rec, _ = read_brainvision(r["vhdr"])
            trials += extract_epochs(rec, [tuple(iv) for iv in r["intervals"]], window, modality, r["id"],
                                     d["length_mode"], d["normalize"], stats)
            if names is None:
                keep = [rec.channels[i] for i in modality_channels(rec, modality)]
                names, roles = [c.name for c in keep], [c.role.value for c in keep]
        ds = TrialSet.from_trials(trials, cfg.raw["fs"], window, modality, names, roles,
                                  seed=cfg.seed, normalize=d["normalize"])
        train, test = split_by_sentence(ds, int(d["n_test_sentences"]), cfg.seed)
        cell = ws.cell_dir(modality, window)
        save_dataset(train, cell / "train")
        save_dataset(test, cell / "test")
        _event("epoch_cell_done", cell=cell_name(modality, window), n_train=len(train), n_test=len(test),
               skipped=stats.get("skipped", 0))
        outs.append(cell)
    return outs


def _dataset(path: Path, stage: str) -> TrialSet:
    if not (path / "manifest.json").exists():
        raise StageMissingError(stage, "epoch")
    return load_dataset(path)


def train_one(cfg: PipelineConfig, dataset_dir, out_path, label: str = "") -> Path:
    ds = _dataset(Path(dataset_dir), "train")
    tcfg = cfg.train_config()
    t0 = time.perf_counter()

    def progress(epoch, stats):
        _event("train_epoch", cell=label, **{k: (round(v, 6) if isinstance(v, float) else v)
                                             for k, v in stats.items()})

    model, history = train_decoder(ds, tcfg, progress=progress)
    extra = {"modality": ds.modality, "window_ms": ds.window_ms, "n_train": len(ds),
             "channels": ds.channel_names, "epochs": history["epochs"]}
    save_checkpoint(model, tcfg, out_path, extra)
    _event("train_done", cell=label, seconds=round(time.perf_counter() - t0, 2), out=str(out_path))
    return Path(out_path)


def run_train(cfg: PipelineConfig) -> list[Path]:
    ws = Workspace(cfg)
    return [train_one(cfg, ws.cell_dir(m, w) / "train", ws.checkpoint(m, w), cell_name(m, w))
            for m, w in cfg.cells]


def predict_one(checkpoint, dataset_dir, out_path) -> Path:
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise StageMissingError("predict", "train")
    model, _, extra = load_checkpoint(checkpoint)
    ds = _dataset(Path(dataset_dir), "predict")
    if extra.get("channels") not in (None, ds.channel_names):
        raise ValidationError(f"{checkpoint} was trained on channels {extra['channels']}, "
                              f"dataset has {ds.channel_names}")
    logits = predict(model, ds.data)
    payload = {
        "format_version": FORMAT_VERSION, "stage": "predict",
        "modality": ds.modality, "window_ms": ds.window_ms, "n_classes": int(logits.shape[1]),
        "trials": [{"sentence_id": int(s), "interval_index": int(i), "label": int(y), "logits": row.tolist()}
                   for s, i, y, row in zip(ds.sentence_ids, ds.interval_index, ds.labels, logits)],
    }
    _dump(Path(out_path), payload)
    _event("predict_done", out=str(out_path), n_trials=len(ds))
    return Path(out_path)


def run_predict(cfg: PipelineConfig) -> list[Path]:
    ws = Workspace(cfg)
    return [predict_one(ws.checkpoint(m, w), ws.cell_dir(m, w) / "test", ws.prediction(m, w))
            for m, w in cfg.cells]


def _predictions(cfg: PipelineConfig, stage: str) -> list[dict]:
    ws = Workspace(cfg)
    return [_load(ws.prediction(m, w), stage, "predict") for m, w in cfg.cells]


def _arrays(pred: dict):
    trials = pred["trials"]
    logits = (np.array([t["logits"] for t in trials], dtype=np.float64) if trials
              else np.zeros((0, pred["n_classes"])))
    labels = np.array([t["label"] for t in trials], dtype=np.int64)
    return logits, labels


def run_eval(cfg: PipelineConfig) -> Path:
    ws = Workspace(cfg)
    reports = []
    for pred in _predictions(cfg, "eval"):
        logits, labels = _arrays(pred)
        reports.append(compute_metrics(logits, labels, pred["modality"], pred["window_ms"]).to_dict())
    out = _dump(ws.eval / "metrics.json", {"format_version": FORMAT_VERSION, "stage": "eval", "metrics": reports})
    _event("eval_done", n_cells=len(reports))
    return out


def run_reconstruct(cfg: PipelineConfig) -> Path:
    """Match each test sentence's predicted viseme sequence against the test catalog."""
    ws = Workspace(cfg)
    preds = _predictions(cfg, "reconstruct")
    if not (ws.ingest / "catalog.json").exists():
        raise StageMissingError("reconstruct", "ingest")
    catalog = SentenceCatalog.load(ws.ingest / "catalog.json")
    test_ids = sorted({t["sentence_id"] for p in preds for t in p["trials"]})
    test_cat = catalog.subset(test_ids)
    result = {"format_version": FORMAT_VERSION, "stage": "reconstruct", "catalog_ids": test_cat.ids, "cells": []}
    if not len(test_cat):
        _event("reconstruct_skipped", reason="no test sentences")
        return _dump(ws.reconstruct / "reconstruction.json", result)
    scfg = cfg.sequence_config()
    model = train_sequence_model(test_cat, scfg)
    save_sequence_model(model, scfg, ws.reconstruct / "sequence_model.pt")
    clean_ok = sum(infer_sentence(model, e.sequence)[0] == e.id for e in test_cat)
    result["sequence_model_clean"] = {"correct": int(clean_ok), "total": len(test_cat)}
    for pred in preds:
        by_sentence: dict[int, list] = {}
        for t in pred["trials"]:
            by_sentence.setdefault(t["sentence_id"], []).append(t)
        rows = []
        for sid in sorted(by_sentence):
            ts = by_sentence[sid]
            top1 = [int(np.argsort(-np.asarray(t["logits"]), kind="stable")[0]) for t in ts]
            seq = assemble_sequence(top1, [t["interval_index"] for t in ts], sid)
            m = match_closed_set(seq, test_cat)
            lstm_id, _ = infer_sentence(model, seq)
            rows.append({"sentence_id": sid, "predicted": list(seq.labels), "edit_match": m.sentence_id,
                         "distance": m.distance, "margin": m.margin, "tied": list(m.tied),
                         "sequence_model_match": int(lstm_id)})
        n = len(rows)
        result["cells"].append({
            "modality": pred["modality"], "window_ms": pred["window_ms"], "sentences": rows,
            "edit_accuracy": sum(r["edit_match"] == r["sentence_id"] for r in rows) / n if n else float("nan"),
            "sequence_model_accuracy": (sum(r["sequence_model_match"] == r["sentence_id"] for r in rows) / n
                                        if n else float("nan")),
        })
    out = _dump(ws.reconstruct / "reconstruction.json", result)
    _event("reconstruct_done", n_sentences=len(test_cat))
    return out


def run_report(cfg: PipelineConfig, mode: str = "pct") -> list[Path]:
    ws = Workspace(cfg)
    metrics = _load(ws.eval / "metrics.json", "report", "eval")
    reports = [MetricsReport.from_dict(d) for d in metrics["metrics"]]
    text, js, csv_text = render_report(reports, mode)
    outs = []
    for ext, body in (("txt", text), ("json", js), ("csv", csv_text)):
        p = ws.root / f"report.{ext}"
        p.write_text(body, encoding="utf-8")
        outs.append(p)
    _event("report_done", rows=len(reports))
    return outs


def _has_raw(cfg: PipelineConfig) -> bool:
    rec_dir = cfg.raw_dir / "recordings"
    return rec_dir.is_dir() and any(rec_dir.glob("*.vhdr"))


def run_all(cfg: PipelineConfig) -> None:
    """Every stage in pipeline order; synth runs only when the raw directory is empty."""
    if _has_raw(cfg):
        _event("synth_skipped", reason="raw directory already holds recordings", raw_dir=str(cfg.raw_dir))
    else:
        run_synth(cfg)
    for fn in (run_ingest, run_preprocess, run_epoch, run_train, run_predict, run_eval, run_reconstruct,
               run_report):
        fn(cfg)


RUNNERS = {
    "synth": run_synth, "ingest": run_ingest, "preprocess": run_preprocess, "epoch": run_epoch,
    "train": run_train, "predict": run_predict, "eval": run_eval, "reconstruct": run_reconstruct,
    "report": run_report, "all": run_all,
}


def config_digest(cfg: PipelineConfig) -> str:
    return _digest(cfg.raw)
