"""Shared oracles and fixtures for the test suite."""

import numpy as np

from viseme_decode.alignment import tier_to_viseme_intervals
from viseme_decode.dataset import modality_channels
from viseme_decode.dsp import preprocess_recording
from viseme_decode.signal_io import ChannelMeta, Recording, Role
from viseme_decode.synth import SynthConfig, gen_corpus, mixing_vectors, render_recording

# criterion number -> "CRITERION n: PASS|FAIL ..." line, printed in the terminal summary
ACCEPTANCE = {}


def record_criterion(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def small_recording(n_eeg=3, n_emg=2, n=1000, fs=1000.0, seed=0, ref=True):
    """EEG block (last one the reference when ``ref``) followed by EMG channels."""
    rng = np.random.default_rng(seed)
    chans = []
    for i in range(n_eeg):
        role = Role.REFERENCE if ref and i == n_eeg - 1 else Role.EEG
        chans.append(ChannelMeta(f"E{i}", role, 1.0, i))
    for j in range(n_emg):
        chans.append(ChannelMeta(f"M{j}", Role.EMG, 1.0, n_eeg + j))
    return Recording(tuple(chans), fs, rng.standard_normal((n_eeg + n_emg, n)))


def band_power_features(cfg: SynthConfig, modality="EEG_EMG"):
    """Per-interval log-variance spatial pattern of preprocessed synthetic recordings."""
    corpus = gen_corpus(cfg)
    mix = mixing_vectors(cfg)
    feats, labels, sids = [], [], []
    for s in corpus.sentences:
        rec = preprocess_recording(render_recording(s, cfg, mix))
        picks = modality_channels(rec, modality)
        for a, b, cls in tier_to_viseme_intervals(s.tier()):
            seg = rec.data[picks, int(round(a * rec.fs)):int(round(b * rec.fs))]
            lp = np.log(seg.var(axis=1))
            feats.append(lp - lp.mean())
            labels.append(cls)
            sids.append(s.id)
    return np.array(feats), np.array(labels), np.array(sids)


def nearest_centroid_accuracy(cfg: SynthConfig, modality="EEG_EMG", train_fraction=0.6) -> float:
    """Nearest-centroid accuracy on held-out sentences."""
    F, y, sid = band_power_features(cfg, modality)
    train = sid < int(cfg.n_sentences * train_fraction)
    test = ~train
    cent = np.array([F[train & (y == k)].mean(axis=0) for k in range(15)])
    pred = np.argmin(((F[test][:, None, :] - cent[None]) ** 2).sum(-1), axis=1)
    return float((pred == y[test]).mean())
