"""Closed-set sentence reconstruction on a synthetic catalog.

Builds a 50-sentence catalog from the synthetic corpus, corrupts every
sequence at several substitution rates and reports how often the
edit-distance matcher and the LSTM recover the right sentence.

    python demos/reconstruct_sentences.py --rates 0 0.2 0.4
"""

import argparse

import numpy as np

from viseme_decode.reconstruct import (CatalogEntry, SentenceCatalog, SequenceConfig, VisemeSequence, corrupt,
                                       infer_sentence, match_closed_set, train_sequence_model)
from viseme_decode.synth import SynthConfig, gen_corpus


def main():
    ap = argparse.ArgumentParser(description="closed-set reconstruction demo")
    ap.add_argument("--n", type=int, default=50, help="catalog size")
    ap.add_argument("--rates", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = gen_corpus(SynthConfig(n_sentences=args.n, seed=args.seed))
    cat = SentenceCatalog([CatalogEntry(s.id, "", VisemeSequence(tuple(s.visemes), s.id))
                           for s in corpus.sentences])
    print(f"training the sequence model on {len(cat)} sentences ...")
    model = train_sequence_model(cat, SequenceConfig(seed=args.seed))
    rng = np.random.default_rng(args.seed)
    print(f"{'rate':>6} {'edit':>8} {'lstm':>8}")
    for rate in args.rates:
        edit = lstm = 0
        for e in cat:
            s = corrupt(e.sequence, rate, rng)
            edit += match_closed_set(s, cat).sentence_id == e.id
            lstm += infer_sentence(model, s)[0] == e.id
        print(f"{rate:6.2f} {edit:5d}/{len(cat)} {lstm:5d}/{len(cat)}")


if __name__ == "__main__":
    main()
