"""Synthetic corpus from a small probabilistic grammar.

Sentences look like ``The old dog chased a cat near the river``. Word choices
follow a Zipf law whose exponent sets how peaked the trained model is; with
the default of 3 the best continuation usually carries most of the mass, so
beam search returns near-duplicate sets, much like a confident translation
model. The longest possible sentence has ``MAX_LEN`` tokens.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

DETS = ["the", "a", "every", "some"]
ADJS = ["old", "small", "happy", "quiet", "red", "clever"]
NOUNS = ["dog", "cat", "bird", "farmer", "child", "teacher", "horse", "river", "garden", "house"]
VERBS = ["saw", "chased", "liked", "found", "helped", "watched", "followed"]
PREPS = ["near", "behind", "inside", "beyond"]
ADVS = ["quickly", "slowly", "again", "today"]

MAX_LEN = 12


def _pick(rng: np.random.Generator, words: list[str], zipf: float) -> str:
    weights = np.arange(1, len(words) + 1, dtype=float) ** -zipf
    return words[rng.choice(len(words), p=weights / weights.sum())]


def _noun_phrase(rng: np.random.Generator, zipf: float) -> list[str]:
    out = [_pick(rng, DETS, zipf)]
    if rng.random() < 0.4:
        out.append(_pick(rng, ADJS, zipf))
    out.append(_pick(rng, NOUNS, zipf))
    return out


def sentence(rng: np.random.Generator, zipf: float = 3.0) -> list[str]:
    subject = _noun_phrase(rng, zipf)
    # capitalised so the subject determiner is a different token from the object one
    subject[0] = subject[0].capitalize()
    out = subject + [_pick(rng, VERBS, zipf)] + _noun_phrase(rng, zipf)
    if rng.random() < 0.35:
        out += [_pick(rng, PREPS, zipf)] + _noun_phrase(rng, zipf)
    if rng.random() < 0.25:
        out.append(_pick(rng, ADVS, zipf))
    return out


def generate_corpus(n: int, seed: int = 0, zipf: float = 3.0) -> list[list[str]]:
    if zipf < 0:
        raise ValueError("zipf exponent must be non-negative")
    rng = np.random.default_rng(seed)
    return [sentence(rng, zipf) for _ in range(n)]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Write a synthetic whitespace-tokenised corpus.")
    parser.add_argument("--n", type=int, default=2000, help="number of sentences")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--zipf", type=float, default=3.0, help="Zipf exponent of word choices")
    parser.add_argument("--out", default="-", help="output path, '-' for stdout")
    args = parser.parse_args(argv)
    lines = "\n".join(" ".join(s) for s in generate_corpus(args.n, args.seed, args.zipf)) + "\n"
    if args.out == "-":
        sys.stdout.write(lines)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(lines)
    return 0


if __name__ == "__main__":
    sys.exit(main())
