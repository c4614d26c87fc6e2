#!/usr/bin/env python3
"""Writes the 16-dimensional word-vector table used with the synthetic shapes set.

Words are placed by hand on a few axes (shape names, colors, sizes, scene
words) with a little seeded noise, so related words cluster the way they would
in a real word2vec space. Output format: header "count dim", then
"word v1 ... v16" per line.
"""
import argparse

import numpy as np

DIM = 16


def axis(i, scale=1.0):
    v = np.zeros(DIM)
    v[i] = scale
    return v


def build(seed):
    rng = np.random.default_rng(seed)
    shape = axis(11, 0.4)
    color = axis(7, 0.5)
    words = {
        "square": axis(0) + shape,
        "circle": axis(1) + shape,
        "triangle": axis(2) + shape,
        "red": axis(3) + color,
        "green": axis(4) + color,
        "blue": axis(5) + color,
        "yellow": axis(6) + color,
        "cross": axis(10, 0.6) + axis(15, 0.8) + axis(11, 0.3),
        "ring": axis(15, 0.6) + axis(12, 0.5) + axis(11, 0.3) + axis(1, 0.3),
        "large": axis(8),
        "big": axis(8) + axis(9, 0.2),
        "small": axis(8, 0.6) + axis(9, 0.8),
        "tiny": axis(8, 0.5) + axis(9, 0.9),
        "plain": axis(10) + axis(12, 0.3),
        "gray": axis(12) + color,
        "background": axis(13) + axis(14, 0.3),
        "canvas": axis(13, 0.7) + axis(14, 0.7),
        "image": axis(14) + axis(15, 0.4),
        "picture": axis(14, 0.8) + axis(15, 0.6),
    }
    for base in ("square", "circle", "triangle", "ring"):
        words[base + "s"] = words[base] + rng.normal(0.0, 0.1, DIM)
    words["crosses"] = words["cross"] + rng.normal(0.0, 0.1, DIM)
    for w in ("there", "is", "sitting", "placed", "lying", "next", "to", "near",
              "above", "below", "beside", "on", "of"):
        words[w] = rng.normal(0.0, 0.3, DIM)
    out = {}
    for w, v in words.items():
        out[w] = v + rng.normal(0.0, 0.05, DIM)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    words = build(args.seed)
    with open(args.output, "w") as f:
        f.write(f"{len(words)} {DIM}\n")
        for w in sorted(words):
            f.write(w + " " + " ".join(f"{x:.6f}" for x in words[w]) + "\n")


if __name__ == "__main__":
    main()
