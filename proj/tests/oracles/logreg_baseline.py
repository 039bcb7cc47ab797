#!/usr/bin/env python3
"""Logistic-regression reference for the learning acceptance check.

Reads a dataset directory written by `mgcma gen-data` (manifest.jsonl plus
MGCF feature files), mean-pools each modality, concatenates the two pooled
vectors, and fits a multinomial logistic regression per leave-one-session-out
fold with full-batch gradient descent. Prints the pooled WA and UA over the
five held-out sessions. The value is frozen in tests/acceptance.cpp.

Usage: logreg_baseline.py DATASET_DIR
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np


def read_features(path):
    raw = Path(path).read_bytes()
    magic, version, length, dim = struct.unpack_from("<4sIII", raw, 0)
    assert magic == b"MGCF" and version == 1, path
    data = np.frombuffer(raw, dtype="<f4", count=length * dim, offset=16)
    assert len(raw) == 16 + 4 * length * dim, path
    return data.astype(np.float64).reshape(length, dim)


def load(root):
    root = Path(root)
    rows, labels, sessions = [], [], []
    for line in (root / "manifest.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        speech = read_features(root / rec["speech_path"]).mean(axis=0)
        text = read_features(root / rec["text_path"]).mean(axis=0)
        rows.append(np.concatenate([speech, text]))
        labels.append(rec["label"])
        sessions.append(rec["session"])
    return np.array(rows), np.array(labels), np.array(sessions)


def fit(x, y, classes, l2=1e-3, lr=0.1, steps=2000):
    n, d = x.shape
    w = np.zeros((d, classes))
    b = np.zeros(classes)
    onehot = np.eye(classes)[y]
    for _ in range(steps):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def main():
    x, y, sessions = load(sys.argv[1])
    classes = int(y.max()) + 1
    confusion = np.zeros((classes, classes), dtype=int)
    for s in range(1, 6):
        train, test = sessions != s, sessions == s
        mean = x[train].mean(axis=0)
        std = x[train].std(axis=0) + 1e-12
        w, b = fit((x[train] - mean) / std, y[train], classes)
        pred = np.argmax(((x[test] - mean) / std) @ w + b, axis=1)
        for t, p in zip(y[test], pred):
            confusion[t, p] += 1
    wa = np.trace(confusion) / confusion.sum()
    support = confusion.sum(axis=1)
    ua = np.mean(np.diag(confusion)[support > 0] / support[support > 0])
    print(f"pooled_wa={wa:.6f} pooled_ua={ua:.6f}")
    print(confusion)


if __name__ == "__main__":
    main()
