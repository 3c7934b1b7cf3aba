"""Deterministic synthetic inputs for the benchmark applications.

Every generator is a pure function of its :class:`WorkloadSpec`; records
are ``(key, value)`` pairs and are stored as JSON Lines
``{"key": ..., "value": ...}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

KINDS = ("wordcount", "weblog", "docset", "hits")

_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "da", "fu", "go")
_STATUS = ("200", "304", "404", "500")
_STATUS_P = (0.82, 0.09, 0.07, 0.02)


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "wordcount"
    records: int = 100
    vocabulary: int = 200
    skew: float = 1.1
    empty_fraction: float = 0.0
    duplicate_fraction: float = 0.0
    min_words: int = 1
    max_words: int = 12
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.records < 0 or self.vocabulary < 1:
            raise ValueError("records must be >= 0 and vocabulary >= 1")
        if self.skew <= 0:
            raise ValueError("skew must be positive")
        if not (0 <= self.empty_fraction <= 1 and 0 <= self.duplicate_fraction <= 1):
            raise ValueError("fractions must lie in [0, 1]")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("need 1 <= min_words <= max_words")
        n_empty, n_dup = self.counts()
        if n_empty + n_dup > self.records:
            raise ValueError("empty + duplicate records exceed record count")
        if n_dup and n_empty + n_dup == self.records:
            raise ValueError("duplicates need at least one original record")

    def counts(self) -> tuple[int, int]:
        return round(self.empty_fraction * self.records), round(self.duplicate_fraction * self.records)


def vocabulary_words(n: int) -> list[str]:
    """``n`` distinct pronounceable words, same list for every seed."""
    words = []
    k = len(_SYLLABLES)
    i = 0
    while len(words) < n:
        j, parts = i, []
        while True:
            parts.append(_SYLLABLES[j % k])
            j //= k
            if j == 0:
                break
        words.append("".join(parts))
        i += 1
    return words


def zipf_probabilities(n: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** (-skew)
    return w / w.sum()


def _layout(spec: WorkloadSpec, rng: np.random.Generator):
    """Positions of empty and duplicate records (exact counts)."""
    n_empty, n_dup = spec.counts()
    order = rng.permutation(spec.records)
    empty = set(order[:n_empty].tolist())
    dup = set(order[n_empty : n_empty + n_dup].tolist())
    return empty, dup


def _texts(spec: WorkloadSpec, rng: np.random.Generator) -> list[str]:
    words = vocabulary_words(spec.vocabulary)
    p = zipf_probabilities(spec.vocabulary, spec.skew)
    empty, dup = _layout(spec, rng)
    originals: list[str] = []
    out: list[str | None] = []
    for i in range(spec.records):
        if i in empty or i in dup:
            out.append(None)
            continue
        n = int(rng.integers(spec.min_words, spec.max_words + 1))
        line = " ".join(words[j] for j in rng.choice(spec.vocabulary, size=n, p=p))
        originals.append(line)
        out.append(line)
    for i in range(spec.records):
        if i in empty:
            out[i] = ""
        elif i in dup:
            out[i] = originals[int(rng.integers(len(originals)))]
    return out


def _weblog(spec: WorkloadSpec, rng: np.random.Generator) -> list[tuple]:
    p = zipf_probabilities(spec.vocabulary, spec.skew)
    # urls are drawn first so the stream matches a plain inverse-CDF sampler
    urls = rng.choice(spec.vocabulary, size=spec.records, p=p)
    hours = rng.integers(0, 24, size=spec.records)
    status = rng.choice(len(_STATUS), size=spec.records, p=_STATUS_P)
    return [
        (i, f"/page/{int(u)}.html 1995-07-01T{int(h):02d}:00 {_STATUS[int(s)]}")
        for i, (u, h, s) in enumerate(zip(urls, hours, status))
    ]


def generate(spec: WorkloadSpec) -> list[tuple]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "wordcount":
        return list(enumerate(_texts(spec, rng)))
    if spec.kind == "docset":
        return [(f"d{i:05d}", t) for i, t in enumerate(_texts(spec, rng))]
    if spec.kind == "weblog":
        return _weblog(spec, rng)
    counts = np.minimum(rng.zipf(1.0 + spec.skew, size=spec.records), 10**6)
    return [(f"/page/{i}.html", int(c)) for i, c in enumerate(counts)]


def write_jsonl(records: Iterable[tuple], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in records:
            fh.write(json.dumps({"key": k, "value": v}, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[tuple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            d = json.loads(line)
            k, v = d["key"], d["value"]
            for x in (k, v):
                if not isinstance(x, (bool, int, str)):
                    raise ValueError(f"line {n}: key/value must be int, str or bool")
            out.append((k, v))
    return out
