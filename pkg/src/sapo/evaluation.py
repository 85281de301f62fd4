"""Token accuracy, BIO chunk F-score, and weight-complexity metrics."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .features import Model

_BIO_RE = re.compile(r"^([BI])-(.+)$")


@dataclass
class EvalReport:
    metric: str
    value: float
    counts: dict
    per_tag: Counter = field(default_factory=Counter)

    def summary(self) -> str:
        parts = ["%s=%.4f" % (self.metric, self.value)]
        parts += ["%s=%d" % (k, v) for k, v in self.counts.items()]
        return " ".join(parts)

    def per_tag_csv_lines(self) -> list[str]:
        if self.metric == "accuracy":
            lines = ["gold,pred,count"]
            for (g, p), c in sorted(self.per_tag.items()):
                lines.append("%s,%s,%d" % (g, p, c))
        else:
            lines = ["type,matched,predicted,gold"]
            types = sorted({t for _, t in self.per_tag})
            for t in types:
                lines.append(
                    "%s,%d,%d,%d"
                    % (
                        t,
                        self.per_tag[("matched", t)],
                        self.per_tag[("predicted", t)],
                        self.per_tag[("gold", t)],
                    )
                )
        return lines


def _check_shapes(gold_corpus, predictions):
    if len(predictions) != len(gold_corpus.sequences):
        raise ValueError(
            "got predictions for %d sequences, corpus has %d"
            % (len(predictions), len(gold_corpus.sequences))
        )
    for i, (seq, pred) in enumerate(zip(gold_corpus.sequences, predictions)):
        if seq.gold is None:
            raise ValueError("sequence %d has no gold tags" % i)
        if len(pred) != len(seq):
            raise ValueError(
                "sequence %d: %d predictions for %d tokens" % (i, len(pred), len(seq))
            )


def token_accuracy(gold_corpus, predictions) -> EvalReport:
    """Fraction of tokens whose predicted tag equals the gold tag."""
    _check_shapes(gold_corpus, predictions)
    correct = total = 0
    confusion = Counter()
    for seq, pred in zip(gold_corpus.sequences, predictions):
        for g, p in zip(seq.gold, pred):
            total += 1
            correct += g == p
            confusion[(g, p)] += 1
    return EvalReport(
        metric="accuracy",
        value=correct / total,
        counts={"correct": correct, "total": total},
        per_tag=confusion,
    )


def extract_chunks(tags):
    """Chunks as (start, end, type) triples from a BIO tag list.

    An I-TYPE with no compatible open chunk opens a new chunk (the
    conlleval repair rule).  End indices are inclusive.
    """
    chunks = set()
    start = None
    ctype = None
    for t, tag in enumerate(tags):
        if tag == "O":
            if start is not None:
                chunks.add((start, t - 1, ctype))
                start = None
            continue
        m = _BIO_RE.match(tag)
        if not m:
            raise ValueError("malformed BIO tag %r at position %d" % (tag, t))
        marker, typ = m.groups()
        if marker == "B" or start is None or typ != ctype:
            if start is not None:
                chunks.add((start, t - 1, ctype))
            start, ctype = t, typ
    if start is not None:
        chunks.add((start, len(tags) - 1, ctype))
    return chunks


def chunk_f1(gold_corpus, predictions, scheme: str = "BIO") -> EvalReport:
    """Balanced F-score over exactly-matched (start, end, type) chunks."""
    if scheme != "BIO":
        raise ValueError("unsupported chunk scheme %r" % scheme)
    _check_shapes(gold_corpus, predictions)
    matched = n_pred = n_gold = 0
    per_tag = Counter()
    for seq, pred in zip(gold_corpus.sequences, predictions):
        gold_chunks = extract_chunks(seq.gold)
        pred_chunks = extract_chunks(pred)
        both = gold_chunks & pred_chunks
        matched += len(both)
        n_pred += len(pred_chunks)
        n_gold += len(gold_chunks)
        for _, _, typ in both:
            per_tag[("matched", typ)] += 1
        for _, _, typ in pred_chunks:
            per_tag[("predicted", typ)] += 1
        for _, _, typ in gold_chunks:
            per_tag[("gold", typ)] += 1
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        metric="chunk_f1",
        value=f1,
        counts={"matched": matched, "predicted": n_pred, "gold": n_gold},
        per_tag=per_tag,
    )


def w_complexity(m: Model) -> float:
    """Mean absolute value over all indexed weights, including zeros."""
    if len(m.weights) == 0:
        raise ValueError("model has no features")
    return float(np.abs(m.weights).mean())
