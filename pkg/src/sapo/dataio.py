"""Corpus reading/writing, synthetic corpus generation, model persistence.

CoNLL-style input: whitespace-separated columns, blank lines delimiting
sequences, the last column holding the gold tag for labeled data.  Output
always uses tabs and LF line endings.  Model files are line-oriented text
with weights printed in shortest exact decimal form, so a save/load round
trip reproduces identical scores.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureIndex, Model, Sequence, Tagset, compile_templates

MODEL_FORMAT_VERSION = "1"


class FormatError(ValueError):
    """Malformed corpus input."""


class ModelFileError(ValueError):
    """Malformed or incompatible model file."""


@dataclass
class Corpus:
    """A list of sequences with a uniform observation-column count."""

    sequences: list[Sequence]
    n_columns: int
    note: str = ""

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)


def _open_lines(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", encoding="utf-8"), True


def read_conll(source, labeled: bool = True) -> Corpus:
    """Parse CoNLL-format text into a corpus.

    ``labeled`` treats the final column as the gold tag.  Column counts
    are inferred from the first token and enforced; CRLF and trailing
    blank lines are tolerated.
    """
    stream, should_close = _open_lines(source)
    try:
        sequences = []
        file_columns = None
        rows: list[list[str]] = []

        def flush():
            if not rows:
                return
            if labeled:
                tokens = [tuple(r[:-1]) for r in rows]
                gold = [r[-1] for r in rows]
            else:
                tokens = [tuple(r) for r in rows]
                gold = None
            sequences.append(Sequence(tokens=tokens, gold=gold))
            rows.clear()

        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            cols = line.split()
            if file_columns is None:
                file_columns = len(cols)
                if labeled and file_columns < 2:
                    raise FormatError(
                        "line %d: labeled data needs at least 2 columns" % lineno
                    )
            elif len(cols) != file_columns:
                raise FormatError(
                    "line %d: expected %d columns, found %d"
                    % (lineno, file_columns, len(cols))
                )
            rows.append(cols)
        flush()
    finally:
        if should_close:
            stream.close()
    if not sequences:
        raise FormatError("empty input: no sequences found")
    n_columns = file_columns - 1 if labeled else file_columns
    return Corpus(sequences=sequences, n_columns=n_columns)


def write_conll(corpus: Corpus, path, predictions=None):
    """Write a corpus, optionally appending predicted tags as a final column.

    Original columns (observations, then the gold tag when present) are
    preserved; output is tab-separated with LF line endings.
    """
    if predictions is not None and len(predictions) != len(corpus.sequences):
        raise ValueError(
            "got predictions for %d sequences, corpus has %d"
            % (len(predictions), len(corpus.sequences))
        )
    blocks = []
    for i, seq in enumerate(corpus.sequences):
        pred = None
        if predictions is not None:
            pred = predictions[i]
            if len(pred) != len(seq):
                raise ValueError(
                    "sequence %d: %d predictions for %d tokens" % (i, len(pred), len(seq))
                )
        lines = []
        for t, token in enumerate(seq.tokens):
            cols = list(token)
            if seq.gold is not None:
                cols.append(seq.gold[t])
            if pred is not None:
                cols.append(pred[t])
            lines.append("\t".join(cols))
        blocks.append("\n".join(lines))
    text = "\n\n".join(blocks) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


# ---------------------------------------------------------------------------
# Synthetic corpus generation


def synthetic_hmm_params(K: int, V: int, seed: int, separability: float):
    """Seeded HMM parameters: (initial, transition, emission) matrices.

    Transitions are a sticky doubly-stochastic circulant (uniform
    stationary distribution).  Each word has a home tag (word index mod K);
    ``separability`` interpolates emissions between uniform (0) and
    emitting only home words (1).
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if V < K:
        raise ValueError("V must be >= K")
    if not 0.0 <= separability <= 1.0:
        raise ValueError("separability must be in [0, 1]")
    rng = np.random.default_rng([int(seed), 0])
    base = rng.dirichlet(np.ones(K))
    stickiness = 0.3
    trans = np.empty((K, K))
    for a in range(K):
        for b in range(K):
            trans[a, b] = stickiness * (a == b) + (1.0 - stickiness) * base[(b - a) % K]
    home = np.arange(V) % K
    emit = np.full((K, V), (1.0 - separability) / V)
    for k in range(K):
        emit[k, home == k] += separability * K / V
    emit /= emit.sum(axis=1, keepdims=True)
    init = np.full(K, 1.0 / K)
    return init, trans, emit


def generate_synthetic_hmm(
    K: int,
    V: int,
    T_mean: float,
    count: int,
    seed: int,
    separability: float,
) -> Corpus:
    """Sample a labeled corpus from a seeded HMM.

    Sequence lengths are geometric with mean ``T_mean``, clamped to
    [1, 4 * T_mean].  Deterministic for a fixed seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if T_mean < 1:
        raise ValueError("T_mean must be >= 1")
    init, trans, emit = synthetic_hmm_params(K, V, seed, separability)
    rng = np.random.default_rng([int(seed), 1])
    width = len(str(V - 1))
    words = ["w%0*d" % (width, v) for v in range(V)]
    tags = ["t%d" % k for k in range(K)]
    init_cum = np.cumsum(init)
    trans_cum = np.cumsum(trans, axis=1)
    emit_cum = np.cumsum(emit, axis=1)
    max_len = int(4 * T_mean)
    sequences = []
    for _ in range(count):
        T = int(min(max(rng.geometric(1.0 / T_mean), 1), max_len))
        u = rng.random((T, 2))
        tokens = []
        gold = []
        k = int(np.searchsorted(init_cum, u[0, 0]))
        for t in range(T):
            if t > 0:
                k = int(np.searchsorted(trans_cum[k], u[t, 0]))
            v = int(np.searchsorted(emit_cum[k], u[t, 1]))
            tokens.append((words[v],))
            gold.append(tags[k])
        sequences.append(Sequence(tokens=tokens, gold=gold))
    note = "synthetic-hmm K=%d V=%d T_mean=%g count=%d seed=%d separability=%g" % (
        K,
        V,
        T_mean,
        count,
        seed,
        separability,
    )
    return Corpus(sequences=sequences, n_columns=1, note=note)


# ---------------------------------------------------------------------------
# Model persistence


def save_model(m: Model, path):
    """Write a model as line-oriented text; zero weights are omitted."""
    K = len(m.tagset)
    out = io.StringIO()
    out.write("version\t%s\n" % MODEL_FORMAT_VERSION)
    out.write("columns\t%d\n" % m.n_columns)
    out.write("tags\t%s\n" % "\t".join(m.tagset.tags))
    out.write("config\t%s\n" % json.dumps(m.meta, sort_keys=True))
    out.write("templates-begin\n")
    text = m.template_text
    if text and not text.endswith("\n"):
        text += "\n"
    out.write(text)
    out.write("templates-end\n")
    weights = m.weights
    for rid, raw in enumerate(m.index.raw_strings):
        base = rid * K
        for k in range(K):
            w = weights[base + k]
            if w != 0.0:
                out.write("E\t%s\t%s\t%r\n" % (raw, m.tagset.tag(k), float(w)))
    if m.index.transitions:
        base = m.index.transition_base
        for a in range(K):
            for b in range(K):
                w = weights[base + a * K + b]
                if w != 0.0:
                    out.write("T\t%s\t%s\t%r\n" % (m.tagset.tag(a), m.tagset.tag(b), float(w)))
    data = out.getvalue()
    if hasattr(path, "write"):
        path.write(data)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(data)


def load_model(path) -> Model:
    """Load a model saved by :func:`save_model`; scores round-trip exactly."""
    stream, should_close = _open_lines(path)
    try:
        lines = stream.read().splitlines()
    finally:
        if should_close:
            stream.close()

    def header(idx, key):
        if idx >= len(lines):
            raise ModelFileError("truncated model file: missing %r line" % key)
        parts = lines[idx].split("\t")
        if parts[0] != key:
            raise ModelFileError("line %d: expected %r header" % (idx + 1, key))
        return parts[1:]

    version = header(0, "version")
    if version != [MODEL_FORMAT_VERSION]:
        raise ModelFileError(
            "unsupported model file version %r (expected %s)"
            % ("\t".join(version), MODEL_FORMAT_VERSION)
        )
    columns = header(1, "columns")
    try:
        n_columns = int(columns[0])
    except (IndexError, ValueError):
        raise ModelFileError("line 2: malformed columns header") from None
    tags = header(2, "tags")
    if not tags:
        raise ModelFileError("line 3: empty tagset")
    meta_raw = header(3, "config")
    try:
        meta = json.loads("\t".join(meta_raw) or "{}")
    except json.JSONDecodeError:
        raise ModelFileError("line 4: malformed config JSON") from None
    if lines[4:5] != ["templates-begin"]:
        raise ModelFileError("line 5: expected 'templates-begin'")
    try:
        end = lines.index("templates-end", 5)
    except ValueError:
        raise ModelFileError("missing 'templates-end'") from None
    template_text = "\n".join(lines[5:end]) + ("\n" if end > 5 else "")
    templates = compile_templates(template_text)
    tagset = Tagset(tags)
    K = len(tagset)
    transitions = any(t.transition for t in templates)

    index = FeatureIndex(num_tags=K, transitions=transitions)
    entries = []
    seen = set()
    for lineno, line in enumerate(lines[end + 1 :], start=end + 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[0] not in ("E", "T"):
            raise ModelFileError("line %d: corrupt feature line %r" % (lineno, line))
        kind, a, b, wtext = parts
        try:
            w = float(wtext)
        except ValueError:
            raise ModelFileError("line %d: bad weight %r" % (lineno, wtext)) from None
        key = (kind, a, b)
        if key in seen:
            raise ModelFileError("line %d: duplicate feature %r" % (lineno, "\t".join(key)))
        seen.add(key)
        if kind == "E":
            if b not in tagset.index:
                raise ModelFileError("line %d: unknown tag %r" % (lineno, b))
            rid = index.add_raw(a)
            entries.append((rid * K + tagset.index[b], w))
        else:
            if not transitions:
                raise ModelFileError(
                    "line %d: transition feature in a model without transitions" % lineno
                )
            if a not in tagset.index or b not in tagset.index:
                raise ModelFileError("line %d: unknown tag pair %r/%r" % (lineno, a, b))
            entries.append(("T", tagset.index[a], tagset.index[b], w))
    index.freeze()
    weights = np.zeros(index.n_features)
    for entry in entries:
        if entry[0] == "T":
            _, ta, tb, w = entry
            weights[index.transition_base + ta * K + tb] = w
        else:
            fid, w = entry
            weights[fid] = w
    return Model(
        tagset=tagset,
        index=index,
        templates=templates,
        weights=weights,
        n_columns=n_columns,
        template_text=template_text,
        meta=meta,
    )
