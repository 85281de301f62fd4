"""Probabilistic inference and update-term assembly for linear chains.

Covers exact log-space forward-backward (partition function and node/edge
marginals), the log-linear distribution over an n-best candidate set, the
regularized-likelihood stochastic gradient, the search-based update term
that approximates it, the training objective, and the deviation
diagnostic between the exact gradient and its top-n approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import Model, Sequence
from .lattice import (
    Lattice,
    NBestList,
    astar_nbest,
    beam_nbest,
    build_lattice,
    indexed_position_features,
    path_score,
)


@dataclass
class Marginals:
    """Log-partition plus node and edge posterior marginals."""

    logZ: float
    node: np.ndarray  # (T, K), P(y_t = k | x, w)
    edge: np.ndarray  # (T-1, K, K), P(y_{t-1} = a, y_t = b | x, w)


@dataclass
class UpdateTerm:
    """Per-sample weight-change direction.

    ``items`` is the sparse part (expected features minus oracle features,
    sorted by id, exact zeros dropped); ``decay`` is the L2 coefficient
    lambda/|S| whose dense contribution ``decay * w`` is applied by the
    trainer as a multiplicative shrink.
    """

    items: list[tuple[int, float]]
    decay: float
    kind: str


@dataclass
class DeltaReport:
    """Deviation of the top-n update term from the exact gradient."""

    n: int
    l2_delta: float
    linf_delta: float
    tail_mass: float


def logsumexp(a, axis=None):
    """Max-shifted log-sum-exp; no intermediate overflow for finite scores."""
    a = np.asarray(a)
    if axis is None:
        m = float(a.max())
        return m + math.log(float(np.exp(a - m).sum()))
    m = a.max(axis=axis, keepdims=True)
    return np.squeeze(np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m, axis=axis)


def forward_logz(l: Lattice) -> float:
    """Log of the sum of exponentiated path scores over all taggings."""
    alpha = l.emit[0]
    for t in range(1, l.T):
        alpha = l.emit[t] + logsumexp(alpha[:, None] + l.trans, axis=0)
    return float(logsumexp(alpha))


def forward_backward(l: Lattice) -> Marginals:
    T, K = l.T, l.K
    alpha = np.empty((T, K))
    alpha[0] = l.emit[0]
    for t in range(1, T):
        alpha[t] = l.emit[t] + logsumexp(alpha[t - 1][:, None] + l.trans, axis=0)
    beta = np.zeros((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(l.trans + (l.emit[t + 1] + beta[t + 1])[None, :], axis=1)
    logZ = float(logsumexp(alpha[T - 1]))
    node = np.exp(alpha + beta - logZ)
    edge = np.empty((max(T - 1, 0), K, K))
    for t in range(T - 1):
        edge[t] = np.exp(
            alpha[t][:, None] + l.trans + (l.emit[t + 1] + beta[t + 1])[None, :] - logZ
        )
    return Marginals(logZ=logZ, node=node, edge=edge)


def sequence_log_prob(m: Model, x: Sequence, y) -> float:
    """log P(y | x, w) under the exact chain distribution."""
    l = build_lattice(m, x)
    return path_score(l, y) - forward_logz(l)


def topn_distribution(nb: NBestList) -> NBestList:
    """Fill normalized log-linear probabilities over the candidate set."""
    if len(nb) == 0:
        raise ValueError("cannot normalize an empty candidate list")
    top = max(nb.scores)
    raw = [math.exp(s - top) for s in nb.scores]
    z = math.fsum(raw)
    return NBestList(
        paths=nb.paths,
        scores=nb.scores,
        probs=[p / z for p in raw],
        n_requested=nb.n_requested,
        exhausted=nb.exhausted,
    )


# ---------------------------------------------------------------------------
# Sparse update-term assembly over indexed position features.  These helpers
# are shared with the trainers so that equivalence relations between
# algorithms hold at float precision.


def path_items(pos_feats, path, K, trans_base):
    """Sparse feature dict of one tagging from indexed position features."""
    acc: dict[int, float] = {}
    for t, feats in enumerate(pos_feats):
        yt = path[t]
        for rid, value in feats:
            fid = rid * K + yt
            acc[fid] = acc.get(fid, 0.0) + value
    if trans_base is not None:
        for t in range(1, len(pos_feats)):
            fid = trans_base + path[t - 1] * K + path[t]
            acc[fid] = acc.get(fid, 0.0) + 1.0
    return acc


def candidate_mixture(pos_feats, paths, probs, K, trans_base):
    """Probability-weighted feature mixture sum_k P_k F(x, y_k).

    Candidates mostly agree position-by-position, so the per-position tag
    probabilities are tallied first and each fired feature is visited once
    per distinct tag rather than once per candidate.
    """
    T = len(pos_feats)
    tag_mass = [dict() for _ in range(T)]
    for path, p in zip(paths, probs):
        for t in range(T):
            yt = path[t]
            d = tag_mass[t]
            d[yt] = d.get(yt, 0.0) + p
    acc: dict[int, float] = {}
    for t, feats in enumerate(pos_feats):
        for yt, mass in tag_mass[t].items():
            for rid, value in feats:
                fid = rid * K + yt
                acc[fid] = acc.get(fid, 0.0) + mass * value
    if trans_base is not None:
        pair_mass: dict[int, float] = {}
        for path, p in zip(paths, probs):
            for t in range(1, T):
                fid = trans_base + path[t - 1] * K + path[t]
                pair_mass[fid] = pair_mass.get(fid, 0.0) + p
        for fid, mass in pair_mass.items():
            acc[fid] = acc.get(fid, 0.0) + mass
    return acc


def expected_items(pos_feats, marg: Marginals, K, trans_base):
    """Expected feature counts under the exact distribution, from marginals."""
    by_raw: dict[int, np.ndarray] = {}
    for t, feats in enumerate(pos_feats):
        row = marg.node[t]
        for rid, value in feats:
            vec = by_raw.get(rid)
            if vec is None:
                by_raw[rid] = value * row if value != 1.0 else row.copy()
            else:
                vec += value * row if value != 1.0 else row
    acc: dict[int, float] = {}
    for rid, vec in by_raw.items():
        base = rid * K
        for k in range(K):
            v = float(vec[k])
            if v != 0.0:
                acc[base + k] = v
    if trans_base is not None and len(pos_feats) > 1:
        etot = marg.edge.sum(axis=0)
        for a in range(K):
            for b in range(K):
                v = float(etot[a, b])
                if v != 0.0:
                    acc[trans_base + a * K + b] = v
    return acc


def subtract_oracle(mixture: dict, oracle: dict):
    """Sorted sparse items of (mixture - oracle), exact zeros dropped."""
    d = dict(mixture)
    for fid, value in oracle.items():
        d[fid] = d.get(fid, 0.0) - value
    return sorted((fid, v) for fid, v in d.items() if v != 0.0)


def _compiled(m: Model, z: Sequence):
    if z.gold is None:
        raise ValueError("sample has no gold tagging")
    n_columns = len(z.tokens[0])
    pos_feats = [
        indexed_position_features(z.tokens, t, m.templates, m.index, n_columns)
        for t in range(len(z))
    ]
    gold = m.tagset.ids(z.gold)
    trans_base = m.index.transition_base if m.index.transitions else None
    return pos_feats, gold, trans_base


def crf_stochastic_gradient(m: Model, z: Sequence, l2: float, dataset_size: int) -> UpdateTerm:
    """Exact per-sample gradient of the regularized negative log-likelihood.

    Sparse part is E_P[F] - F(x, y*), assembled from node/edge marginals;
    the dense part is (l2 / dataset_size) * w, reported via ``decay``.
    """
    pos_feats, gold, trans_base = _compiled(m, z)
    K = m.num_tags
    l = build_lattice(m, z)
    marg = forward_backward(l)
    mixture = expected_items(pos_feats, marg, K, trans_base)
    items = subtract_oracle(mixture, path_items(pos_feats, gold, K, trans_base))
    return UpdateTerm(items=items, decay=l2 / dataset_size, kind="crf_gradient")


def sapo_update_term(
    m: Model,
    z: Sequence,
    n: int,
    l2: float,
    dataset_size: int,
    search: str = "astar",
    beam: int = 50,
) -> UpdateTerm:
    """Top-n approximation of the stochastic gradient.

    The candidate set is exactly the n-best search output; the gold
    tagging is neither forced in nor excluded.
    """
    pos_feats, gold, trans_base = _compiled(m, z)
    K = m.num_tags
    l = build_lattice(m, z)
    if search == "astar":
        nb = astar_nbest(l, n)
    elif search == "beam":
        nb = beam_nbest(l, n, beam)
    else:
        raise ValueError("search must be 'astar' or 'beam'")
    nb = topn_distribution(nb)
    mixture = candidate_mixture(pos_feats, nb.paths, nb.probs, K, trans_base)
    items = subtract_oracle(mixture, path_items(pos_feats, gold, K, trans_base))
    return UpdateTerm(items=items, decay=l2 / dataset_size, kind="sapo_term")


def regularizer_value(weights: np.ndarray) -> float:
    """R(w) = 0.5 ||w||^2, so that its gradient is w."""
    return 0.5 * float(np.dot(weights, weights))


def objective_value(m: Model, data, l2: float) -> float:
    """Negative regularized log-likelihood over a labeled dataset."""
    total = l2 * regularizer_value(m.weights)
    for z in data:
        if z.gold is None:
            raise ValueError("sample has no gold tagging")
        l = build_lattice(m, z)
        total += forward_logz(l) - path_score(l, m.tagset.ids(z.gold))
    return total


def delta_diagnostic(m: Model, z: Sequence, n_list, l2: float, dataset_size: int):
    """Deviation between the exact gradient and its top-n approximations.

    For each requested n, reports the norms of the sparse-coordinate
    difference (the dense decay contributions cancel exactly) and the
    probability mass outside the candidate set.  The candidate sets are
    nested prefixes of one n-best search, and the tail mass is accumulated
    with sequential log-add so it is non-increasing in n by construction.
    """
    pos_feats, gold, trans_base = _compiled(m, z)
    K = m.num_tags
    l = build_lattice(m, z)
    marg = forward_backward(l)
    oracle = path_items(pos_feats, gold, K, trans_base)
    exact = subtract_oracle(expected_items(pos_feats, marg, K, trans_base), oracle)
    exact_d = dict(exact)

    n_list = sorted(set(int(n) for n in n_list))
    if not n_list or n_list[0] < 1:
        raise ValueError("n values must be >= 1")
    nb = astar_nbest(l, n_list[-1])

    # Running log of Z_n over the ranked prefix; logaddexp never decreases.
    prefix_logz = np.full(len(nb.scores), -np.inf)
    running = -np.inf
    for i, s in enumerate(nb.scores):
        running = np.logaddexp(running, s)
        prefix_logz[i] = running

    reports = []
    for n in n_list:
        k = min(n, len(nb.paths))
        sub = NBestList(
            paths=nb.paths[:k],
            scores=nb.scores[:k],
            probs=None,
            n_requested=n,
            exhausted=nb.exhausted or k < n,
        )
        sub = topn_distribution(sub)
        approx = subtract_oracle(
            candidate_mixture(pos_feats, sub.paths, sub.probs, K, trans_base), oracle
        )
        approx_d = dict(approx)
        coords = set(exact_d) | set(approx_d)
        diffs = [exact_d.get(fid, 0.0) - approx_d.get(fid, 0.0) for fid in coords]
        l2_delta = math.sqrt(math.fsum(d * d for d in diffs))
        linf_delta = max((abs(d) for d in diffs), default=0.0)
        tail = 1.0 - math.exp(float(prefix_logz[k - 1]) - marg.logZ)
        reports.append(
            DeltaReport(n=n, l2_delta=l2_delta, linf_delta=linf_delta, tail_mass=max(tail, 0.0))
        )
    return reports


def delta_csv_lines(reports) -> list[str]:
    """CSV serialization: header plus one row per probed n."""
    lines = ["n,l2_delta,linf_delta,tail_mass"]
    for r in reports:
        lines.append("%d,%r,%r,%r" % (r.n, r.l2_delta, r.linf_delta, r.tail_mass))
    return lines
