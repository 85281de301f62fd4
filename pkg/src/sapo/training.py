"""Online trainers for linear-chain models.

Implements the search-based probabilistic online learner (SAPO): per
sample, search the top-n taggings, weight each candidate by its
normalized log-linear probability, downdate by the probability-weighted
candidate features, update by the oracle features, then shrink all
weights by (1 - lr * l2 / |S|).  Exact-inference SGD on the regularized
likelihood, the structured perceptron, and 1-best/n-best MIRA (naive and
averaged) share the same epoch orchestration.

The candidate downdates and the oracle update are applied as one merged
sparse delta, and the per-sample decay is a deferred global scale factor,
so a full pass costs O(touched features) per sample.  All trainers are
deterministic given (data, config, seed).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import chunk_f1, token_accuracy
from .features import Model, build_model
from .inference import (
    candidate_mixture,
    expected_items,
    forward_backward,
    forward_logz,
    path_items,
    regularizer_value,
    subtract_oracle,
    topn_distribution,
)
from .lattice import (
    Lattice,
    astar_nbest,
    beam_nbest,
    emission_scores,
    indexed_position_features,
    path_score,
    viterbi,
)

ALGORITHMS = (
    "sapo",
    "crf-sgd",
    "perc",
    "perc-avg",
    "mira",
    "mira-avg",
    "mira-nbest",
    "mira-nbest-avg",
)

SEARCH_MODES = ("astar", "beam")
METRICS = ("accuracy", "chunk-f1")
FINITE_CHECK_INTERVAL = 1000
HILDRETH_MAX_PASSES = 100
HILDRETH_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid training configuration or training inputs."""


class NonFiniteError(RuntimeError):
    """Weights became non-finite during training."""

    def __init__(self, sample_index, epoch):
        super().__init__(
            "non-finite weights detected after sample %d in epoch %d"
            % (sample_index, epoch)
        )
        self.sample_index = sample_index
        self.epoch = epoch


@dataclass
class TrainConfig:
    algorithm: str
    n: int = 5
    learning_rate: float = 0.05
    l2: float = 1.0
    epochs: int = 20
    seed: int = 1
    search: str = "astar"
    beam_width: int = 50
    lr_schedule: str = "fixed"  # "fixed" or "exp"
    lr_decay: float = 1.0  # per-epoch multiplier when lr_schedule == "exp"
    mira_clip: float = math.inf
    eval_every: int = 1
    metric: str = "accuracy"

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("unknown algorithm %r" % self.algorithm)
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if int(self.n) < 1:
            raise ConfigError("n must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if self.l2 < 0:
            raise ConfigError("l2 strength must be >= 0")
        if int(self.beam_width) < 1:
            raise ConfigError("beam width must be >= 1")
        if self.search not in SEARCH_MODES:
            raise ConfigError("search must be one of %s" % (SEARCH_MODES,))
        if self.lr_schedule not in ("fixed", "exp"):
            raise ConfigError("lr schedule must be 'fixed' or 'exp'")
        if self.lr_schedule == "exp" and not 0 < self.lr_decay <= 1:
            raise ConfigError("lr decay rate must be in (0, 1]")
        if not self.mira_clip > 0:
            raise ConfigError("MIRA clip must be > 0 (may be inf)")
        if int(self.eval_every) < 1:
            raise ConfigError("eval-every must be >= 1")
        if self.metric not in METRICS:
            raise ConfigError("metric must be one of %s" % (METRICS,))
        return self

    def snapshot(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": int(self.n),
            "learning_rate": self.learning_rate,
            "l2": self.l2,
            "epochs": int(self.epochs),
            "seed": int(self.seed),
            "search": self.search,
            "beam_width": int(self.beam_width),
            "lr_schedule": self.lr_schedule,
            "lr_decay": self.lr_decay,
            "mira_clip": self.mira_clip,
            "eval_every": int(self.eval_every),
            "metric": self.metric,
        }


@dataclass
class CurvePoint:
    epoch: int  # 1-based
    objective: float
    heldout_metric: float | None
    w_complexity: float
    epoch_seconds: float


@dataclass
class TrainCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def csv_lines(self):
        lines = ["epoch,objective,heldout_metric,w_complexity,epoch_seconds"]
        for p in self.points:
            held = "" if p.heldout_metric is None else repr(p.heldout_metric)
            lines.append(
                "%d,%r,%s,%r,%r" % (p.epoch, p.objective, held, p.w_complexity, p.epoch_seconds)
            )
        return lines

    def write_csv(self, path):
        text = "\n".join(self.csv_lines()) + "\n"
        if hasattr(path, "write"):
            path.write(text)
        else:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)


class WeightState:
    """Dense weights behind a deferred global scale factor.

    True weights are ``scale * v``.  Sparse updates touch only their own
    coordinates; the per-sample L2 decay multiplies ``scale`` in O(1).
    With averaging enabled, the running sum of post-update weight
    snapshots is maintained lazily per coordinate via prefix sums of the
    scale, so averaging also costs O(touched) per sample.
    """

    def __init__(self, n_features: int, averaging: bool = False):
        self.v = np.zeros(n_features)
        self.scale = 1.0
        self.samples = 0  # completed per-sample updates U
        self.cum_scale = 0.0  # sum of scale over completed samples
        self.averaging = averaging
        if averaging:
            self.acc = np.zeros(n_features)
            self.last_cum = np.zeros(n_features)

    def sparse_add(self, items, coeff: float):
        """w[fid] += coeff * value for each sparse item."""
        v = self.v
        c = self.scale
        if self.averaging:
            acc, last, cum = self.acc, self.last_cum, self.cum_scale
            for fid, value in items:
                acc[fid] += v[fid] * (cum - last[fid])
                last[fid] = cum
                v[fid] += coeff * value / c
        else:
            for fid, value in items:
                v[fid] += coeff * value / c

    def decay(self, factor: float):
        if factor != 1.0:
            self.scale *= factor

    def end_sample(self):
        self.samples += 1
        self.cum_scale += self.scale

    def dot_items(self, items) -> float:
        total = 0.0
        v = self.v
        for fid, value in items:
            total += v[fid] * value
        return self.scale * total

    def finite(self) -> bool:
        return math.isfinite(self.scale) and bool(np.isfinite(self.v).all())

    def current_weights(self) -> np.ndarray:
        return self.v * self.scale

    def averaged_weights(self) -> np.ndarray:
        if not self.averaging:
            raise RuntimeError("averaging is not enabled")
        if self.samples == 0:
            return self.v.copy()
        pending = self.v * (self.cum_scale - self.last_cum)
        return (self.acc + pending) / self.samples


@dataclass
class _CompiledSeq:
    pos_feats: list  # per position: list of (raw_id, value)
    gold_ids: list | None
    gold_items: dict | None
    gold_tags: list | None


def _as_sequences(data):
    return list(getattr(data, "sequences", data))


def _compile(sequences, model, require_gold):
    K = model.num_tags
    trans_base = model.index.transition_base if model.index.transitions else None
    compiled = []
    for i, seq in enumerate(sequences):
        n_columns = len(seq.tokens[0])
        pos_feats = [
            indexed_position_features(seq.tokens, t, model.templates, model.index, n_columns)
            for t in range(len(seq))
        ]
        if seq.gold is None:
            if require_gold:
                raise ConfigError("sequence %d has no gold tagging" % i)
            compiled.append(_CompiledSeq(pos_feats, None, None, None))
        else:
            gold_ids = model.tagset.ids(seq.gold)
            gold_items = path_items(pos_feats, gold_ids, K, trans_base)
            compiled.append(_CompiledSeq(pos_feats, gold_ids, gold_items, list(seq.gold)))
    return compiled


def run_epoch(step_fn, data, rng):
    """Visit every sample once in a fresh seeded permutation.

    Returns (order, wall seconds), timing the sample loop only; curve
    metrics are computed by the caller afterwards.
    """
    order = rng.permutation(len(data))
    t0 = time.perf_counter()
    for i in order:
        step_fn(int(i))
    return order, time.perf_counter() - t0


def _train_engine(data, heldout, cfg, template_text, step_factory, averaged, on_epoch_end):
    cfg.validate()
    sequences = _as_sequences(data)
    if not sequences:
        raise ConfigError("training set is empty")
    for i, seq in enumerate(sequences):
        if seq.gold is None:
            raise ConfigError("training sequence %d has no gold tagging" % i)
    n_columns = len(sequences[0].tokens[0])
    model = build_model(sequences, template_text, n_columns)
    compiled = _compile(sequences, model, require_gold=True)
    held_sequences = _as_sequences(heldout) if heldout is not None else []
    held_compiled = _compile(held_sequences, model, require_gold=True) if held_sequences else []

    K = model.num_tags
    trans_base = model.index.transition_base if model.index.transitions else None
    state = WeightState(model.index.n_features, averaging=averaged)
    emit_view = state.v[: model.index.n_raw * K].reshape(model.index.n_raw, K)
    trans_view = (
        state.v[model.index.transition_base :].reshape(K, K)
        if model.index.transitions
        else np.zeros((K, K))
    )

    def lattice_for(cs):
        emit = emission_scores(cs.pos_feats, emit_view, K)
        if state.scale != 1.0:
            emit *= state.scale
            trans = trans_view * state.scale
        else:
            trans = trans_view.copy()
        return Lattice(emit=emit, trans=trans)

    step = step_factory(
        model=model,
        compiled=compiled,
        state=state,
        cfg=cfg,
        lattice_for=lattice_for,
        trans_base=trans_base,
    )

    rng = np.random.default_rng(cfg.seed)
    curve = TrainCurve()
    since_check = [0]
    final_weights = None

    def checked_step(i, gamma, epoch):
        step(i, gamma)
        state.end_sample()
        if not math.isfinite(state.scale):
            raise NonFiniteError(i, epoch)
        since_check[0] += 1
        if since_check[0] >= FINITE_CHECK_INTERVAL:
            since_check[0] = 0
            if not state.finite():
                raise NonFiniteError(i, epoch)

    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_schedule == "exp":
            gamma = cfg.learning_rate * cfg.lr_decay ** (epoch - 1)
        else:
            gamma = cfg.learning_rate
        _, seconds = run_epoch(lambda i: checked_step(i, gamma, epoch), compiled, rng)
        if not state.finite():
            raise NonFiniteError(-1, epoch)
        weights = state.averaged_weights() if averaged else state.current_weights()
        objective = _objective_from_compiled(compiled, weights, model, cfg.l2)
        wc = float(np.abs(weights).mean())
        held_metric = None
        if held_compiled and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            held_metric = _heldout_metric(held_compiled, weights, model, cfg.metric)
        curve.points.append(
            CurvePoint(
                epoch=epoch,
                objective=objective,
                heldout_metric=held_metric,
                w_complexity=wc,
                epoch_seconds=seconds,
            )
        )
        if on_epoch_end is not None:
            on_epoch_end(epoch, weights)
        final_weights = weights

    model.weights = final_weights
    train_preds = _decode_compiled(compiled, final_weights, model)
    train_gold = [cs.gold_tags for cs in compiled]
    train_acc = _metric_value(train_gold, train_preds, "accuracy")
    model.meta = {
        "config": cfg.snapshot(),
        "train_accuracy": train_acc,
        "final_heldout_metric": curve.points[-1].heldout_metric,
        "n_features": int(model.index.n_features),
    }
    return model, curve


def _weights_views(weights, model):
    K = model.num_tags
    emit_w = weights[: model.index.n_raw * K].reshape(model.index.n_raw, K)
    if model.index.transitions:
        trans_w = weights[model.index.transition_base :].reshape(K, K)
    else:
        trans_w = np.zeros((K, K))
    return emit_w, trans_w


def _objective_from_compiled(compiled, weights, model, l2):
    emit_w, trans_w = _weights_views(weights, model)
    K = model.num_tags
    total = l2 * regularizer_value(weights)
    for cs in compiled:
        lat = Lattice(emit=emission_scores(cs.pos_feats, emit_w, K), trans=trans_w)
        total += forward_logz(lat) - path_score(lat, cs.gold_ids)
    return total


def _decode_compiled(compiled, weights, model):
    emit_w, trans_w = _weights_views(weights, model)
    K = model.num_tags
    preds = []
    for cs in compiled:
        lat = Lattice(emit=emission_scores(cs.pos_feats, emit_w, K), trans=trans_w)
        path, _ = viterbi(lat)
        preds.append([model.tagset.tag(t) for t in path])
    return preds


class _GoldView:
    """Adapter giving the evaluation functions a corpus-shaped object."""

    def __init__(self, gold_tag_lists):
        self.sequences = [_GoldSeq(tags) for tags in gold_tag_lists]


class _GoldSeq:
    def __init__(self, tags):
        self.gold = tags

    def __len__(self):
        return len(self.gold)


def _metric_value(gold_tag_lists, predictions, metric):
    view = _GoldView(gold_tag_lists)
    if metric == "chunk-f1":
        return chunk_f1(view, predictions).value
    return token_accuracy(view, predictions).value


def _heldout_metric(held_compiled, weights, model, metric):
    preds = _decode_compiled(held_compiled, weights, model)
    gold = [cs.gold_tags for cs in held_compiled]
    return _metric_value(gold, preds, metric)


# ---------------------------------------------------------------------------
# Per-algorithm sample steps


def _sapo_factory(model, compiled, state, cfg, lattice_for, trans_base):
    K = model.num_tags
    decay_l2 = cfg.l2 / len(compiled)
    use_beam = cfg.search == "beam"

    def step(i, gamma):
        cs = compiled[i]
        lat = lattice_for(cs)
        if use_beam:
            nb = beam_nbest(lat, cfg.n, cfg.beam_width)
        else:
            nb = astar_nbest(lat, cfg.n)
        nb = topn_distribution(nb)
        mixture = candidate_mixture(cs.pos_feats, nb.paths, nb.probs, K, trans_base)
        items = subtract_oracle(mixture, cs.gold_items)
        state.sparse_add(items, -gamma)
        state.decay(1.0 - gamma * decay_l2)

    return step


def _crf_sgd_factory(model, compiled, state, cfg, lattice_for, trans_base):
    K = model.num_tags
    decay_l2 = cfg.l2 / len(compiled)

    def step(i, gamma):
        cs = compiled[i]
        lat = lattice_for(cs)
        marg = forward_backward(lat)
        mixture = expected_items(cs.pos_feats, marg, K, trans_base)
        items = subtract_oracle(mixture, cs.gold_items)
        state.sparse_add(items, -gamma)
        state.decay(1.0 - gamma * decay_l2)

    return step


def _perceptron_factory(model, compiled, state, cfg, lattice_for, trans_base):
    K = model.num_tags

    def step(i, gamma):
        cs = compiled[i]
        pred, _ = viterbi(lattice_for(cs))
        if pred == cs.gold_ids:
            return
        mixture = candidate_mixture(cs.pos_feats, [tuple(pred)], [1.0], K, trans_base)
        items = subtract_oracle(mixture, cs.gold_items)
        state.sparse_add(items, -1.0)

    return step


def _hamming(a, b):
    return sum(x != y for x, y in zip(a, b))


def _pa_step_size(loss, margin, normsq, clip):
    """Passive-aggressive step: min(clip, (loss - margin) / ||dF||^2), >= 0."""
    viol = loss - margin
    if viol <= 0.0:
        return 0.0
    alpha = viol / normsq
    if alpha > clip:
        return clip
    return alpha


def _mira_factory(model, compiled, state, cfg, lattice_for, trans_base):
    K = model.num_tags
    clip = cfg.mira_clip

    def step(i, gamma):
        cs = compiled[i]
        pred, _ = viterbi(lattice_for(cs))
        if pred == cs.gold_ids:
            return
        mixture = candidate_mixture(cs.pos_feats, [tuple(pred)], [1.0], K, trans_base)
        items = subtract_oracle(mixture, cs.gold_items)  # F(pred) - F(gold) = -dF
        if not items:
            return  # feature-identical outputs: no usable direction
        normsq = 0.0
        for _, value in items:
            normsq += value * value
        margin = -state.dot_items(items)  # w . dF
        alpha = _pa_step_size(_hamming(pred, cs.gold_ids), margin, normsq, clip)
        if alpha > 0.0:
            state.sparse_add(items, -alpha)

    return step


def _sparse_dot(a_items, b_dict):
    total = 0.0
    for fid, value in a_items:
        other = b_dict.get(fid)
        if other is not None:
            total += value * other
    return total


def _mira_nbest_factory(model, compiled, state, cfg, lattice_for, trans_base):
    K = model.num_tags
    clip = cfg.mira_clip
    use_beam = cfg.search == "beam"

    def step(i, gamma):
        cs = compiled[i]
        lat = lattice_for(cs)
        if use_beam:
            nb = beam_nbest(lat, cfg.n, cfg.beam_width)
        else:
            nb = astar_nbest(lat, cfg.n)
        cands = []  # (items, item_dict, loss, margin)
        for path in nb.paths:
            loss = _hamming(path, cs.gold_ids)
            if loss == 0:
                continue
            mixture = candidate_mixture(cs.pos_feats, [path], [1.0], K, trans_base)
            items = subtract_oracle(mixture, cs.gold_items)
            if not items:
                continue
            cands.append((items, dict(items), loss, -state.dot_items(items)))
        if not cands:
            return
        nc = len(cands)
        gram = [[0.0] * nc for _ in range(nc)]
        for a in range(nc):
            for b in range(a, nc):
                g = _sparse_dot(cands[a][0], cands[b][1])
                gram[a][b] = gram[b][a] = g
        alphas = [0.0] * nc
        for _ in range(HILDRETH_MAX_PASSES):
            changed = False
            for k in range(nc):
                items_k, _, loss_k, margin_k = cands[k]
                adj = margin_k
                for j in range(nc):
                    if alphas[j] != 0.0:
                        adj += alphas[j] * gram[k][j]
                new = alphas[k] + (loss_k - adj) / gram[k][k]
                if new < 0.0:
                    new = 0.0
                elif new > clip:
                    new = clip
                if abs(new - alphas[k]) > HILDRETH_TOL:
                    alphas[k] = new
                    changed = True
            if not changed:
                break
        update: dict[int, float] = {}
        for k in range(nc):
            a_k = alphas[k]
            if a_k == 0.0:
                continue
            for fid, value in cands[k][0]:
                update[fid] = update.get(fid, 0.0) + a_k * value
        if update:
            state.sparse_add(sorted(update.items()), -1.0)

    return step


# ---------------------------------------------------------------------------
# Public trainer entry points


def train_sapo(data, heldout, cfg: TrainConfig, template_text, on_epoch_end=None):
    if cfg.algorithm != "sapo":
        raise ConfigError("train_sapo requires cfg.algorithm == 'sapo'")
    return _train_engine(data, heldout, cfg, template_text, _sapo_factory, False, on_epoch_end)


def train_crf_sgd(data, heldout, cfg: TrainConfig, template_text, on_epoch_end=None):
    if cfg.algorithm != "crf-sgd":
        raise ConfigError("train_crf_sgd requires cfg.algorithm == 'crf-sgd'")
    return _train_engine(data, heldout, cfg, template_text, _crf_sgd_factory, False, on_epoch_end)


def train_perceptron(data, heldout, cfg: TrainConfig, template_text, averaged=False, on_epoch_end=None):
    if cfg.algorithm not in ("perc", "perc-avg"):
        raise ConfigError("train_perceptron requires a 'perc' or 'perc-avg' config")
    return _train_engine(
        data, heldout, cfg, template_text, _perceptron_factory, averaged, on_epoch_end
    )


def train_mira(data, heldout, cfg: TrainConfig, template_text, averaged=False, on_epoch_end=None):
    if cfg.algorithm not in ("mira", "mira-avg"):
        raise ConfigError("train_mira requires a 'mira' or 'mira-avg' config")
    return _train_engine(data, heldout, cfg, template_text, _mira_factory, averaged, on_epoch_end)


def train_mira_nbest(data, heldout, cfg: TrainConfig, template_text, averaged=False, on_epoch_end=None):
    if cfg.algorithm not in ("mira-nbest", "mira-nbest-avg"):
        raise ConfigError("train_mira_nbest requires a 'mira-nbest' or 'mira-nbest-avg' config")
    return _train_engine(
        data, heldout, cfg, template_text, _mira_nbest_factory, averaged, on_epoch_end
    )


def train(data, heldout, cfg: TrainConfig, template_text, on_epoch_end=None):
    """Dispatch to the trainer selected by ``cfg.algorithm``."""
    a = cfg.algorithm
    if a == "sapo":
        return train_sapo(data, heldout, cfg, template_text, on_epoch_end)
    if a == "crf-sgd":
        return train_crf_sgd(data, heldout, cfg, template_text, on_epoch_end)
    if a in ("perc", "perc-avg"):
        return train_perceptron(data, heldout, cfg, template_text, a == "perc-avg", on_epoch_end)
    if a in ("mira", "mira-avg"):
        return train_mira(data, heldout, cfg, template_text, a == "mira-avg", on_epoch_end)
    if a in ("mira-nbest", "mira-nbest-avg"):
        return train_mira_nbest(
            data, heldout, cfg, template_text, a == "mira-nbest-avg", on_epoch_end
        )
    raise ConfigError("unknown algorithm %r" % a)
