"""Next-relation scorers and the weak-supervision trainer.

A scorer maps (question, decoded prefix, valid options) to a probability
distribution over exactly those options.  Three implementations:

* UniformScorer: every option equally likely.
* OracleScorer: puts almost all mass on the next relation of a known gold
  sequence; used for benchmarks and upper-bound runs.
* FeaturizedScorer: a trainable model.  Hashed question features are
  projected to a state vector, the decoded prefix is folded through a tanh
  recurrence, and the two are combined multiplicatively so the prefix can
  gate which question features are read at each step:

      h_q = Wq^T f(question)
      h_0 = 0,  h_t = tanh(Wr h_{t-1} + E[r_t])
      logit(r) = E[r] . (h_q * h_p) + b[r] + w_ov * overlap(question, r)

  trained by SGD on teacher-forced cross-entropy with path dropout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import features
from .coalesce import EntitySet, RelationSeq, enumerate_reachable_sets, reach_step
from .kg import SELF_ID, KnowledgeGraph

logger = logging.getLogger(__name__)

DISTRIBUTION_TOL = 1e-6
ORACLE_SMOOTHING = 1e-3

CHECKPOINT_VERSION = 1


class ScorerContractError(ValueError):
    """A scorer returned something that is not a distribution over the options."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or had nothing to train on."""


@dataclass(frozen=True)
class ScoreRequest:
    question: tuple[str, ...]
    prefix: RelationSeq
    options: tuple[int, ...]


@dataclass(frozen=True)
class QAExample:
    question: tuple[str, ...]
    anchors: EntitySet
    answers: EntitySet
    gold_sequences: tuple[RelationSeq, ...] | None = None


def check_distribution(probs: np.ndarray, n_options: int) -> np.ndarray:
    """Validate the scorer contract; returns the probabilities as float64."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if probs.size != n_options:
        raise ScorerContractError(
            f"scorer returned {probs.size} probabilities for {n_options} options"
        )
    if not np.all(np.isfinite(probs)):
        raise ScorerContractError("scorer returned non-finite probabilities")
    if (probs < 0).any():
        raise ScorerContractError("scorer returned a negative probability")
    total = float(probs.sum())
    if abs(total - 1.0) > DISTRIBUTION_TOL:
        raise ScorerContractError(f"scorer probabilities sum to {total}, not 1")
    return probs


class UniformScorer:
    """Equal probability for every valid option."""

    def score(self, req: ScoreRequest) -> np.ndarray:
        n = len(req.options)
        if n == 0:
            raise ScorerContractError("options must be nonempty")
        return np.full(n, 1.0 / n)


class OracleScorer:
    """Follows known gold sequences, leaving `smoothing` mass to the rest.

    Gold sequences include the leading self relation.  When the decoded
    prefix equals a full gold sequence, the terminal self option becomes
    gold.  Can hold one fixed gold set, or a per-question map for batch
    evaluation.
    """

    def __init__(
        self,
        gold_sequences: Iterable[RelationSeq] = (),
        *,
        by_question: dict[tuple[str, ...], Sequence[RelationSeq]] | None = None,
        smoothing: float = ORACLE_SMOOTHING,
    ):
        self.gold_sequences = tuple(tuple(s) for s in gold_sequences)
        self.by_question = (
            None
            if by_question is None
            else {q: tuple(tuple(s) for s in seqs) for q, seqs in by_question.items()}
        )
        self.smoothing = float(smoothing)

    def _golds_for(self, question: tuple[str, ...]) -> tuple[RelationSeq, ...]:
        if self.by_question is not None:
            return self.by_question.get(tuple(question), ())
        return self.gold_sequences

    def score(self, req: ScoreRequest) -> np.ndarray:
        n = len(req.options)
        if n == 0:
            raise ScorerContractError("options must be nonempty")
        gold_next: set[int] = set()
        prefix = tuple(req.prefix)
        for gs in self._golds_for(req.question):
            if len(gs) > len(prefix) and gs[: len(prefix)] == prefix:
                gold_next.add(gs[len(prefix)])
            elif gs == prefix:
                gold_next.add(SELF_ID)
        hits = [i for i, o in enumerate(req.options) if o in gold_next]
        probs = np.zeros(n)
        if not hits:
            probs[:] = 1.0 / n
        elif len(hits) == n:
            probs[:] = 1.0 / n
        else:
            probs[:] = self.smoothing / (n - len(hits))
            probs[hits] = (1.0 - self.smoothing) / len(hits)
        return probs


class FeaturizedScorer:
    """Trainable next-relation model over hashed question features."""

    def __init__(
        self,
        relation_names: Sequence[str],
        dim: int = 64,
        seed: int = 0,
        feature_bits: int = features.DEFAULT_FEATURE_BITS,
    ):
        self.relation_names = tuple(relation_names)
        self.dim = int(dim)
        self.seed = int(seed)
        self.feature_bits = int(feature_bits)
        n_feat = 1 << self.feature_bits
        r1 = len(self.relation_names)
        rng = np.random.default_rng(seed)
        scale = 0.1
        self.rel_emb = rng.normal(0.0, scale, size=(r1, self.dim))
        self.q_proj = rng.normal(0.0, scale, size=(n_feat, self.dim))
        self.recur = rng.normal(0.0, scale / np.sqrt(self.dim), size=(self.dim, self.dim))
        self.bias = np.zeros(r1)
        self.overlap_w = np.zeros(1)
        self._rel_tokens = [features.name_tokens(n) for n in self.relation_names]

    # -- forward -------------------------------------------------------

    def _question_vec(self, question: tuple[str, ...]):
        qidx, qcnt = features.question_features(tuple(question), self.feature_bits)
        if qidx.size:
            hq = self.q_proj[qidx].T @ qcnt
        else:
            hq = np.zeros(self.dim)
        return qidx, qcnt, hq

    def _prefix_states(self, prefix: RelationSeq) -> list[np.ndarray]:
        states = [np.zeros(self.dim)]
        h = states[0]
        for r in prefix:
            h = np.tanh(self.recur @ h + self.rel_emb[int(r)])
            states.append(h)
        return states

    def _overlaps(self, req: ScoreRequest) -> np.ndarray:
        q = tuple(req.question)
        return np.array(
            [features.overlap_count(q, self._rel_tokens[int(o)]) for o in req.options]
        )

    def _forward(self, req: ScoreRequest):
        if not req.options:
            raise ScorerContractError("options must be nonempty")
        opts = np.asarray(req.options, dtype=np.int64)
        qidx, qcnt, hq = self._question_vec(req.question)
        states = self._prefix_states(req.prefix)
        hp = states[-1]
        s = hq * hp
        ov = self._overlaps(req)
        logits = self.rel_emb[opts] @ s + self.bias[opts] + self.overlap_w[0] * ov
        logits -= logits.max()
        ex = np.exp(logits)
        probs = ex / ex.sum()
        return opts, qidx, qcnt, hq, states, hp, s, ov, probs

    def score(self, req: ScoreRequest) -> np.ndarray:
        return self._forward(req)[-1]

    # -- training ------------------------------------------------------

    def loss(self, req: ScoreRequest, gold: int) -> float:
        probs = self._forward(req)[-1]
        gi = req.options.index(gold)
        return float(-np.log(probs[gi] + 1e-300))

    def loss_and_grads(self, req: ScoreRequest, gold: int):
        opts, qidx, qcnt, hq, states, hp, s, ov, probs = self._forward(req)
        gi = req.options.index(gold)
        loss = float(-np.log(probs[gi] + 1e-300))

        g = probs.copy()
        g[gi] -= 1.0
        d_rel_emb = np.zeros_like(self.rel_emb)
        d_bias = np.zeros_like(self.bias)
        np.add.at(d_bias, opts, g)
        np.add.at(d_rel_emb, opts, np.outer(g, s))
        ds = self.rel_emb[opts].T @ g
        d_hq = ds * hp
        d_qrows = np.outer(qcnt, d_hq) if qidx.size else np.zeros((0, self.dim))
        dh = ds * hq
        d_recur = np.zeros_like(self.recur)
        for t in range(len(req.prefix), 0, -1):
            h_t = states[t]
            da = dh * (1.0 - h_t * h_t)
            d_recur += np.outer(da, states[t - 1])
            d_rel_emb[int(req.prefix[t - 1])] += da
            dh = self.recur.T @ da
        d_overlap = np.array([float(g @ ov)])
        grads = {
            "rel_emb": d_rel_emb,
            "bias": d_bias,
            "recur": d_recur,
            "overlap_w": d_overlap,
            "q_proj": (qidx, d_qrows),
        }
        return loss, grads

    def apply_gradients(self, grads, lr: float) -> None:
        self.rel_emb -= lr * grads["rel_emb"]
        self.bias -= lr * grads["bias"]
        self.recur -= lr * grads["recur"]
        self.overlap_w -= lr * grads["overlap_w"]
        qidx, rows = grads["q_proj"]
        if qidx.size:
            self.q_proj[qidx] -= lr * rows

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {
            "rel_emb": self.rel_emb,
            "q_proj": self.q_proj,
            "recur": self.recur,
            "bias": self.bias,
            "overlap_w": self.overlap_w,
        }


def gradient_check(model: FeaturizedScorer, req: ScoreRequest, gold: int) -> float:
    """Max relative error between analytic and central-difference gradients
    over every parameter touched by the request."""
    _, analytic = model.loss_and_grads(req, gold)
    h = 1e-5
    worst = 0.0

    def compare(arr: np.ndarray, index: tuple, a: float) -> None:
        nonlocal worst
        orig = arr[index]
        arr[index] = orig + h
        up = model.loss(req, gold)
        arr[index] = orig - h
        down = model.loss(req, gold)
        arr[index] = orig
        n = (up - down) / (2 * h)
        err = abs(a - n) / max(abs(a), abs(n), 1e-6)
        worst = max(worst, err)

    touched_rels = sorted(set(map(int, req.options)) | set(map(int, req.prefix)))
    for r in touched_rels:
        for j in range(model.dim):
            compare(model.rel_emb, (r, j), analytic["rel_emb"][r, j])
        compare(model.bias, (r,), analytic["bias"][r])
    for i in range(model.dim):
        for j in range(model.dim):
            compare(model.recur, (i, j), analytic["recur"][i, j])
    qidx, rows = analytic["q_proj"]
    for k, fi in enumerate(qidx):
        for j in range(model.dim):
            compare(model.q_proj, (int(fi), j), rows[k, j])
    compare(model.overlap_w, (0,), analytic["overlap_w"][0])
    return worst


# ----------------------------------------------------------------------
# weak supervision
# ----------------------------------------------------------------------


def weak_labels(g: KnowledgeGraph, ex: QAExample, max_len: int) -> list[RelationSeq]:
    """Relation sequences whose reach is a smallest reachable superset of
    the answers, searching sequences up to max_len.

    Returns an empty list when no reachable set within the horizon covers
    the answers.  When the minimum-cardinality superset is not unique,
    every sequence reaching any superset of that cardinality is returned.
    """
    if len(ex.answers) == 0:
        raise ValueError("example has no answers")
    reached = enumerate_reachable_sets(g, ex.anchors, max_len)
    covering = [(seq, es) for seq, es in reached if ex.answers.issubset(es)]
    if not covering:
        return []
    smallest = min(len(es) for _, es in covering)
    return [seq for seq, es in covering if len(es) == smallest]


def training_options(
    g: KnowledgeGraph, frontier: EntitySet, step: int
) -> list[int]:
    """Valid option set at a decoding step, mirroring inference: outgoing
    relations of the frontier, plus the terminal self after step 1."""
    opts = [int(r) for r in g.outgoing_relations(frontier)]
    if step > 1:
        opts = [SELF_ID] + opts
    return opts


def teacher_forced_loss(
    scorer, g: KnowledgeGraph, ex: QAExample, *, max_len: int = 3
) -> float:
    """Mean cross-entropy of a scorer along the example's gold sequences."""
    golds = ex.gold_sequences or tuple(weak_labels(g, ex, max_len))
    golds = [gs for gs in golds if len(gs) >= 2]
    if not golds:
        raise ValueError("example has no usable gold sequences")
    total, steps = 0.0, 0
    for gold in golds:
        frontier = ex.anchors
        for i in range(1, len(gold) + 1):
            target = gold[i] if i < len(gold) else SELF_ID
            options = training_options(g, frontier, i)
            probs = check_distribution(
                scorer.score(ScoreRequest(ex.question, tuple(gold[:i]), tuple(options))),
                len(options),
            )
            total += -float(np.log(probs[options.index(target)] + 1e-300))
            steps += 1
            if i < len(gold):
                frontier = reach_step(g, frontier, gold[i])
    return total / steps


@dataclass
class TrainResult:
    model: FeaturizedScorer
    losses: list[float] = field(default_factory=list)
    skipped_examples: int = 0
    steps: int = 0


def train(
    model: FeaturizedScorer,
    g: KnowledgeGraph,
    data: Sequence[QAExample],
    epochs: int,
    lr: float,
    p_drop_init: float,
    *,
    seed: int = 0,
    weak_label_max_len: int = 3,
) -> TrainResult:
    """Teacher-forced SGD with path dropout.

    Per step, each non-gold option is removed with probability p_drop,
    which decays linearly from p_drop_init to 0 at half the epochs and
    stays 0 afterwards.  Examples whose gold sequences are unavailable
    within the horizon are skipped and counted.  Gold sequences, when an
    example carries several, are weighted uniformly.
    """
    rng = np.random.default_rng(seed)
    prepared: list[tuple[QAExample, list[RelationSeq]]] = []
    skipped = 0
    for ex in data:
        golds = list(ex.gold_sequences or weak_labels(g, ex, weak_label_max_len))
        golds = [tuple(gs) for gs in golds if len(gs) >= 2]
        if not golds:
            skipped += 1
            continue
        prepared.append((ex, golds))
    if skipped:
        logger.info("skipped %d examples without usable gold sequences", skipped)
    if not prepared:
        raise TrainingError("no trainable examples")

    result = TrainResult(model=model, skipped_examples=skipped)
    half = max(1, epochs // 2)
    for epoch in range(epochs):
        p_drop = p_drop_init * max(0.0, 1.0 - epoch / half)
        total, steps = 0.0, 0
        for j in rng.permutation(len(prepared)):
            ex, golds = prepared[int(j)]
            for gold in golds:
                frontier = ex.anchors
                for i in range(1, len(gold) + 1):
                    target = gold[i] if i < len(gold) else SELF_ID
                    options = training_options(g, frontier, i)
                    if target not in options:
                        raise TrainingError(
                            f"gold relation {target} not among valid options"
                        )
                    if p_drop > 0.0:
                        options = [
                            o
                            for o in options
                            if o == target or rng.random() >= p_drop
                        ]
                    req = ScoreRequest(ex.question, tuple(gold[:i]), tuple(options))
                    loss, grads = model.loss_and_grads(req, target)
                    model.apply_gradients(grads, lr)
                    total += loss
                    steps += 1
                    if i < len(gold):
                        frontier = reach_step(g, frontier, gold[i])
        mean = total / max(steps, 1)
        if not np.isfinite(mean):
            raise TrainingError(
                f"non-finite mean loss {mean} at epoch {epoch} (lr={lr}, steps={steps})"
            )
        result.losses.append(mean)
        result.steps += steps
    return result


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------


def save_scorer(model: FeaturizedScorer, path) -> None:
    np.savez_compressed(
        path,
        kind="featurized-scorer",
        version=CHECKPOINT_VERSION,
        dim=model.dim,
        seed=model.seed,
        feature_bits=model.feature_bits,
        relation_names=np.array(model.relation_names),
        **model.parameter_arrays(),
    )


def load_scorer(path) -> FeaturizedScorer:
    with np.load(path, allow_pickle=False) as data:
        if str(data["kind"]) != "featurized-scorer":
            raise ValueError(f"not a scorer checkpoint: {path}")
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        names = [str(n) for n in data["relation_names"]]
        model = FeaturizedScorer(
            names,
            dim=int(data["dim"]),
            seed=int(data["seed"]),
            feature_bits=int(data["feature_bits"]),
        )
        model.rel_emb = data["rel_emb"].astype(np.float64)
        model.q_proj = data["q_proj"].astype(np.float64)
        model.recur = data["recur"].astype(np.float64)
        model.bias = data["bias"].astype(np.float64)
        model.overlap_w = data["overlap_w"].astype(np.float64)
    return model


# ----------------------------------------------------------------------
# QA dataset files: question TAB anchor,names TAB answer,names
# ----------------------------------------------------------------------


def load_qa_dataset(path, g: KnowledgeGraph) -> list[QAExample]:
    out: list[QAExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            question = tuple(parts[0].split())
            anchors = EntitySet(g.entity_id(n.strip()) for n in parts[1].split(",") if n.strip())
            answers = EntitySet(g.entity_id(n.strip()) for n in parts[2].split(",") if n.strip())
            if not len(anchors) or not len(answers):
                raise ValueError(f"{path}:{lineno}: anchors and answers must be nonempty")
            out.append(QAExample(question=question, anchors=anchors, answers=answers))
    return out


def save_qa_dataset(examples: Iterable[QAExample], path, g: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            q = " ".join(ex.question)
            a = ",".join(g.entity_name(i) for i in ex.anchors)
            ans = ",".join(g.entity_name(i) for i in ex.answers)
            fh.write(f"{q}\t{a}\t{ans}\n")
