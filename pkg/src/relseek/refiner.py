"""Candidate refinement: a question-conditioned node scorer on a subgraph.

The model runs a fixed number of relation-gated message-passing rounds and
reads out one scalar score per node.  Gates are sigmoid functions of the
hashed question features, one gate per relation id, so the question decides
which edge types carry messages.  Predictions are hard-constrained to the
candidate set: refine() ranks candidates only, never other nodes.

    h_v^0   = tanh(W_in [1, anchor_v] + W_qn^T f(question))
    gate_r  = sigmoid(a_r . f(question) + c_r)
    m_v^t   = sum over edges (u, r, v) of gate_r * (W_msg h_u^{t-1})
    h_v^t   = tanh(W_self h_v^{t-1} + m_v^t)
    score_v = w_out . h_v^T + b_out

Everything is float64 numpy with hand-written backprop; train_refiner runs
plain SGD on per-candidate binary cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import features
from .coalesce import EntitySet
from .kg import KnowledgeGraph

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RefineEpisode:
    """One training episode; all entity ids are local to `subgraph`."""

    subgraph: KnowledgeGraph
    question: tuple[str, ...]
    anchors: EntitySet
    candidates: EntitySet
    answers: EntitySet


class RefinerModel:
    def __init__(
        self,
        n_relations: int,
        dim: int = 32,
        rounds: int = 2,
        seed: int = 0,
        feature_bits: int = features.DEFAULT_FEATURE_BITS,
    ):
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.n_relations = int(n_relations)
        self.dim = int(dim)
        self.rounds = int(rounds)
        self.seed = int(seed)
        self.feature_bits = int(feature_bits)
        n_feat = 1 << self.feature_bits
        rng = np.random.default_rng(seed)
        scale = 0.3
        self.w_in = rng.normal(0.0, scale, size=(self.dim, 2))
        self.w_qn = rng.normal(0.0, 0.05, size=(n_feat, self.dim))
        self.w_msg = rng.normal(0.0, scale / np.sqrt(self.dim), size=(self.dim, self.dim))
        self.w_self = rng.normal(0.0, scale / np.sqrt(self.dim), size=(self.dim, self.dim))
        self.gate_w = rng.normal(0.0, 0.05, size=(self.n_relations, n_feat))
        self.gate_b = np.zeros(self.n_relations)
        self.w_out = rng.normal(0.0, scale, size=self.dim)
        self.b_out = np.zeros(1)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {
            "w_in": self.w_in,
            "w_qn": self.w_qn,
            "w_msg": self.w_msg,
            "w_self": self.w_self,
            "gate_w": self.gate_w,
            "gate_b": self.gate_b,
            "w_out": self.w_out,
            "b_out": self.b_out,
        }

    # -- forward -------------------------------------------------------

    def _forward(self, sub: KnowledgeGraph, question: tuple[str, ...], anchors: EntitySet):
        n = sub.num_entities
        src, rel, dst = sub.edge_arrays()
        qidx, qcnt = features.question_features(tuple(question), self.feature_bits)

        gate_logits = self.gate_b.copy()
        if qidx.size:
            gate_logits = gate_logits + self.gate_w[:, qidx] @ qcnt
        gates = 1.0 / (1.0 + np.exp(-gate_logits))

        x = np.zeros((n, 2))
        x[:, 0] = 1.0
        x[anchors.ids, 1] = 1.0
        qvec = self.w_qn[qidx].T @ qcnt if qidx.size else np.zeros(self.dim)
        pre0 = x @ self.w_in.T + qvec
        h = np.tanh(pre0)

        hs = [h]
        projected = []
        for _ in range(self.rounds):
            proj = hs[-1] @ self.w_msg.T
            msgs = proj[src] * gates[rel][:, None]
            agg = np.zeros((n, self.dim))
            np.add.at(agg, dst, msgs)
            nxt = np.tanh(hs[-1] @ self.w_self.T + agg)
            projected.append(proj)
            hs.append(nxt)
        scores = hs[-1] @ self.w_out + self.b_out[0]
        cache = (src, rel, dst, qidx, qcnt, gates, x, hs, projected)
        return scores, cache

    def node_scores(
        self, sub: KnowledgeGraph, question: Sequence[str], anchors: EntitySet
    ) -> np.ndarray:
        return self._forward(sub, tuple(question), anchors)[0]

    # -- backward ------------------------------------------------------

    def _backward(self, cache, d_scores: np.ndarray) -> dict[str, np.ndarray]:
        src, rel, dst, qidx, qcnt, gates, x, hs, projected = cache
        grads = {name: np.zeros_like(arr) for name, arr in self.parameter_arrays().items()}

        grads["w_out"] += hs[-1].T @ d_scores
        grads["b_out"][0] += d_scores.sum()
        dh = np.outer(d_scores, self.w_out)
        d_gates = np.zeros_like(gates)
        for t in range(self.rounds - 1, -1, -1):
            h_next = hs[t + 1]
            da = dh * (1.0 - h_next * h_next)
            grads["w_self"] += da.T @ hs[t]
            d_agg = da
            d_msgs = d_agg[dst]
            proj = projected[t]
            np.add.at(d_gates, rel, np.einsum("ij,ij->i", d_msgs, proj[src]))
            d_proj_rows = d_msgs * gates[rel][:, None]
            d_proj = np.zeros_like(proj)
            np.add.at(d_proj, src, d_proj_rows)
            grads["w_msg"] += d_proj.T @ hs[t]
            dh = da @ self.w_self + d_proj @ self.w_msg
        da0 = dh * (1.0 - hs[0] * hs[0])
        grads["w_in"] += da0.T @ x
        if qidx.size:
            dqvec = da0.sum(axis=0)
            grads["w_qn"][qidx] += np.outer(qcnt, dqvec)
            d_gate_logits = d_gates * gates * (1.0 - gates)
            grads["gate_w"][:, qidx] += np.outer(d_gate_logits, qcnt)
            grads["gate_b"] += d_gate_logits
        else:
            d_gate_logits = d_gates * gates * (1.0 - gates)
            grads["gate_b"] += d_gate_logits
        return grads

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, arr in self.parameter_arrays().items():
            arr -= lr * grads[name]


def refine(
    model: RefinerModel,
    sub: KnowledgeGraph,
    question: Sequence[str],
    anchors: EntitySet,
    candidates: EntitySet,
) -> list[tuple[int, float]]:
    """Rank the candidate nodes by refined score, best first.

    Only candidates are ever returned; ties break on the lower entity id.
    """
    if len(candidates) == 0:
        raise ValueError("candidates must be nonempty")
    for name, group in (("candidate", candidates), ("anchor", anchors)):
        if len(group) and int(group.ids.max()) >= sub.num_entities:
            raise ValueError(f"{name} id outside the subgraph")
    scores = model.node_scores(sub, question, anchors)
    ranked = sorted(
        ((int(v), float(scores[int(v)])) for v in candidates),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked


def _episode_loss_grads(model: RefinerModel, ep: RefineEpisode):
    scores, cache = model._forward(ep.subgraph, tuple(ep.question), ep.anchors)
    cand = ep.candidates.ids
    y = np.isin(cand, ep.answers.ids).astype(np.float64)
    s = scores[cand]
    # stable BCE: mean(softplus(s) - y*s)
    loss = float(np.mean(np.logaddexp(0.0, s) - y * s))
    p = 1.0 / (1.0 + np.exp(-s))
    d_scores = np.zeros_like(scores)
    d_scores[cand] = (p - y) / cand.size
    grads = model._backward(cache, d_scores)
    return loss, grads


@dataclass
class RefinerTrainResult:
    model: RefinerModel
    losses: list[float] = field(default_factory=list)
    skipped_episodes: int = 0


def train_refiner(
    model: RefinerModel,
    episodes: Sequence[RefineEpisode],
    epochs: int,
    lr: float,
    *,
    seed: int = 0,
) -> RefinerTrainResult:
    """SGD on per-candidate binary cross-entropy (answer vs non-answer).

    Episodes whose answers are disjoint from their candidates are skipped
    and counted.  Zero epochs leaves the model untouched."""
    usable = [ep for ep in episodes if len(ep.answers.intersection(ep.candidates))]
    skipped = len(episodes) - len(usable)
    if skipped:
        logger.info("skipped %d episodes with answers disjoint from candidates", skipped)
    result = RefinerTrainResult(model=model, skipped_episodes=skipped)
    if not usable:
        return result
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        total = 0.0
        for j in rng.permutation(len(usable)):
            loss, grads = _episode_loss_grads(model, usable[int(j)])
            model.apply_gradients(grads, lr)
            total += loss
        mean = total / len(usable)
        if not np.isfinite(mean):
            raise RuntimeError(f"non-finite refiner loss {mean}")
        result.losses.append(mean)
    return result


def gradient_check(model: RefinerModel, ep: RefineEpisode) -> float:
    """Max relative error of analytic vs central-difference gradients over
    all parameters touched by the episode."""
    _, analytic = _episode_loss_grads(model, ep)
    h = 1e-5
    worst = 0.0

    def loss_only() -> float:
        return _episode_loss_grads(model, ep)[0]

    def compare(arr: np.ndarray, index: tuple, a: float) -> None:
        nonlocal worst
        orig = arr[index]
        arr[index] = orig + h
        up = loss_only()
        arr[index] = orig - h
        down = loss_only()
        arr[index] = orig
        n = (up - down) / (2 * h)
        err = abs(a - n) / max(abs(a), abs(n), 1e-6)
        worst = max(worst, err)

    qidx, _ = features.question_features(tuple(ep.question), model.feature_bits)
    _, rel, _ = ep.subgraph.edge_arrays()
    touched_rels = np.unique(rel)
    for name in ("w_in", "w_msg", "w_self"):
        arr = getattr(model, name)
        for idx in np.ndindex(arr.shape):
            compare(arr, idx, analytic[name][idx])
    for j in range(model.dim):
        compare(model.w_out, (j,), analytic["w_out"][j])
    compare(model.b_out, (0,), analytic["b_out"][0])
    for fi in qidx:
        for j in range(model.dim):
            compare(model.w_qn, (int(fi), j), analytic["w_qn"][int(fi), j])
        for r in touched_rels:
            compare(model.gate_w, (int(r), int(fi)), analytic["gate_w"][int(r), int(fi)])
    for r in touched_rels:
        compare(model.gate_b, (int(r),), analytic["gate_b"][int(r)])
    return worst


def save_refiner(model: RefinerModel, path) -> None:
    np.savez_compressed(
        path,
        kind="refiner",
        version=CHECKPOINT_VERSION,
        n_relations=model.n_relations,
        dim=model.dim,
        rounds=model.rounds,
        seed=model.seed,
        feature_bits=model.feature_bits,
        **model.parameter_arrays(),
    )


def load_refiner(path) -> RefinerModel:
    with np.load(path, allow_pickle=False) as data:
        if str(data["kind"]) != "refiner":
            raise ValueError(f"not a refiner checkpoint: {path}")
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        model = RefinerModel(
            n_relations=int(data["n_relations"]),
            dim=int(data["dim"]),
            rounds=int(data["rounds"]),
            seed=int(data["seed"]),
            feature_bits=int(data["feature_bits"]),
        )
        for name, arr in model.parameter_arrays().items():
            arr[...] = data[name].astype(np.float64)
    return model
