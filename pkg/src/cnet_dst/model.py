"""The dialog state tracker network, its loss, training loop, metrics and checkpoints.

Architecture per dialog: word embeddings -> dense ReLU layer -> cnet GRU
running over the whole dialog (system act words as single-hypothesis
timesteps, then the user cnet) -> per turn the states after the system and
the user utterance are combined affinely -> one softmax head per goal slot and
a sigmoid per requestable slot.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import numerics as nx
from .cnet import ConfusionNetwork
from .corpus import Vocabulary
from .encoder import (
    GruParams, PoolingMode, StepPlan, TurnCombinerParams, build_batch_plan, combine_turn, encode_batch, plan_steps,
)
from .errors import CheckpointError, ConfigError, StructureError, TrainingError
from .numerics import Tensor
from .ontology import DialogState, Ontology

REQUESTS = "requests"

# Training epochs per head group, as in the original setup.
GROUP_EPOCHS = {"requests": 20, "area": 50, "pricerange": 50, "food": 100}
DEFAULT_EPOCHS = 50

TurnInputs = Sequence[tuple[Sequence[str], ConfusionNetwork]]


@dataclass
class ModelConfig:
    embed_dim: int = 32
    dense_units: int = 64
    gru_units: int = 32
    combine_dim: int = 16
    pooling: str = "weighted"
    renormalize_pooling: bool = False
    dropout: float = 0.5
    l2: float = 0.001
    lr: float = 0.001
    batch_dialogs: int = 10

    def __post_init__(self):
        PoolingMode.parse(self.pooling)
        for name in ("embed_dim", "dense_units", "gru_units", "combine_dim", "batch_dialogs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.l2 < 0 or self.lr <= 0:
            raise ConfigError("l2 must be >= 0 and lr > 0")

    @classmethod
    def full_size(cls, **overrides) -> "ModelConfig":
        """300-d embeddings, 300 dense units, 100 GRU units, 50-d turn combination."""
        base = dict(embed_dim=300, dense_units=300, gru_units=100, combine_dim=50)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class PreparedDialog:
    """Index arrays for one dialog under one vocabulary and pooling mode."""

    token_ids: np.ndarray
    steps: tuple[StepPlan, ...]
    sys_rows: np.ndarray
    user_rows: np.ndarray

    @property
    def n_turns(self) -> int:
        return len(self.sys_rows)


@dataclass(frozen=True)
class TurnPrediction:
    goal_probs: dict
    request_probs: dict
    state: DialogState


class DstModel:
    """One tracker network carrying the output heads listed in ``heads``.

    ``heads`` holds goal slot names and/or ``"requests"``; by default every
    goal slot plus the requests head.
    """

    def __init__(self, vocab: Vocabulary, ontology: Ontology, config: Optional[ModelConfig] = None,
                 heads: Optional[Sequence[str]] = None, seed: int = 0,
                 embeddings: Optional[np.ndarray] = None):
        self.vocab = vocab
        self.ontology = ontology
        self.config = config or ModelConfig()
        self.heads = tuple(heads) if heads is not None else ontology.slot_names + (REQUESTS,)
        for h in self.heads:
            if h != REQUESTS and h not in ontology.goal_slots:
                raise ConfigError(f"unknown head {h!r}")
        if not self.heads:
            raise ConfigError("a model needs at least one head")
        self.seed = int(seed)
        self.pooling = PoolingMode.parse(self.config.pooling)
        cfg = self.config
        rng = nx.make_rng(self.seed, 0)
        if embeddings is None:
            table = rng.uniform(-0.1, 0.1, size=(len(vocab), cfg.embed_dim))
            table[0] = 0.0
        else:
            table = np.array(embeddings, dtype=np.float64)
            if table.shape != (len(vocab), cfg.embed_dim):
                raise StructureError(f"embedding table {table.shape} != {(len(vocab), cfg.embed_dim)}")
        P = {"embedding": nx.parameter(table, "embedding")}
        P["dense.W"] = nx.parameter(nx.glorot_uniform(rng, (cfg.dense_units, cfg.embed_dim)), "dense.W")
        P["dense.b"] = nx.parameter(np.zeros(cfg.dense_units), "dense.b")
        self.gru = GruParams.init(cfg.dense_units, cfg.gru_units, rng)
        P.update({f"gru.{k}": v for k, v in self.gru.tensors().items()})
        self.combiner = TurnCombinerParams.init(cfg.gru_units, cfg.combine_dim, rng)
        P.update({f"combine.{k}": v for k, v in self.combiner.tensors().items()})
        for h in self.heads:
            n_out = len(ontology.requestable_slots) if h == REQUESTS else len(ontology.output_space(h))
            P[f"head.{h}.W"] = nx.parameter(nx.glorot_uniform(rng, (n_out, cfg.combine_dim)), f"head.{h}.W")
            P[f"head.{h}.b"] = nx.parameter(np.zeros(n_out), f"head.{h}.b")
        self.params: dict[str, Tensor] = P

    # -- bookkeeping -------------------------------------------------------

    @property
    def weight_names(self) -> list[str]:
        """Matrices subject to L2 (biases and embeddings excluded)."""
        return [n for n, p in self.params.items() if p.data.ndim == 2 and n != "embedding"]

    def architecture(self) -> tuple:
        return (
            self.heads, self.pooling.value, self.config.renormalize_pooling, self.vocab.tokens,
            self.ontology.fingerprint(),
            tuple((n, p.shape) for n, p in self.params.items()),
        )

    def parameter_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for n in self.params:
            key = n if n == "embedding" else n.rsplit(".", 1)[0]
            groups.setdefault(key, []).append(n)
        return groups

    # -- forward -----------------------------------------------------------

    def prepare(self, turns: TurnInputs) -> PreparedDialog:
        """Lay out system words and user hypotheses as one row sequence with snapshot indices."""
        if not turns:
            raise StructureError("dialog has no turns")
        ids: list[int] = []
        scores: list[list[float]] = []
        sys_rows, user_rows = [], []
        for sys_tokens, cnet in turns:
            for tok in sys_tokens:
                ids.append(self.vocab.index(tok))
                scores.append([1.0])
            sys_rows.append(len(scores))
            for ts in cnet:
                ids.extend(self.vocab.index(h.token) for h in ts.hypotheses)
                scores.append([h.prob for h in ts.hypotheses])
            user_rows.append(len(scores))
        steps = plan_steps(scores, self.pooling, self.config.renormalize_pooling)
        return PreparedDialog(np.asarray(ids, dtype=np.intp), tuple(steps),
                              np.asarray(sys_rows, dtype=np.intp), np.asarray(user_rows, dtype=np.intp))

    def forward(self, preps, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> dict[str, Tensor]:
        """Per-head outputs stacked over turns: probabilities for goal heads, logits for requests.

        ``preps`` is one prepared dialog or a sequence of them; a batch runs
        in lockstep and its turns are stacked dialog after dialog.
        """
        if isinstance(preps, PreparedDialog):
            preps = [preps]
        P, cfg = self.params, self.config
        plan = build_batch_plan([p.steps for p in preps])
        ids = np.concatenate([p.token_ids for p in preps])
        emb = nx.take_rows(P["embedding"], ids)
        x = nx.relu(nx.linear(emb, P["dense.W"], P["dense.b"]))
        x = nx.dropout(x, cfg.dropout, rng, training)
        H = encode_batch(x, plan, np.zeros(cfg.gru_units), self.gru)
        s = nx.take_rows(H, np.concatenate([plan.state_index(b, p.sys_rows) for b, p in enumerate(preps)]))
        u = nx.take_rows(H, np.concatenate([plan.state_index(b, p.user_rows) for b, p in enumerate(preps)]))
        c = combine_turn(s, u, self.combiner)
        out = {}
        for h in self.heads:
            logits = nx.linear(c, P[f"head.{h}.W"], P[f"head.{h}.b"])
            out[h] = logits if h == REQUESTS else nx.softmax(logits)
        return out

    def predict_arrays(self, prep: PreparedDialog) -> dict[str, np.ndarray]:
        """Inference-mode probabilities per head, shape ``turns x outputs``."""
        return self.predict_many([prep])[0]

    def predict_many(self, preps: Sequence[PreparedDialog], chunk: int = 64) -> list[dict[str, np.ndarray]]:
        """:meth:`predict_arrays` for many dialogs, run ``chunk`` dialogs at a time."""
        results = []
        for start in range(0, len(preps), chunk):
            part = preps[start:start + chunk]
            with nx.no_grad():
                out = self.forward(part, training=False)
            arrays = {h: (nx.sigmoid_array(t.data) if h == REQUESTS else t.data) for h, t in out.items()}
            bounds = np.cumsum([0] + [p.n_turns for p in part])
            for a, b in zip(bounds[:-1], bounds[1:]):
                results.append({h: arr[a:b] for h, arr in arrays.items()})
        return results

    def targets(self, gold: Sequence[DialogState]) -> dict[str, np.ndarray]:
        tg = {}
        for h in self.heads:
            if h == REQUESTS:
                tg[h] = np.array([[float(r in st.requests) for r in self.ontology.requestable_slots]
                                  for st in gold]).reshape(len(gold), len(self.ontology.requestable_slots))
            else:
                tg[h] = np.array([self.ontology.label_index(h, st.goals[h]) for st in gold], dtype=np.intp)
        return tg

    def data_loss(self, preps, targets, training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
        """Summed cross-entropies.  ``targets`` is one :meth:`targets` dict or a list aligned with ``preps``."""
        if isinstance(targets, dict):
            targets = [targets]
        tg = {h: np.concatenate([t[h] for t in targets]) for h in self.heads}
        out = self.forward(preps, training, rng)
        terms = []
        for h in self.heads:
            if h == REQUESTS:
                terms.append(nx.binary_cross_entropy_with_logits(out[h], tg[h]))
            else:
                terms.append(nx.cross_entropy(out[h], tg[h]))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    def l2_loss(self, lam: Optional[float] = None) -> Tensor:
        lam = self.config.l2 if lam is None else lam
        return nx.l2_penalty([self.params[n] for n in self.weight_names], lam)

    def copy(self) -> "DstModel":
        clone = DstModel(self.vocab, self.ontology, self.config, self.heads, self.seed)
        for n, p in self.params.items():
            clone.params[n].data[...] = p.data
        return clone


# --------------------------------------------------------------------------
# predictions


def _turn_predictions(model_outputs: dict[str, np.ndarray], ontology: Ontology) -> list[TurnPrediction]:
    n_turns = len(next(iter(model_outputs.values())))
    preds = []
    for j in range(n_turns):
        goal_probs, req_probs, goals, requests = {}, {}, {}, set()
        for h, arr in model_outputs.items():
            if h == REQUESTS:
                for r, p in zip(ontology.requestable_slots, arr[j]):
                    req_probs[r] = float(p)
                    if p > 0.5:
                        requests.add(r)
            else:
                goal_probs[h] = arr[j]
                goals[h] = ontology.output_space(h)[int(np.argmax(arr[j]))]
        preds.append(TurnPrediction(goal_probs, req_probs, DialogState(goals, frozenset(requests))))
    return preds


def forward_dialog(model: DstModel, turns: TurnInputs) -> list[TurnPrediction]:
    """Inference-mode predictions, one per turn.  Requests are predicted when ``p > 0.5``."""
    return _turn_predictions(model.predict_arrays(model.prepare(turns)), model.ontology)


def dialog_loss(model: DstModel, turns: TurnInputs, gold: Sequence[DialogState],
                lam: Optional[float] = None) -> Tensor:
    """Summed per-turn cross-entropies of the model's heads plus the L2 penalty (inference mode)."""
    if len(gold) != len(turns):
        raise StructureError(f"{len(gold)} gold states for {len(turns)} turns")
    prep = model.prepare(turns)
    return model.data_loss(prep, model.targets(gold)) + model.l2_loss(lam)


def ensemble_predict(models: Sequence[DstModel], turns: TurnInputs) -> list[TurnPrediction]:
    """Average per-head probabilities of architecturally identical models, then decide."""
    return ensemble_predict_many(models, [turns])[0]


def ensemble_predict_many(models: Sequence[DstModel], dialogs: Sequence[TurnInputs]) -> list[list[TurnPrediction]]:
    """:func:`ensemble_predict` over many dialogs."""
    if not models:
        raise StructureError("ensemble of zero models")
    arch = models[0].architecture()
    for m in models[1:]:
        if m.architecture() != arch:
            raise StructureError("ensemble members differ in architecture")
    preps = [models[0].prepare(turns) for turns in dialogs]
    outs = [m.predict_many(preps) for m in models]
    results = []
    for i in range(len(preps)):
        mean = {h: sum(o[i][h] for o in outs) / len(outs) for h in outs[0][i]}
        results.append(_turn_predictions(mean, models[0].ontology))
    return results


def predict_many(model: DstModel, dialogs: Sequence[TurnInputs]) -> list[list[TurnPrediction]]:
    """:func:`forward_dialog` over many dialogs, batched."""
    preps = [model.prepare(turns) for turns in dialogs]
    return [_turn_predictions(a, model.ontology) for a in model.predict_many(preps)]


def merge_predictions(parts: Sequence[Sequence[TurnPrediction]]) -> list[TurnPrediction]:
    """Join the per-turn outputs of models that carry disjoint heads."""
    merged = []
    for per_turn in zip(*parts):
        goal_probs, req_probs, goals, requests = {}, {}, {}, set()
        for p in per_turn:
            goal_probs.update(p.goal_probs)
            req_probs.update(p.request_probs)
            goals.update(p.state.goals)
            requests |= p.state.requests
        merged.append(TurnPrediction(goal_probs, req_probs, DialogState(goals, frozenset(requests))))
    return merged


def joint_accuracy(predicted: Sequence, gold: Sequence[DialogState]) -> tuple[float, float]:
    """Percentage of turns with every goal right, and with the exact requested-slot set.

    ``predicted`` holds :class:`DialogState` or :class:`TurnPrediction` items
    aligned with ``gold`` over all evaluated turns.
    """
    if len(predicted) != len(gold):
        raise StructureError(f"{len(predicted)} predictions for {len(gold)} gold turns")
    if not gold:
        raise StructureError("joint_accuracy over zero turns")
    goals_ok = requests_ok = 0
    for p, g in zip(predicted, gold):
        st = p.state if isinstance(p, TurnPrediction) else p
        goals_ok += all(st.goals.get(slot) == label for slot, label in g.goals.items())
        requests_ok += st.requests == g.requests
    n = len(gold)
    return 100.0 * goals_ok / n, 100.0 * requests_ok / n


# --------------------------------------------------------------------------
# training


def train(model: DstModel, corpus: Sequence[tuple[TurnInputs, Sequence[DialogState]]], epochs: int,
          log: Optional[Callable[[int, float], None]] = None) -> list[float]:
    """Adam on mini-batches of ``config.batch_dialogs`` dialog instances; returns mean loss per epoch.

    The loss of a batch is the mean over its dialogs of the summed per-turn
    cross-entropies, plus the L2 penalty.

    Randomness (shuffling, dropout) comes from the model seed, so equal seeds
    give bit-identical runs.
    """
    if not corpus:
        raise StructureError("training corpus is empty")
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    cfg = model.config
    rng = nx.make_rng(model.seed, 1)
    data = []
    for turns, gold in corpus:
        if len(turns) != len(gold):
            raise StructureError(f"{len(gold)} gold states for {len(turns)} turns")
        data.append((model.prepare(turns), model.targets(gold)))
    names = list(model.params)
    params = [model.params[n] for n in names]
    opt = nx.Adam(params, lr=cfg.lr)
    curve = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_dialogs)):
            batch = order[start:start + cfg.batch_dialogs]
            opt.zero_grad()
            loss = model.data_loss([data[i][0] for i in batch], [data[i][1] for i in batch],
                                   training=True, rng=rng)
            loss.backward(np.asarray(1.0 / len(batch)))
            reg = model.l2_loss()
            reg.backward()
            batch_loss = float(loss.data) / len(batch) + float(reg.data)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"epoch {epoch}, batch {b}: loss is not finite")
            try:
                opt.step()
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            batch_losses.append(batch_loss)
        curve.append(float(np.mean(batch_losses)))
        if log is not None:
            log(epoch, curve[-1])
    return curve


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = "cnet-dst-checkpoint"
CHECKPOINT_VERSION = 1


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def checkpoint_bytes(model: DstModel) -> bytes:
    meta = {
        "heads": list(model.heads),
        "seed": model.seed,
        "config": asdict(model.config),
        "ontology": model.ontology.to_dict(),
        "ontology_hash": model.ontology.fingerprint(),
        "vocab": list(model.vocab.tokens),
    }
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
             "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        shape = ",".join(str(n) for n in p.shape)
        lines.append(f"tensor {name} {shape} {base64.b64encode(raw).decode('ascii')}")
    body = ("\n".join(lines) + "\n").encode("utf-8")
    return body + f"checksum {fnv1a_64(body):016x}\n".encode("ascii")


def save_checkpoint(model: DstModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    return path


def load_checkpoint(path, ontology: Optional[Ontology] = None) -> DstModel:
    """Rebuild a model from :func:`save_checkpoint` output, verifying checksum, version and shapes.

    If ``ontology`` is given its fingerprint must match the stored one.
    """
    blob = Path(path).read_bytes()
    body, sep, tail = blob.rstrip(b"\n").rpartition(b"\n")
    if not sep or not tail.startswith(b"checksum "):
        raise CheckpointError("checksum", "missing checksum line (truncated file?)")
    body += b"\n"
    try:
        stored = int(tail.split()[1], 16)
    except (IndexError, ValueError):
        raise CheckpointError("checksum", "unreadable checksum line") from None
    if fnv1a_64(body) != stored:
        raise CheckpointError("checksum", "content does not match the stored checksum")
    lines = body.decode("utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("header", "not a cnet-dst checkpoint")
    if head[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError("version", f"unsupported version {head[1]}, expected {CHECKPOINT_VERSION}")
    if not lines[1].startswith("meta "):
        raise CheckpointError("meta", "missing meta record")
    meta = json.loads(lines[1][5:])
    stored_onto = Ontology.from_dict(meta["ontology"])
    if stored_onto.fingerprint() != meta["ontology_hash"]:
        raise CheckpointError("ontology_hash", "stored ontology does not match its hash")
    if ontology is not None and ontology.fingerprint() != meta["ontology_hash"]:
        raise CheckpointError("ontology_hash", "checkpoint was trained with a different ontology")
    model = DstModel(Vocabulary(tuple(meta["vocab"])), ontology or stored_onto,
                     ModelConfig.from_dict(meta["config"]), meta["heads"], meta["seed"])
    seen = set()
    for line in lines[2:]:
        kind, name, shape_s, payload = line.split(" ")
        if kind != "tensor":
            raise CheckpointError(name, f"unexpected record {kind!r}")
        if name not in model.params:
            raise CheckpointError(name, "tensor not part of the model architecture")
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        target = model.params[name]
        if shape != target.shape:
            raise CheckpointError(name, f"shape {shape} != expected {target.shape}")
        arr = np.frombuffer(base64.b64decode(payload), dtype="<f8")
        if arr.size != target.data.size:
            raise CheckpointError(name, "payload length does not match its shape")
        target.data[...] = arr.reshape(shape)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise CheckpointError(sorted(missing)[0], "tensor missing from checkpoint")
    return model


# --------------------------------------------------------------------------
# gradient checking


def random_check_dialog(rng: np.random.Generator, words: Sequence[str], ontology: Ontology,
                        n_turns: int = 2, max_k: int = 3, max_steps: int = 3) -> tuple[list, list[DialogState]]:
    """A small random dialog (system words, user cnet with k <= max_k) with random gold states."""
    from .cnet import Hypothesis, Timestep

    turns, gold = [], []
    for _ in range(n_turns):
        sys_tokens = tuple(str(w) for w in rng.choice(words, size=rng.integers(1, 3)))
        steps = []
        for i in range(int(rng.integers(1, max_steps + 1))):
            k = int(rng.integers(1, max_k + 1))
            toks = rng.choice(words, size=k, replace=False)
            probs = rng.dirichlet(np.ones(k)) * rng.uniform(0.6, 1.0)
            steps.append(Timestep(float(i), float(i + 1),
                                  tuple(Hypothesis(str(t), float(np.log(p))) for t, p in zip(toks, probs))))
        turns.append((sys_tokens, ConfusionNetwork(tuple(steps))))
        goals = {s: ontology.output_space(s)[rng.integers(len(ontology.output_space(s)))]
                 for s in ontology.slot_names}
        requests = {r for r in ontology.requestable_slots if rng.random() < 0.3}
        gold.append(DialogState(goals, frozenset(requests)))
    return turns, gold


def relu_margin(model: DstModel, turns: TurnInputs) -> float:
    """Smallest ``|pre-activation|`` of the dense ReLU layer over the dialog's input rows.

    Central differences are meaningless when the stencil straddles the ReLU
    kink, so gradient checks want this comfortably above the step size.
    """
    prep = model.prepare(turns)
    P = model.params
    pre = P["embedding"].data[prep.token_ids] @ P["dense.W"].data.T + P["dense.b"].data
    return float(np.abs(pre).min()) if pre.size else float("inf")


def model_grad_check(model: DstModel, turns: TurnInputs, gold: Sequence[DialogState],
                     step: float = 1e-4) -> nx.GradCheckResult:
    """Full-loss gradient check (inference mode, with L2), errors maximized per parameter group."""
    res = nx.grad_check_details(lambda: dialog_loss(model, turns, gold), model.params, step)
    groups = model.parameter_groups()

    def by_group(errors):
        return {g: max(errors[n] for n in names) for g, names in groups.items()}

    return nx.GradCheckResult(res.loss, step, by_group(res.rel_error), by_group(res.abs_error),
                              by_group(res.resolved_rel_error))
