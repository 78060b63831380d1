"""scikit-learn style wrappers: a trainable tracker, a seed ensemble and a cnet pruning transformer."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics as nx
from .cnet import DEFAULT_INTERJECTIONS, ConfusionNetwork, prune_cnet
from .corpus import DEFAULT_ACT_MAP, INPUT_SOURCES, Dialog, build_vocab, load_embeddings, turn_inputs
from .errors import ConfigError, StructureError
from .model import (
    DEFAULT_EPOCHS, GROUP_EPOCHS, REQUESTS, DstModel, ModelConfig, TurnPrediction, ensemble_predict_many,
    joint_accuracy, load_checkpoint, merge_predictions, predict_many, save_checkpoint, train,
)
from .ontology import DialogState, Ontology, validate_state

HEAD_GROUPINGS = ("separate", "joint")
JOINT_GROUP = "joint"


def check_dialogs(X, require_nonempty: bool = True) -> list[Dialog]:
    """Validate a collection of :class:`Dialog` objects and return it as a list."""
    if isinstance(X, Dialog):
        raise StructureError("expected a sequence of dialogs, got a single Dialog")
    dialogs = list(X)
    for i, d in enumerate(dialogs):
        if not isinstance(d, Dialog):
            raise StructureError(f"item {i} is {type(d).__name__}, not a Dialog")
    if require_nonempty and not dialogs:
        raise StructureError("no dialogs given")
    return dialogs


def check_labels(dialogs: Sequence[Dialog], y, ontology: Ontology) -> list[list[DialogState]]:
    """Per-dialog gold states, taken from ``y`` if given, else from the dialogs themselves."""
    labels = [d.states for d in dialogs] if y is None else [list(s) for s in y]
    if len(labels) != len(dialogs):
        raise StructureError(f"{len(labels)} label sequences for {len(dialogs)} dialogs")
    for d, states in zip(dialogs, labels):
        if len(states) != len(d.turns):
            raise StructureError(f"dialog {d.id}: {len(states)} gold states for {len(d.turns)} turns")
        for st in states:
            validate_state(st, ontology)
    return labels


def check_source(source: str) -> str:
    if source not in INPUT_SOURCES:
        raise ConfigError(f"unknown input source {source!r}; expected one of {INPUT_SOURCES}")
    return source


def _resolve_ontology(ontology) -> Ontology:
    return ontology if isinstance(ontology, Ontology) else Ontology.load(ontology)


def head_groups(ontology: Ontology, grouping: str) -> dict[str, tuple[str, ...]]:
    """Group name -> heads carried by that group's network."""
    if grouping == "separate":
        groups = {REQUESTS: (REQUESTS,)}
        groups.update({slot: (slot,) for slot in ontology.slot_names})
        return groups
    if grouping == "joint":
        return {JOINT_GROUP: ontology.slot_names + (REQUESTS,)}
    raise ConfigError(f"head_groups must be one of {HEAD_GROUPINGS}, got {grouping!r}")


def resolve_epochs(epochs, groups: Sequence[str]) -> dict[str, int]:
    """``None`` -> the per-group default schedule; an int -> every group; a mapping -> per group."""
    if epochs is None:
        out = {g: GROUP_EPOCHS.get(g, DEFAULT_EPOCHS) for g in groups}
    elif isinstance(epochs, Mapping):
        missing = set(groups) - set(epochs)
        if missing:
            raise ConfigError(f"no epoch count for head group(s) {sorted(missing)}")
        out = {g: int(epochs[g]) for g in groups}
    else:
        out = {g: int(epochs) for g in groups}
    if any(e < 0 for e in out.values()):
        raise ConfigError("epochs must be >= 0")
    return out


class CnetTracker(BaseEstimator):
    """Dialog state tracker over confusion networks.

    Each training dialog is used twice: once with its user transcripts and
    once with ``input_source`` (pruned cnets, or the ASR 1-best for the
    baseline).  With ``head_groups="separate"`` one network is trained per
    goal slot plus one for requests, each for its own number of epochs.

    ``fit``/``predict``/``score`` take sequences of :class:`Dialog`.
    ``predict`` returns one list of :class:`DialogState` per dialog.
    """

    def __init__(self, ontology="synthetic", input_source="cnet", pooling="weighted",
                 renormalize_pooling=False, prune_threshold=0.001, interjections=None,
                 embed_dim=32, dense_units=64, gru_units=32, combine_dim=16, dropout=0.5,
                 l2=0.001, lr=0.001, batch_dialogs=10, epochs=None, head_groups="separate",
                 min_count=1, embeddings_path=None, random_state=0):
        self.ontology = ontology
        self.input_source = input_source
        self.pooling = pooling
        self.renormalize_pooling = renormalize_pooling
        self.prune_threshold = prune_threshold
        self.interjections = interjections
        self.embed_dim = embed_dim
        self.dense_units = dense_units
        self.gru_units = gru_units
        self.combine_dim = combine_dim
        self.dropout = dropout
        self.l2 = l2
        self.lr = lr
        self.batch_dialogs = batch_dialogs
        self.epochs = epochs
        self.head_groups = head_groups
        self.min_count = min_count
        self.embeddings_path = embeddings_path
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim, dense_units=self.dense_units, gru_units=self.gru_units,
            combine_dim=self.combine_dim, pooling=self.pooling, renormalize_pooling=self.renormalize_pooling,
            dropout=self.dropout, l2=self.l2, lr=self.lr, batch_dialogs=self.batch_dialogs,
        )

    def _interjections(self):
        return DEFAULT_INTERJECTIONS if self.interjections is None else frozenset(self.interjections)

    def _inputs(self, dialog: Dialog, source: str):
        return turn_inputs(dialog, source, DEFAULT_ACT_MAP, self._interjections(), self.prune_threshold)

    def fit(self, X, y=None, log=None) -> "CnetTracker":
        """Train every head group.  ``log(group, epoch, loss)`` is called after each epoch if given."""
        dialogs = check_dialogs(X)
        ontology = _resolve_ontology(self.ontology)
        labels = check_labels(dialogs, y, ontology)
        check_source(self.input_source)
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ConfigError("prune_threshold must lie in [0, 1)")
        config = self._model_config()
        groups = head_groups(ontology, self.head_groups)
        epochs = resolve_epochs(self.epochs, list(groups))
        vocab = build_vocab(dialogs, self.min_count)
        table = None
        self.embedding_hit_rate_ = None
        if self.embeddings_path is not None:
            table, self.embedding_hit_rate_ = load_embeddings(
                self.embeddings_path, vocab, nx.make_rng(self.random_state, 2), dim=config.embed_dim)
        sources = ["transcript"] if self.input_source == "transcript" else ["transcript", self.input_source]
        data = [(self._inputs(d, src), gold) for d, gold in zip(dialogs, labels) for src in sources]

        self.ontology_ = ontology
        self.vocab_ = vocab
        self.models_: dict[str, DstModel] = {}
        self.loss_curves_: dict[str, list[float]] = {}
        for group, heads in groups.items():
            model = DstModel(vocab, ontology, config, heads, self.random_state, embeddings=table)
            hook = None if log is None else (lambda e, l, g=group: log(g, e, l))
            self.loss_curves_[group] = train(model, data, epochs[group], log=hook)
            self.models_[group] = model
        return self

    def predict_turns(self, X, source: Optional[str] = None) -> list[list[TurnPrediction]]:
        """Per-dialog, per-turn predictions with probabilities."""
        check_is_fitted(self, "models_")
        dialogs = check_dialogs(X, require_nonempty=False)
        source = check_source(source or self.input_source)
        inputs = [self._inputs(d, source) for d in dialogs]
        parts = [predict_many(m, inputs) for m in self.models_.values()]
        return [merge_predictions(p) for p in zip(*parts)]

    def predict(self, X, source: Optional[str] = None) -> list[list[DialogState]]:
        return [[p.state for p in turns] for turns in self.predict_turns(X, source)]

    def evaluate(self, X, y=None, source: Optional[str] = None) -> dict[str, float]:
        """Joint goals and joint requests accuracy in percent over every turn of ``X``."""
        dialogs = check_dialogs(X)
        check_is_fitted(self, "models_")
        labels = check_labels(dialogs, y, self.ontology_)
        preds = self.predict_turns(dialogs, source)
        goals, requests = joint_accuracy([p for turns in preds for p in turns],
                                         [s for states in labels for s in states])
        return {"joint_goals": goals, "joint_requests": requests}

    def score(self, X, y=None, source: Optional[str] = None) -> float:
        """Joint goals accuracy as a fraction in [0, 1]."""
        return self.evaluate(X, y, source)["joint_goals"] / 100.0

    # -- persistence -------------------------------------------------------

    def save(self, directory) -> list[Path]:
        """One checkpoint per head group plus ``tracker.json`` holding the estimator parameters."""
        check_is_fitted(self, "models_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        params = self.get_params()
        params["ontology"] = self.ontology_.to_dict()
        if params["interjections"] is not None:
            params["interjections"] = sorted(params["interjections"])
        if params["embeddings_path"] is not None:
            params["embeddings_path"] = str(params["embeddings_path"])
        (directory / "tracker.json").write_text(
            json.dumps({"params": params, "groups": list(self.models_)}, sort_keys=True) + "\n", encoding="utf-8")
        return [save_checkpoint(m, directory / f"{g}.ckpt") for g, m in self.models_.items()]

    @classmethod
    def load(cls, directory) -> "CnetTracker":
        directory = Path(directory)
        meta = json.loads((directory / "tracker.json").read_text(encoding="utf-8"))
        params = meta["params"]
        ontology = Ontology.from_dict(params["ontology"])
        params["ontology"] = ontology
        tracker = cls(**params)
        tracker.ontology_ = ontology
        tracker.models_ = {g: load_checkpoint(directory / f"{g}.ckpt", ontology) for g in meta["groups"]}
        tracker.vocab_ = next(iter(tracker.models_.values())).vocab
        tracker.loss_curves_ = {}
        return tracker

    @classmethod
    def from_models(cls, models: Mapping[str, DstModel], **params) -> "CnetTracker":
        """Wrap already trained head-group networks (e.g. loaded checkpoints)."""
        if not models:
            raise StructureError("no models given")
        first = next(iter(models.values()))
        cfg = first.config
        tracker = cls(ontology=first.ontology, pooling=cfg.pooling, renormalize_pooling=cfg.renormalize_pooling,
                      embed_dim=cfg.embed_dim, dense_units=cfg.dense_units, gru_units=cfg.gru_units,
                      combine_dim=cfg.combine_dim, dropout=cfg.dropout, l2=cfg.l2, lr=cfg.lr,
                      batch_dialogs=cfg.batch_dialogs, random_state=first.seed, **params)
        tracker.ontology_ = first.ontology
        tracker.models_ = dict(models)
        tracker.vocab_ = first.vocab
        tracker.loss_curves_ = {}
        return tracker


class EnsembleTracker(BaseEstimator):
    """Averages per-head probabilities of fitted trackers that share vocabulary and head groups."""

    def __init__(self, trackers: Sequence[CnetTracker] = (), input_source: Optional[str] = None):
        self.trackers = trackers
        self.input_source = input_source

    def _members(self) -> list[CnetTracker]:
        members = list(self.trackers)
        if not members:
            raise StructureError("ensemble of zero trackers")
        for t in members:
            check_is_fitted(t, "models_")
        groups = list(members[0].models_)
        for t in members[1:]:
            if list(t.models_) != groups:
                raise StructureError("ensemble members have different head groups")
        return members

    def predict_turns(self, X, source: Optional[str] = None) -> list[list[TurnPrediction]]:
        members = self._members()
        dialogs = check_dialogs(X, require_nonempty=False)
        lead = members[0]
        source = check_source(source or self.input_source or lead.input_source)
        inputs = [lead._inputs(d, source) for d in dialogs]
        parts = [ensemble_predict_many([t.models_[g] for t in members], inputs) for g in lead.models_]
        return [merge_predictions(p) for p in zip(*parts)]

    def predict(self, X, source: Optional[str] = None) -> list[list[DialogState]]:
        return [[p.state for p in turns] for turns in self.predict_turns(X, source)]

    def evaluate(self, X, y=None, source: Optional[str] = None) -> dict[str, float]:
        dialogs = check_dialogs(X)
        labels = check_labels(dialogs, y, self._members()[0].ontology_)
        preds = self.predict_turns(dialogs, source)
        goals, requests = joint_accuracy([p for turns in preds for p in turns],
                                         [s for states in labels for s in states])
        return {"joint_goals": goals, "joint_requests": requests}

    def score(self, X, y=None, source: Optional[str] = None) -> float:
        return self.evaluate(X, y, source)["joint_goals"] / 100.0


class CnetPruner(TransformerMixin, BaseEstimator):
    """Stateless transformer applying interjection removal and score-threshold pruning to cnets."""

    def __init__(self, interjections=None, prob_threshold=0.001, renormalize=False):
        self.interjections = interjections
        self.prob_threshold = prob_threshold
        self.renormalize = renormalize

    def fit(self, X=None, y=None) -> "CnetPruner":
        if not 0.0 <= self.prob_threshold < 1.0:
            raise ConfigError("prob_threshold must lie in [0, 1)")
        self.interjections_ = (DEFAULT_INTERJECTIONS if self.interjections is None
                               else frozenset(self.interjections))
        return self

    def transform(self, X: Union[ConfusionNetwork, Sequence[ConfusionNetwork]]):
        check_is_fitted(self, "interjections_")
        if isinstance(X, ConfusionNetwork):
            return prune_cnet(X, self.interjections_, self.prob_threshold, self.renormalize)
        out = []
        for i, c in enumerate(X):
            if not isinstance(c, ConfusionNetwork):
                raise StructureError(f"item {i} is {type(c).__name__}, not a ConfusionNetwork")
            out.append(prune_cnet(c, self.interjections_, self.prob_threshold, self.renormalize))
        return out
