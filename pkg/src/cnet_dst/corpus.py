"""Dialog corpora: types, on-disk layout, vocabulary, embeddings and a synthetic generator.

On-disk layout (one directory per dialog under ``<root>/<split>/``)::

    acts.jsonl      {"turn": 0, "acts": [{"act": "inform", "slot": "food", "value": "thai"}]}
    transcript.txt  one user utterance per line (empty line = silent turn)
    cnet.txt        one cnet block per turn, each headed by a "# turn N" comment
    labels.jsonl    {"turn": 0, "goals": {"area": "none", ...}, "requests": ["phone"]}
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .cnet import (
    DEFAULT_INTERJECTIONS,
    NULL_TOKEN,
    ConfusionNetwork,
    Hypothesis,
    Timestep,
    degenerate_cnet,
    one_best_cnet,
    parse_cnet_blocks,
    prune_cnet,
    serialize_cnet,
)
from .errors import CorpusError, StructureError
from .numerics import make_rng
from .ontology import DONTCARE_LABEL, NONE_LABEL, DialogState, Ontology, validate_state

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")

PAD, UNK = "<pad>", "<unk>"
RESERVED_TOKENS = (PAD, UNK, NULL_TOKEN)

# Act and slot names that are not plain words get spelled out.
DEFAULT_ACT_MAP: dict[str, tuple[str, ...]] = {
    "expl-conf": ("explicit", "confirm"),
    "impl-conf": ("implicit", "confirm"),
    "reqalts": ("request", "alternatives"),
    "reqmore": ("request", "more"),
    "welcomemsg": ("welcome", "message"),
    "canthelp": ("can", "not", "help"),
    "canthelp.exception": ("can", "not", "help", "exception"),
    "confirm-domain": ("confirm", "domain"),
    "thankyou": ("thank", "you"),
    "ack": ("acknowledge",),
    "negate": ("no",),
    "addr": ("address",),
    "pricerange": ("price", "range"),
    "postcode": ("post", "code"),
    "dontcare": ("dont", "care"),
}


@dataclass(frozen=True)
class DialogActTriple:
    act: str
    slot: Optional[str] = None
    value: Optional[str] = None

    def __post_init__(self):
        if not self.act:
            raise StructureError("dialog act must be non-empty")
        if self.value is not None and self.slot is None:
            raise StructureError("dialog act value given without a slot")

    def to_dict(self) -> dict:
        d = {"act": self.act}
        if self.slot is not None:
            d["slot"] = self.slot
        if self.value is not None:
            d["value"] = self.value
        return d


@dataclass(frozen=True)
class Turn:
    system_acts: tuple[DialogActTriple, ...]
    transcript: tuple[str, ...]
    cnet: ConfusionNetwork
    state: DialogState


@dataclass(frozen=True)
class Dialog:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise StructureError(f"dialog {self.id} has no turns")

    def __len__(self):
        return len(self.turns)

    @property
    def states(self) -> list[DialogState]:
        return [t.state for t in self.turns]


def acts_to_tokens(acts: Sequence[DialogActTriple], act_map: Mapping[str, Sequence[str]] = DEFAULT_ACT_MAP) -> list[str]:
    """Flatten act triples into lowercase words, spelling out mapped act/slot names."""
    out: list[str] = []
    for triple in acts:
        for part in (triple.act, triple.slot, triple.value):
            if part is None:
                continue
            part = part.lower()
            if part in act_map:
                out.extend(w.lower() for w in act_map[part])
            else:
                out.extend(part.split())
    return out


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(text.lower().split())


# --------------------------------------------------------------------------
# model input views

INPUT_SOURCES = ("transcript", "cnet", "1best")


def turn_inputs(
    dialog: Dialog,
    source: str = "cnet",
    act_map: Mapping[str, Sequence[str]] = DEFAULT_ACT_MAP,
    interjections: Iterable[str] = DEFAULT_INTERJECTIONS,
    prune_threshold: float = 0.001,
) -> list[tuple[tuple[str, ...], ConfusionNetwork]]:
    """(system tokens, user cnet) per turn for one input representation.

    ``transcript`` -- the manual transcript as a degenerate cnet;
    ``cnet``       -- the ASR cnet with interjections and low-probability hypotheses pruned;
    ``1best``      -- the raw 1-best path of the ASR cnet as a degenerate cnet.
    """
    if source not in INPUT_SOURCES:
        raise StructureError(f"unknown input source {source!r}; choose from {INPUT_SOURCES}")
    interjections = frozenset(interjections)
    out = []
    for turn in dialog.turns:
        sys_tokens = tuple(acts_to_tokens(turn.system_acts, act_map))
        if source == "transcript":
            user = degenerate_cnet(turn.transcript) if turn.transcript else ConfusionNetwork(())
        elif source == "cnet":
            user = prune_cnet(turn.cnet, interjections, prune_threshold)
        else:
            user = one_best_cnet(turn.cnet)
        out.append((sys_tokens, user))
    return out


# --------------------------------------------------------------------------
# vocabulary and embeddings


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise StructureError("vocabulary must start with the reserved tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, 1)

    def indices(self, tokens: Iterable[str]) -> list[int]:
        get = self._index.get
        return [get(t, 1) for t in tokens]


def corpus_tokens(dialogs: Iterable[Dialog], act_map: Mapping[str, Sequence[str]] = DEFAULT_ACT_MAP) -> Iterable[str]:
    for d in dialogs:
        for turn in d.turns:
            yield from acts_to_tokens(turn.system_acts, act_map)
            yield from turn.transcript
            for ts in turn.cnet:
                for h in ts.hypotheses:
                    yield h.token


def build_vocab(dialogs: Iterable[Dialog], min_count: int = 1,
                act_map: Mapping[str, Sequence[str]] = DEFAULT_ACT_MAP) -> Vocabulary:
    """Reserved tokens first, then every token seen ``min_count`` times, most frequent first."""
    counts = Counter(corpus_tokens(dialogs, act_map))
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(RESERVED_TOKENS + tuple(kept))


def load_embeddings(path, vocab: Vocabulary, rng: np.random.Generator,
                    dim: Optional[int] = None, scale: float = 0.1) -> tuple[np.ndarray, float]:
    """Read a ``word v1 ... vE`` text file into a table aligned with ``vocab``.

    Rows of words missing from the file keep a uniform(-scale, scale) draw.
    Returns the table and the fraction of vocabulary rows found in the file.
    """
    found: dict[str, np.ndarray] = {}
    file_dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec header "count dim"
            vec = parts[1:]
            if file_dim is None:
                file_dim = len(vec)
            elif len(vec) != file_dim:
                raise StructureError(f"{path}:{line_no}: expected {file_dim} values, got {len(vec)}")
            if parts[0] in vocab:
                found[parts[0]] = np.asarray(vec, dtype=np.float64)
    dim = dim or file_dim
    if dim is None:
        raise StructureError("embedding dimension unknown: empty file and no dim given")
    if file_dim is not None and file_dim != dim:
        raise StructureError(f"embedding file has dimension {file_dim}, model expects {dim}")
    table = rng.uniform(-scale, scale, size=(len(vocab), dim))
    table[0] = 0.0
    for word, vec in found.items():
        table[vocab.index(word)] = vec
    return table, len(found) / len(vocab)


# --------------------------------------------------------------------------
# disk layout


def _state_from_record(rec: Mapping, ontology: Ontology, dialog_id: str) -> DialogState:
    state = DialogState.from_dict(rec, ontology)
    try:
        validate_state(state, ontology)
    except StructureError as exc:
        raise CorpusError(str(exc), dialog_id) from None
    return state


def _read_jsonl(path: Path, dialog_id: str) -> list[dict]:
    if not path.is_file():
        raise CorpusError(f"missing {path.name}", dialog_id)
    out = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path.name}:{line_no}: {exc.msg}", dialog_id) from None
    return out


def load_dialog(path, ontology: Ontology) -> Dialog:
    path = Path(path)
    did = path.name
    acts = _read_jsonl(path / "acts.jsonl", did)
    labels = _read_jsonl(path / "labels.jsonl", did)
    tfile, cfile = path / "transcript.txt", path / "cnet.txt"
    if not tfile.is_file():
        raise CorpusError("missing transcript.txt", did)
    if not cfile.is_file():
        raise CorpusError("missing cnet.txt", did)
    transcripts = tfile.read_text(encoding="utf-8").split("\n")
    if transcripts and transcripts[-1] == "":
        transcripts.pop()
    try:
        cnets = parse_cnet_blocks(cfile.read_text(encoding="utf-8"), allow_empty=True)
    except StructureError as exc:
        raise CorpusError(f"cnet.txt: {exc}", did) from None
    n = len(labels)
    if not (len(acts) == len(transcripts) == len(cnets) == n):
        raise CorpusError(
            f"turn counts disagree: acts={len(acts)} transcripts={len(transcripts)} "
            f"cnets={len(cnets)} labels={n}", did)
    turns = []
    for i in range(n):
        try:
            triples = tuple(DialogActTriple(a["act"], a.get("slot"), a.get("value")) for a in acts[i]["acts"])
        except (KeyError, TypeError, StructureError) as exc:
            raise CorpusError(f"acts.jsonl turn {i}: malformed record ({exc})", did) from None
        state = _state_from_record(labels[i], ontology, did)
        turns.append(Turn(triples, tokenize(transcripts[i]), cnets[i], state))
    if not turns:
        raise CorpusError("dialog has no turns", did)
    return Dialog(did, tuple(turns))


def load_corpus(root, split: str, ontology: Ontology) -> list[Dialog]:
    """Load and validate every dialog directory under ``root/split`` in sorted order."""
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    base = Path(root) / split
    if not base.is_dir():
        raise CorpusError(f"no such split directory: {base}")
    dirs = sorted(p for p in base.iterdir() if p.is_dir())
    if not dirs:
        raise CorpusError(f"split directory {base} contains no dialogs")
    dialogs = [load_dialog(d, ontology) for d in dirs]
    logger.info("loaded %d dialogs (%d turns) from %s", len(dialogs), sum(len(d) for d in dialogs), base)
    return dialogs


def write_dialog(dialog: Dialog, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    acts, labels, transcripts, blocks = [], [], [], []
    for i, turn in enumerate(dialog.turns):
        acts.append(json.dumps({"turn": i, "acts": [a.to_dict() for a in turn.system_acts]}, sort_keys=True))
        labels.append(json.dumps({"turn": i, **turn.state.to_dict()}, sort_keys=True))
        transcripts.append(" ".join(turn.transcript))
        blocks.append(f"# turn {i}\n" + serialize_cnet(turn.cnet))
    (path / "acts.jsonl").write_text("\n".join(acts) + "\n", encoding="utf-8")
    (path / "labels.jsonl").write_text("\n".join(labels) + "\n", encoding="utf-8")
    (path / "transcript.txt").write_text("\n".join(transcripts) + "\n", encoding="utf-8")
    (path / "cnet.txt").write_text("\n".join(blocks), encoding="utf-8")


def write_corpus(dialogs: Sequence[Dialog], root, split: str) -> Path:
    base = Path(root) / split
    for d in dialogs:
        write_dialog(d, base / d.id)
    return base


# --------------------------------------------------------------------------
# DSTC2 import


def _dstc2_acts(dialog_acts: Sequence[Mapping]) -> tuple[DialogActTriple, ...]:
    out = []
    for da in dialog_acts:
        slots = da.get("slots") or []
        if not slots:
            out.append(DialogActTriple(da["act"]))
        for slot, value in slots:
            if slot == "slot":  # request acts name the requested slot as the value
                out.append(DialogActTriple(da["act"], str(value)))
            else:
                out.append(DialogActTriple(da["act"], str(slot), str(value)))
    return tuple(out)


def _dstc2_cnet(raw: Sequence[Mapping]) -> ConfusionNetwork:
    spans, steps = [], []
    for t in raw:
        best: dict[str, float] = {}
        for arc in t["arcs"]:
            word = arc["word"].lower().strip() or NULL_TOKEN
            score = min(float(arc["score"]), 0.0)
            if word not in best or score > best[word]:
                best[word] = score
        if best:
            spans.append((float(t.get("start", 0.0)), float(t.get("end", 0.0))))
            steps.append(tuple(Hypothesis(w, s) for w, s in best.items()))
    ordered = all(a < b for a, b in spans) and all(
        spans[i][1] <= spans[i + 1][0] + 1e-9 for i in range(len(spans) - 1))
    if not ordered:
        # timing in the logs is not always consistent; the order of timesteps is what matters
        logger.warning("cnet with inconsistent timing; using synthetic times")
        spans = [(float(i), float(i + 1)) for i in range(len(steps))]
    return ConfusionNetwork(tuple(Timestep(a, b, h) for (a, b), h in zip(spans, steps)))


def import_dstc2(data_root, flist, ontology: Ontology, asr: str = "batch") -> list[Dialog]:
    """Read the original DSTC2 ``log.json``/``label.json`` pairs listed in ``flist``."""
    data_root = Path(data_root)
    dialogs = []
    for rel in Path(flist).read_text(encoding="utf-8").split():
        ddir = data_root / rel
        did = ddir.name
        try:
            log = json.loads((ddir / "log.json").read_text(encoding="utf-8"))
            label = json.loads((ddir / "label.json").read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise CorpusError(f"missing {Path(exc.filename).name}", did) from None
        turns = []
        for lt, bt in zip(log["turns"], label["turns"]):
            acts = _dstc2_acts(lt["output"].get("dialog-acts", []))
            try:
                cnet = _dstc2_cnet(lt["input"][asr].get("cnet", []))
            except StructureError as exc:
                raise CorpusError(f"turn {lt.get('turn-index')}: {exc}", did) from None
            goals = {s: NONE_LABEL for s in ontology.slot_names}
            goals.update({s: v for s, v in bt.get("goal-labels", {}).items() if s in goals})
            state = _state_from_record(
                {"goals": goals, "requests": bt.get("requested-slots", [])}, ontology, did)
            turns.append(Turn(acts, tokenize(bt.get("transcription", "")), cnet, state))
        dialogs.append(Dialog(did, tuple(turns)))
    if not dialogs:
        raise CorpusError(f"file list {flist} names no dialogs")
    return dialogs


# --------------------------------------------------------------------------
# synthetic corpus

_INFORM_TEMPLATES = {
    "food": ["i want {v} food", "{v} food", "looking for a {v} restaurant", "how about {v}"],
    "area": ["in the {v}", "{v} part of town", "the {v} please", "somewhere in the {v}"],
    "pricerange": ["a {v} restaurant", "{v} price range", "something {v}", "{v} please"],
}
_DONTCARE_TEMPLATES = {
    "food": ["any food", "i dont care about the food"],
    "area": ["any area", "i dont care about the area"],
    "pricerange": ["any price range", "i dont care about the price"],
}
_GENERIC_INFORM = ["{v}", "i want {v}", "{v} please"]
_GENERIC_DONTCARE = ["any {s}", "i dont care about the {s}"]
_REQUEST_TEMPLATES = {
    "addr": ["what is the address", "whats the address"],
    "area": ["what area is it in", "which part of town is it"],
    "food": ["what type of food do they serve", "what kind of food is it"],
    "phone": ["what is the phone number", "phone number please"],
    "pricerange": ["what is the price range", "how expensive is it"],
    "postcode": ["what is the post code", "post code please"],
    "signature": ["what is their signature dish"],
    "name": ["what is the name of the restaurant", "whats it called"],
}
_FILLERS = ["thank you goodbye", "yes", "okay", "hello", "thanks", "no"]
_NOISE_WORDS = (
    "is it in a to can of and for the you ok could are at where this that with my"
    " so be will hi have do go on there here now then just well right get see"
    " like know think good new one two three tv kind sorry make want an"
).split()
_NAMES = ["golden house", "pizza hut", "curry garden", "the varsity", "bangkok city", "la margherita"]
_REQUEST_ANSWERS = {
    "addr": "regent street",
    "phone": "01223 356354",
    "postcode": "cb2 1ab",
    "signature": "spicy noodles",
}
_SYNTH_INTERJECTIONS = ("uh", "um", "ah", "oh", "er")


@dataclass
class SynthConfig:
    """Noise and size parameters of the synthetic restaurant corpus.

    ``p_swap``    -- a true word loses the top rank to a distractor but stays in the timestep
    ``p_confuse`` -- a true word keeps the top rank but gains lower-scored distractors
    ``p_interj``  -- an interjection timestep is inserted before a word
    ``p_drop``    -- the true word is deleted from its timestep
    ``vocab_size`` -- number of extra noise words available as distractors
    """

    n_dialogs: int = 20
    turns: int = 4
    p_swap: float = 0.3
    p_confuse: float = 0.2
    p_interj: float = 0.1
    p_drop: float = 0.0
    p_dontcare: float = 0.1
    p_change: float = 0.1
    vocab_size: int = len(_NOISE_WORDS)
    seed: int = 0
    id_prefix: str = "synth"


def _template_vocabulary(ontology: Ontology) -> list[str]:
    words = set(_NOISE_WORDS)
    for group in (_INFORM_TEMPLATES, _DONTCARE_TEMPLATES, _REQUEST_TEMPLATES):
        for templates in group.values():
            for t in templates:
                words.update(w for w in t.split() if "{" not in w)
    for t in _FILLERS + _GENERIC_INFORM + _GENERIC_DONTCARE:
        words.update(w for w in t.split() if "{" not in w)
    words.update(ontology.slot_value_words())
    return sorted(words)


class _Noiser:
    def __init__(self, cfg: SynthConfig, ontology: Ontology, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        pool = sorted(set(_template_vocabulary(ontology)) - set(_NOISE_WORDS)) + list(_NOISE_WORDS[: cfg.vocab_size])
        self.pool = pool
        self.confusions = {}
        for w in pool:
            choices = [c for c in pool if c != w]
            idx = rng.choice(len(choices), size=3, replace=False)
            self.confusions[w] = [choices[i] for i in idx]

    def _distractors(self, word: str, n: int) -> list[str]:
        options = self.confusions.get(word)
        if options is None:
            options = [c for c in self.pool if c != word][:3]
        idx = self.rng.choice(len(options), size=min(n, len(options)), replace=False)
        return [options[i] for i in idx]

    def _timestep(self, i: int, probs: dict[str, float]) -> Timestep:
        total = sum(probs.values())
        hyps = sorted(((w, p / total) for w, p in probs.items() if p > 0), key=lambda x: -x[1])
        return Timestep(float(i), float(i + 1), tuple(Hypothesis(w, min(math.log(p), 0.0)) for w, p in hyps))

    def corrupt(self, words: Sequence[str]) -> ConfusionNetwork:
        cfg, rng = self.cfg, self.rng
        steps, t = [], 0
        for w in words:
            if rng.random() < cfg.p_interj:
                q = rng.uniform(0.3, 0.9)
                interj = _SYNTH_INTERJECTIONS[rng.integers(len(_SYNTH_INTERJECTIONS))]
                steps.append(self._timestep(t, {interj: q, NULL_TOKEN: 1.0 - q}))
                t += 1
            probs: dict[str, float] = {}
            u = rng.random()
            if u < cfg.p_swap:
                (d,) = self._distractors(w, 1)
                p_top = rng.uniform(0.5, 0.85)
                p_true = (1.0 - p_top) * rng.uniform(0.6, 1.0)
                probs = {d: p_top, w: p_true, NULL_TOKEN: max(1.0 - p_top - p_true, 0.0)}
            elif u < cfg.p_swap + cfg.p_confuse:
                p_true = rng.uniform(0.5, 0.95)
                ds = self._distractors(w, int(rng.integers(1, 3)))
                rest = (1.0 - p_true) * rng.dirichlet(np.ones(len(ds) + 1))
                probs = {w: p_true}
                for d, p in zip(ds, rest[:-1]):
                    probs[d] = p
                probs[NULL_TOKEN] = rest[-1]
            else:
                probs = {w: 1.0}
            if cfg.p_drop and rng.random() < cfg.p_drop:
                probs.pop(w, None)
                if not probs:
                    probs = {NULL_TOKEN: 1.0}
            steps.append(self._timestep(t, probs))
            t += 1
        return ConfusionNetwork(tuple(steps))


def _inform_phrase(slot: str, value: str, rng) -> str:
    if value == DONTCARE_LABEL:
        options = _DONTCARE_TEMPLATES.get(slot) or [t.format(s=slot) for t in _GENERIC_DONTCARE]
        return options[rng.integers(len(options))]
    options = _INFORM_TEMPLATES.get(slot, _GENERIC_INFORM)
    return options[rng.integers(len(options))].format(v=value)


def generate_synthetic(cfg: SynthConfig, ontology: Optional[Ontology] = None) -> list[Dialog]:
    """Template restaurant dialogs with gold states and noisy user cnets.

    Fully determined by ``cfg`` (including ``cfg.seed``).
    """
    ontology = ontology or Ontology.load("synthetic")
    rng = make_rng(cfg.seed, 7)
    noiser = _Noiser(cfg, ontology, make_rng(cfg.seed, 11))
    slots = ontology.slot_names
    dialogs = []
    for n in range(cfg.n_dialogs):
        goal = {}
        for s in slots:
            if rng.random() < cfg.p_dontcare:
                goal[s] = DONTCARE_LABEL
            else:
                vals = ontology.goal_slots[s]
                goal[s] = vals[rng.integers(len(vals))]
        order = [slots[i] for i in rng.permutation(len(slots))]
        req_pool = list(ontology.requestable_slots)
        wanted = [req_pool[i] for i in rng.choice(len(req_pool), size=2, replace=False)]
        state = {s: NONE_LABEL for s in slots}
        pending_inform = list(order)
        sys_acts: tuple[DialogActTriple, ...] = (DialogActTriple("welcomemsg"),)
        turns = []
        for _ in range(cfg.turns):
            phrases, requests = [], set()
            informed = []
            if pending_inform:
                k = min(len(pending_inform), int(rng.integers(1, 3)))
                for s in pending_inform[:k]:
                    phrases.append(_inform_phrase(s, goal[s], rng))
                    informed.append(s)
                del pending_inform[:k]
            elif (filled := [s for s in slots if state[s] != NONE_LABEL]) and rng.random() < cfg.p_change:
                s = filled[rng.integers(len(filled))]
                vals = [v for v in ontology.goal_slots[s] if v != goal[s]]
                goal[s] = vals[rng.integers(len(vals))]
                phrases.append("no " + _inform_phrase(s, goal[s], rng))
                informed.append(s)
            elif wanted:
                r = wanted.pop(0)
                opts = _REQUEST_TEMPLATES.get(r, [f"what is the {r}"])
                phrases.append(opts[rng.integers(len(opts))])
                requests.add(r)
            else:
                phrases.append(_FILLERS[rng.integers(len(_FILLERS))])
            for s in informed:
                state[s] = goal[s]
            words = tuple(" and ".join(phrases).split())
            cnet = noiser.corrupt(words)
            turns.append(Turn(sys_acts, words, cnet, DialogState(dict(state), frozenset(requests))))
            # next system move
            missing = [s for s in slots if state[s] == NONE_LABEL]
            if requests:
                r = min(requests)
                if r in state:
                    answer = goal[r] if goal[r] != DONTCARE_LABEL else ontology.goal_slots[r][0]
                else:
                    answer = _REQUEST_ANSWERS.get(r) or _NAMES[rng.integers(len(_NAMES))]
                sys_acts = (DialogActTriple("inform", r, answer),)
            elif informed and rng.random() < 0.3:
                s = informed[-1]
                sys_acts = (DialogActTriple("expl-conf", s, state[s]),)
            elif missing:
                sys_acts = (DialogActTriple("request", missing[0]),)
            else:
                name = _NAMES[rng.integers(len(_NAMES))]
                sys_acts = (DialogActTriple("offer", "name", name),) + tuple(
                    DialogActTriple("inform", s, state[s]) for s in slots if state[s] != DONTCARE_LABEL)
        dialogs.append(Dialog(f"{cfg.id_prefix}-{cfg.seed:04d}-{n:05d}", tuple(turns)))
    return dialogs


# Named synthetic corpora: (dialogs per split, generator seed per split).
SYNTHETIC_PRESETS = {
    "small": {"train": (20, 100), "dev": (20, 150), "test": (20, 200)},
    "medium": {"train": (300, 100), "dev": (100, 150), "test": (100, 200)},
}


def synthetic_split(name: str, split: str, ontology: Optional[Ontology] = None, **overrides) -> list[Dialog]:
    """One split of a named synthetic corpus; ``overrides`` replace :class:`SynthConfig` fields."""
    if name not in SYNTHETIC_PRESETS:
        raise StructureError(f"unknown synthetic corpus {name!r}; choose from {sorted(SYNTHETIC_PRESETS)}")
    if split not in SPLITS:
        raise StructureError(f"unknown split {split!r}")
    n, seed = SYNTHETIC_PRESETS[name][split]
    cfg = dict(n_dialogs=n, seed=seed, id_prefix=f"{name}-{split}")
    cfg.update(overrides)
    return generate_synthetic(SynthConfig(**cfg), ontology)
