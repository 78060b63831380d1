"""Word confusion networks: data types, the text log format, pruning and coverage statistics.

A confusion network (cnet) is a linear sequence of timesteps.  Each timestep
holds the competing word hypotheses an ASR system considered for one time
interval, together with their natural-log posterior scores.  ``!null`` is the
hypothesis that no word was spoken and is kept as an ordinary token.

The text format is one timestep per line::

    27 0.91875 0.984375 !null (-0.005078796) and (-5.305283) ok (-9.687913)

i.e. ``index start end`` followed by ``token (log_score)`` groups.  Lines
starting with ``#`` are comments; blank lines separate utterances in
multi-utterance files.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import CnetParseError, StructureError

NULL_TOKEN = "!null"

DEFAULT_INTERJECTIONS = frozenset(
    {"uh", "ah", "oh", "um", "er", "eh", "hmm", "huh", "mm", "mmhmm"}
)

_SCORE_RE = re.compile(r"^\((.+)\)$")


class CnetWarning(UserWarning):
    """Recoverable oddities in cnet input (positive scores, duplicate tokens)."""


@dataclass(frozen=True)
class Hypothesis:
    token: str
    log_score: float

    def __post_init__(self):
        if not self.token or any(c.isspace() for c in self.token):
            raise StructureError(f"invalid hypothesis token {self.token!r}")
        if not self.log_score <= 0.0:
            raise StructureError(f"log score must be <= 0, got {self.log_score!r}")

    @property
    def prob(self) -> float:
        return math.exp(self.log_score)


@dataclass(frozen=True)
class Timestep:
    start: float
    end: float
    hypotheses: tuple[Hypothesis, ...]

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        if not self.start < self.end:
            raise StructureError(f"timestep start {self.start} is not before end {self.end}")
        if not self.hypotheses:
            raise StructureError("timestep has no hypotheses")
        tokens = [h.token for h in self.hypotheses]
        if len(set(tokens)) != len(tokens):
            raise StructureError(f"duplicate tokens in timestep: {tokens}")

    def __len__(self):
        return len(self.hypotheses)

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(h.token for h in self.hypotheses)

    def best(self) -> Hypothesis:
        """Highest scoring hypothesis; ties go to the earlier one."""
        return max(self.hypotheses, key=lambda h: h.log_score)


@dataclass(frozen=True)
class ConfusionNetwork:
    timesteps: tuple[Timestep, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "timesteps", tuple(self.timesteps))
        for a, b in zip(self.timesteps, self.timesteps[1:]):
            if a.end > b.start + 1e-9:
                raise StructureError(
                    f"timesteps overlap or are out of order: [{a.start}, {a.end}] then [{b.start}, {b.end}]"
                )

    def __len__(self):
        return len(self.timesteps)

    def __iter__(self) -> Iterator[Timestep]:
        return iter(self.timesteps)

    @property
    def n_hypotheses(self) -> int:
        return sum(len(t) for t in self.timesteps)

    def token_set(self) -> set[str]:
        return {h.token for t in self.timesteps for h in t.hypotheses}

    def one_best(self) -> list[str]:
        """Top hypothesis of every timestep, with ``!null`` winners skipped."""
        out = []
        for t in self.timesteps:
            tok = t.best().token
            if tok != NULL_TOKEN:
                out.append(tok)
        return out


@dataclass(frozen=True)
class CoverageReport:
    all_words_pct: float
    slot_value_words_pct: Optional[float]
    utterance_count: int
    avg_timesteps: float
    avg_hypotheses_per_timestep: float

    def as_dict(self) -> dict:
        return {
            "all_words_pct": self.all_words_pct,
            "slot_value_words_pct": self.slot_value_words_pct,
            "utterance_count": self.utterance_count,
            "avg_timesteps": self.avg_timesteps,
            "avg_k": self.avg_hypotheses_per_timestep,
        }


# --------------------------------------------------------------------------
# parsing / serialization


def _merge_duplicates(hyps: list[Hypothesis], line_no: int) -> list[Hypothesis]:
    seen: dict[str, int] = {}
    out: list[Hypothesis] = []
    for h in hyps:
        if h.token in seen:
            i = seen[h.token]
            warnings.warn(
                f"line {line_no}: duplicate token {h.token!r} merged, keeping the higher score",
                CnetWarning,
                stacklevel=4,
            )
            if h.log_score > out[i].log_score:
                out[i] = h
        else:
            seen[h.token] = len(out)
            out.append(h)
    return out


def _parse_line(line: str, line_no: int) -> tuple[int, Timestep]:
    parts = line.split()
    if len(parts) < 5 or (len(parts) - 3) % 2:
        raise CnetParseError(line_no, "expected 'idx start end' followed by 'token (score)' pairs")
    try:
        idx = int(parts[0])
        start, end = float(parts[1]), float(parts[2])
    except ValueError:
        raise CnetParseError(line_no, "index/start/end are not numeric") from None
    hyps = []
    for tok, raw in zip(parts[3::2], parts[4::2]):
        m = _SCORE_RE.match(raw)
        if m is None:
            raise CnetParseError(line_no, f"score {raw!r} is not of the form '(float)'")
        try:
            score = float(m.group(1))
        except ValueError:
            raise CnetParseError(line_no, f"score {raw!r} is not a number") from None
        if not math.isfinite(score):
            raise CnetParseError(line_no, f"non-finite score {raw!r}")
        if score > 0.0:
            warnings.warn(
                f"line {line_no}: positive log score {score} for {tok!r} clamped to 0",
                CnetWarning,
                stacklevel=3,
            )
            score = 0.0
        hyps.append(Hypothesis(tok.lower(), score))
    hyps = _merge_duplicates(hyps, line_no)
    try:
        return idx, Timestep(start, end, tuple(hyps))
    except StructureError as exc:
        raise CnetParseError(line_no, str(exc)) from None


def _parse_block(lines: Sequence[tuple[int, str]], allow_empty: bool) -> ConfusionNetwork:
    timesteps = []
    prev_idx = 0
    for line_no, line in lines:
        idx, ts = _parse_line(line, line_no)
        if (prev_idx == 0 and idx != 1) or idx <= prev_idx:
            raise CnetParseError(line_no, f"timestep index {idx} does not follow {prev_idx}")
        prev_idx = idx
        timesteps.append(ts)
    if not timesteps and not allow_empty:
        raise StructureError("empty confusion network")
    return ConfusionNetwork(tuple(timesteps))


def parse_cnet(text: str) -> ConfusionNetwork:
    """Parse a single utterance in the cnet log format.

    Raises :class:`CnetParseError` (with the offending line number) for
    malformed lines and :class:`StructureError` for empty input or
    out-of-order timesteps.
    """
    lines = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append((line_no, line))
    return _parse_block(lines, allow_empty=False)


def parse_cnet_blocks(text: str, allow_empty: bool = False) -> list[ConfusionNetwork]:
    """Parse a multi-utterance file where blocks are separated by blank lines.

    A block consisting only of comment lines yields an empty network when
    ``allow_empty`` is set (the corpus layout uses ``# turn N`` headers so
    silent turns stay aligned).
    """
    blocks: list[list[tuple[int, str]]] = []
    current: Optional[list[tuple[int, str]]] = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            if current is not None:
                blocks.append(current)
                current = None
            continue
        if current is None:
            current = []
        if not line.startswith("#"):
            current.append((line_no, line))
    if current is not None:
        blocks.append(current)
    return [_parse_block(b, allow_empty) for b in blocks]


def serialize_cnet(cnet: ConfusionNetwork) -> str:
    """Inverse of :func:`parse_cnet`; floats are written with ``repr`` so they round-trip."""
    lines = []
    for i, ts in enumerate(cnet.timesteps, start=1):
        hyps = " ".join(f"{h.token} ({h.log_score!r})" for h in ts.hypotheses)
        lines.append(f"{i} {ts.start!r} {ts.end!r} {hyps}")
    return "\n".join(lines) + ("\n" if lines else "")


def read_cnet(path) -> ConfusionNetwork:
    return parse_cnet(Path(path).read_text(encoding="utf-8"))


def load_interjections(path) -> frozenset[str]:
    """One token per line, UTF-8; blank lines and ``#`` comments ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


# --------------------------------------------------------------------------
# transformations


def prune_cnet(
    cnet: ConfusionNetwork,
    interjections: Iterable[str] = DEFAULT_INTERJECTIONS,
    prob_threshold: float = 0.001,
    renormalize: bool = False,
) -> ConfusionNetwork:
    """Drop interjections and hypotheses with posterior below ``prob_threshold``.

    A timestep disappears when nothing survives, or when pruning removed all
    of its lexical hypotheses and only ``!null`` is left.  Surviving scores
    are kept as they are unless ``renormalize`` is set.
    """
    if not 0.0 <= prob_threshold < 1.0:
        raise StructureError(f"prob_threshold must lie in [0, 1), got {prob_threshold}")
    interjections = frozenset(interjections)
    kept_steps = []
    for ts in cnet.timesteps:
        survivors = [
            h for h in ts.hypotheses
            if h.token not in interjections and h.prob >= prob_threshold
        ]
        if not survivors:
            continue
        if len(survivors) < len(ts) and all(h.token == NULL_TOKEN for h in survivors):
            continue
        if renormalize:
            z = math.log(sum(h.prob for h in survivors))
            survivors = [Hypothesis(h.token, min(h.log_score - z, 0.0)) for h in survivors]
        kept_steps.append(Timestep(ts.start, ts.end, tuple(survivors)))
    return ConfusionNetwork(tuple(kept_steps))


def degenerate_cnet(tokens: Sequence[str]) -> ConfusionNetwork:
    """One certain hypothesis per token, on synthetic times ``(i, i + 1)``."""
    if not tokens:
        raise StructureError("degenerate_cnet needs at least one token")
    return ConfusionNetwork(
        tuple(Timestep(float(i), float(i + 1), (Hypothesis(t, 0.0),)) for i, t in enumerate(tokens))
    )


def one_best_cnet(cnet: ConfusionNetwork) -> ConfusionNetwork:
    """The 1-best path of ``cnet`` as a degenerate network (empty if nothing but ``!null`` wins)."""
    best = cnet.one_best()
    return degenerate_cnet(best) if best else ConfusionNetwork(())


# --------------------------------------------------------------------------
# statistics


def cnet_size_summary(cnets: Sequence[ConfusionNetwork]) -> tuple[float, float]:
    """Mean timesteps per network and mean hypotheses per timestep (pooled over all timesteps)."""
    if not cnets:
        raise StructureError("cnet_size_summary needs at least one network")
    n_steps = sum(len(c) for c in cnets)
    n_hyps = sum(c.n_hypotheses for c in cnets)
    return n_steps / len(cnets), (n_hyps / n_steps if n_steps else 0.0)


def coverage_stats(
    pairs: Sequence[tuple[Sequence[str], ConfusionNetwork]],
    slot_value_vocab: Iterable[str] = (),
) -> CoverageReport:
    """Share of transcript word tokens that occur somewhere in the paired cnet.

    Counts tokens, not types.  ``slot_value_words_pct`` restricts the count to
    transcript tokens found in ``slot_value_vocab`` and is ``None`` when that
    vocabulary is empty (or no transcript token belongs to it).
    """
    if not pairs:
        raise StructureError("coverage_stats needs at least one (transcript, cnet) pair")
    sv = {w.lower() for w in slot_value_vocab}
    total = hit = sv_total = sv_hit = 0
    for transcript, cnet in pairs:
        available = cnet.token_set()
        for word in transcript:
            w = word.lower()
            found = w in available
            total += 1
            hit += found
            if w in sv:
                sv_total += 1
                sv_hit += found
    avg_t, avg_k = cnet_size_summary([c for _, c in pairs])
    return CoverageReport(
        all_words_pct=100.0 * hit / total if total else 0.0,
        slot_value_words_pct=(100.0 * sv_hit / sv_total) if (sv and sv_total) else None,
        utterance_count=len(pairs),
        avg_timesteps=avg_t,
        avg_hypotheses_per_timestep=avg_k,
    )
