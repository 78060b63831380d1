"""Slot inventories and dialog-state labels."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import StructureError

NONE_LABEL = "none"
DONTCARE_LABEL = "dontcare"


@dataclass(frozen=True)
class Ontology:
    """Goal slots with their value lists, plus requestable slots.

    The output space of a goal slot is ``("none", "dontcare", *values)``; index
    0 is always ``none``.
    """

    goal_slots: Mapping[str, tuple[str, ...]]
    requestable_slots: tuple[str, ...]
    name: str = "custom"

    def __post_init__(self):
        slots = {s: tuple(v) for s, v in self.goal_slots.items()}
        for slot, values in slots.items():
            if not values:
                raise StructureError(f"goal slot {slot!r} has no values")
            if len(set(values)) != len(values):
                raise StructureError(f"goal slot {slot!r} has duplicate values")
            if NONE_LABEL in values or DONTCARE_LABEL in values:
                raise StructureError(f"goal slot {slot!r} lists a reserved label as a value")
        object.__setattr__(self, "goal_slots", slots)
        object.__setattr__(self, "requestable_slots", tuple(self.requestable_slots))
        if len(set(self.requestable_slots)) != len(self.requestable_slots):
            raise StructureError("duplicate requestable slots")

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(self.goal_slots)

    def output_space(self, slot: str) -> tuple[str, ...]:
        return (NONE_LABEL, DONTCARE_LABEL) + self.goal_slots[slot]

    def label_index(self, slot: str, label: str) -> int:
        try:
            return self.output_space(slot).index(label)
        except ValueError:
            raise StructureError(
                f"{label!r} is not in the {len(self.output_space(slot))}-label output space of slot {slot!r}"
            ) from None

    def slot_value_words(self) -> set[str]:
        """Every word of every slot name and value (used for slot/value coverage)."""
        words = set()
        for slot, values in self.goal_slots.items():
            words.add(slot)
            for v in values:
                words.update(v.split())
        words.update(self.requestable_slots)
        return words

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "goal_slots": {s: list(v) for s, v in self.goal_slots.items()},
            "requestable_slots": list(self.requestable_slots),
        }

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"goal_slots": self.to_dict()["goal_slots"], "requestable_slots": list(self.requestable_slots)},
            sort_keys=True, separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: Mapping) -> "Ontology":
        return cls(
            goal_slots={s: tuple(v) for s, v in d["goal_slots"].items()},
            requestable_slots=tuple(d["requestable_slots"]),
            name=d.get("name", "custom"),
        )

    @classmethod
    def load(cls, name_or_path) -> "Ontology":
        """``"dstc2"`` / ``"synthetic"`` for the bundled files, else a path to a JSON file."""
        if str(name_or_path) in ("dstc2", "synthetic"):
            text = resources.files("cnet_dst.data").joinpath(f"ontology_{name_or_path}.json").read_text("utf-8")
        else:
            text = Path(name_or_path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DialogState:
    goals: Mapping[str, str]
    requests: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "goals", dict(self.goals))
        object.__setattr__(self, "requests", frozenset(self.requests))

    def to_dict(self) -> dict:
        return {"goals": dict(sorted(self.goals.items())), "requests": sorted(self.requests)}

    @classmethod
    def from_dict(cls, d: Mapping, ontology: Ontology) -> "DialogState":
        goals = {slot: NONE_LABEL for slot in ontology.slot_names}
        goals.update(d.get("goals", {}))
        return cls(goals, frozenset(d.get("requests", ())))


def validate_state(state: DialogState, ontology: Ontology) -> None:
    for slot, label in state.goals.items():
        if slot not in ontology.goal_slots:
            raise StructureError(f"unknown goal slot {slot!r}")
        ontology.label_index(slot, label)
    missing = set(ontology.slot_names) - set(state.goals)
    if missing:
        raise StructureError(f"state lacks goal slots {sorted(missing)}")
    extra = state.requests - set(ontology.requestable_slots)
    if extra:
        raise StructureError(f"unknown requestable slots {sorted(extra)}")


def empty_state(ontology: Ontology, requests: Iterable[str] = ()) -> DialogState:
    return DialogState({s: NONE_LABEL for s in ontology.slot_names}, frozenset(requests))
