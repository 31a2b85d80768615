"""Layered parameter container shared by the extractor, generators and discriminators."""

import dataclasses
from typing import Dict, Hashable, Tuple

import numpy as np

from ntg.autograd import Tape, Var
from ntg.errors import FormatError


@dataclasses.dataclass
class Network:
    kind: str
    meta: Dict[str, Tuple[int, ...]]
    params: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def on_tape(self, tape: Tape, owner: Hashable = None) -> Dict[str, Var]:
        """Put every parameter on ``tape``.

        With ``owner`` set, parameters become leaves whose gradients come back
        keyed ``(owner, name)``; otherwise they are constants.
        """
        if owner is None:
            return {name: tape.constant(value) for name, value in self.params.items()}
        return {name: tape.leaf(value, (owner, name)) for name, value in self.params.items()}

    def to_sections(self, prefix: str) -> Dict[str, np.ndarray]:
        sections = {f"{prefix}.{name}": value for name, value in self.params.items()}
        for key, value in self.meta.items():
            sections[f"{prefix}.meta.{key}"] = np.asarray(value, dtype=np.float64).reshape(-1)
        return sections

    @classmethod
    def from_sections(cls, kind: str, sections: Dict[str, np.ndarray], prefix: str) -> "Network":
        meta, params = {}, {}
        head = f"{prefix}."
        for name in sorted(sections):
            if not name.startswith(head):
                continue
            rest = name[len(head):]
            if rest.startswith("meta."):
                meta[rest[len("meta."):]] = tuple(int(v) for v in sections[name])
            else:
                params[rest] = np.asarray(sections[name], dtype=np.float64)
        if not params:
            raise FormatError(f"weights contain no '{prefix}' sections")
        return cls(kind, meta, params)
