"""Token vocabulary: a dense mapping between element strings and ids.

Token ids are dense integers 0..V-1. BOS and EOS are ordinary members of
the vocabulary with reserved ids; BOS is only ever used as left padding
for conditioning contexts, EOS terminates responses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered element strings with BOS/EOS ids."""

    elements: tuple[str, ...]
    bos_id: int
    eos_id: int
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if len(set(self.elements)) != len(self.elements):
            raise InputError("vocabulary elements must be unique")
        if self.bos_id == self.eos_id:
            raise InputError("BOS and EOS must be distinct tokens")
        for i in (self.bos_id, self.eos_id):
            if not 0 <= i < len(self.elements):
                raise InputError(f"special token id {i} outside vocabulary")
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.elements)})

    @classmethod
    def build(cls, elements, bos: str = BOS_TOKEN, eos: str = EOS_TOKEN) -> "Vocabulary":
        """Create a vocabulary, appending BOS/EOS if not already present."""
        elems = list(elements)
        for special in (bos, eos):
            if special not in elems:
                elems.append(special)
        return cls(tuple(elems), elems.index(bos), elems.index(eos))

    @property
    def size(self) -> int:
        return len(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def id_of(self, element: str) -> int:
        try:
            return self._index[element]
        except KeyError:
            raise InputError(f"unknown element {element!r}") from None

    def encode(self, elements) -> tuple[int, ...]:
        return tuple(self.id_of(e) for e in elements)

    def decode(self, token_ids) -> tuple[str, ...]:
        self.check_tokens(token_ids)
        return tuple(self.elements[t] for t in token_ids)

    def check_tokens(self, token_ids) -> None:
        """Raise InputError on any id outside 0..V-1."""
        for t in token_ids:
            if not 0 <= int(t) < len(self.elements):
                raise InputError(f"token id {t} outside vocabulary of size {len(self.elements)}")
