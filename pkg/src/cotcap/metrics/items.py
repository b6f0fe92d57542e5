from __future__ import annotations

from dataclasses import dataclass


class EmptyEvaluation(ValueError):
    pass


class MissingReference(KeyError):
    def __init__(self, item_id: str):
        super().__init__(item_id)
        self.item_id = item_id

    def __str__(self) -> str:
        return f"no references for item {self.item_id!r}"


class MissingAudioRef(ValueError):
    pass


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    candidate: str
    references: tuple[str, ...]
    audio_ref: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "references", tuple(self.references))
        if not self.references:
            raise MissingReference(self.item_id)


def check_items(items) -> list[EvalItem]:
    items = list(items)
    if not items:
        raise EmptyEvaluation("nothing to evaluate")
    return items
