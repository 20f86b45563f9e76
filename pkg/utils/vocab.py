from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from core.errors import DataError

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = (PAD, BOS, EOS, UNK)


class Vocabulary:
    """Token <-> id bijection with reserved ids 0..3."""

    def __init__(self, tokens: Sequence[str] = ()):
        self._id_to_token: list[str] = list(RESERVED)
        self._token_to_id: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for token in tokens:
            if token in self._token_to_id:
                raise DataError(f"Duplicate vocabulary token: {token!r}")
            self._token_to_id[token] = len(self._id_to_token)
            self._id_to_token.append(token)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self._id_to_token[len(RESERVED):]

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token(self, index: int) -> str:
        return self._id_to_token[index]

    def encode(self, tokens: Iterable[str], add_eos: bool = False) -> list[int]:
        ids = [self.id(tok) for tok in tokens]
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Tokens up to (excluding) the first EOS; BOS and PAD dropped."""
        out: list[str] = []
        for index in ids:
            if index == EOS_ID:
                break
            if index in (PAD_ID, BOS_ID):
                continue
            out.append(self._id_to_token[index])
        return out

    def save(self, path: Path) -> None:
        # one token per line, line k holds id k + 4
        Path(path).write_text("".join(f"{tok}\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Vocabulary file not found: {path}")
        return cls(path.read_text(encoding="utf-8").splitlines())


def build_vocab(sentences: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically.

    ``max_size`` counts the reserved ids as well.
    """
    counts = Counter(tok for sentence in sentences for tok in sentence if tok not in RESERVED)
    if not counts:
        raise DataError("Cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    keep = max(0, max_size - len(RESERVED))
    return Vocabulary([tok for tok, _ in ranked[:keep]])
