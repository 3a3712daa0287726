"""Closed token vocabulary with reserved control ids and mask sentinels."""

from __future__ import annotations

from collections.abc import Iterable

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
_CONTROL = (PAD, BOS, EOS, UNK)


class Vocab:
    """Id space: 4 control tokens, then sentinels ``<X0>..``, then words.

    Word ids are assigned in sorted order so the mapping is a pure function
    of the token set — independent of input ordering.
    """

    def __init__(self, tokens: Iterable[str], n_sentinels: int = 0) -> None:
        self.n_sentinels = n_sentinels
        sentinels = [f"<X{k}>" for k in range(n_sentinels)]
        reserved = set(_CONTROL) | set(sentinels)
        words = sorted(set(tokens) - reserved)
        self._tokens = list(_CONTROL) + sentinels + words
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def sentinel(self, k: int) -> str:
        if not 0 <= k < self.n_sentinels:
            raise ValueError(f"sentinel {k} out of range")
        return f"<X{k}>"

    def sentinel_id(self, k: int) -> int:
        if not 0 <= k < self.n_sentinels:
            raise ValueError(f"sentinel {k} out of range")
        return 4 + k

    def sentinel_index(self, token_id: int) -> int | None:
        """Inverse of sentinel_id, or None for non-sentinel ids."""
        k = token_id - 4
        return k if 0 <= k < self.n_sentinels else None

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]
