"""Token-classification model with hidden-state mixup.

A stack of transformer encoder layers over token embeddings, with a BIO
label head. Besides the ordinary forward pass, the model supports a mixed
pass: two sentences run independently through layers ``0..m-1``, their
hidden states are linearly interpolated at layer ``m``, and the blend runs
through the remaining layers. The interpolation happens exactly where a
forward-pre-hook on ``layers[m]`` would observe it, so the mixing point is
externally measurable.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import ServerConfig
from .seq2seq import sinusoid_table


class MixupTagger(nn.Module):
    def __init__(
        self, vocab_size: int, pad_id: int, n_labels: int, cfg: ServerConfig
    ) -> None:
        super().__init__()
        self.pad_id = pad_id
        d = cfg.tagger_d_model
        self.emb = nn.Embedding(vocab_size, d, padding_idx=pad_id)
        self.register_buffer("pos", sinusoid_table(cfg.max_len, d))
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d, cfg.tagger_heads, cfg.tagger_ff, dropout=0.0,
                batch_first=True, norm_first=True,
            )
            for _ in range(cfg.tagger_layers)
        )
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, n_labels)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def embed(self, ids: Tensor) -> Tensor:
        return self.emb(ids) + self.pos[: ids.shape[1]]

    def run_layers(self, h: Tensor, pad: Tensor | None, lo: int, hi: int) -> Tensor:
        for layer in self.layers[lo:hi]:
            h = layer(h, src_key_padding_mask=pad)
        return h

    def forward(self, ids: Tensor, pad: Tensor | None = None) -> Tensor:
        h = self.run_layers(self.embed(ids), pad, 0, self.n_layers)
        return self.head(self.norm(h))

    def forward_mixed(
        self,
        ids_a: Tensor,
        pad_a: Tensor | None,
        ids_b: Tensor,
        pad_b: Tensor | None,
        lam: float,
        layer: int,
    ) -> Tensor:
        """Interpolate the two streams going into ``layers[layer]``.

        Both id tensors must share a sequence length (pad to the wider one).
        The blended stream continues under the first sentence's pad mask —
        that sentence's labels are the dominant supervision target.
        """
        if not 1 <= layer < self.n_layers:
            raise ValueError(
                f"mix layer must be in [1, {self.n_layers - 1}], got {layer}"
            )
        if ids_a.shape != ids_b.shape:
            raise ValueError("mixed sentences must be padded to the same shape")
        h_a = self.run_layers(self.embed(ids_a), pad_a, 0, layer)
        h_b = self.run_layers(self.embed(ids_b), pad_b, 0, layer)
        mixed = lam * h_a + (1.0 - lam) * h_b
        h = self.run_layers(mixed, pad_a, layer, self.n_layers)
        return self.head(self.norm(h))


def decode_bio(labels: list[str]) -> list[dict]:
    """BIO label strings -> span records; stray I- starts a fresh span."""
    spans: list[dict] = []
    start: int | None = None
    current: str | None = None

    def close(end: int) -> None:
        nonlocal start, current
        if start is not None:
            spans.append({"start": start, "end": end, "type": current})
        start, current = None, None

    for i, label in enumerate(labels):
        if label.startswith("B-"):
            close(i)
            start, current = i, label[2:]
        elif label.startswith("I-"):
            if current != label[2:]:
                close(i)
                start, current = i, label[2:]
        else:
            close(i)
    close(len(labels))
    return spans
