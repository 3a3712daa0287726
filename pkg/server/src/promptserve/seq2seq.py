"""Prompt-tuned encoder-decoder language model.

The backbone is a small transformer seq2seq with a tied input/output
embedding. Every encoder and decoder layer gets its own trainable soft
prompt: a block of vectors prepended to the hidden sequence before the layer
runs and stripped afterwards, so prompts condition attention without leaking
into the output positions.

Training is two-stage. First the backbone is provisioned: all non-prompt
parameters train on the task while the prompts sit at their initialization
(the small-scale stand-in for starting from a pretrained checkpoint). Then
the backbone is frozen and hashed, and only the prompts train. The hash
covers exactly the frozen parameters, so any later drift is detectable.

Two details keep the frozen stack usable as a language model: a final
LayerNorm on each stack (norm_first layers never normalize the residual
stream at the top, and an unnormalized stream blows up the tied-embedding
logits), and logits scaled by 1/sqrt(d_model).
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Iterator

import torch
from torch import Tensor, nn

from .config import ServerConfig

_BAN_VALUE = -1e30


def sinusoid_table(max_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal position encodings, shape (max_len, d_model)."""
    position = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float32)
        * (-math.log(10000.0) / d_model)
    )
    table = torch.zeros(max_len, d_model)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)
    return table


def state_hash(named_params: Iterable[tuple[str, Tensor]]) -> str:
    """Order-independent digest of named tensors (sorted by name)."""
    digest = hashlib.sha256()
    for name, param in sorted(named_params, key=lambda item: item[0]):
        digest.update(name.encode("utf-8"))
        data = param.detach().cpu().contiguous().to(torch.float32)
        digest.update(data.numpy().tobytes())
    return digest.hexdigest()


class PromptSeq2Seq(nn.Module):
    def __init__(self, vocab_size: int, pad_id: int, cfg: ServerConfig) -> None:
        super().__init__()
        self.pad_id = pad_id
        self.prompt_len = cfg.prompt_len
        d = cfg.gen_d_model
        self.d_model = d
        self.emb = nn.Embedding(vocab_size, d, padding_idx=pad_id)
        self.register_buffer("pos", sinusoid_table(cfg.max_len, d))
        self.enc_layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d, cfg.gen_heads, cfg.gen_ff, dropout=0.0,
                batch_first=True, norm_first=True,
            )
            for _ in range(cfg.gen_enc_layers)
        )
        self.dec_layers = nn.ModuleList(
            nn.TransformerDecoderLayer(
                d, cfg.gen_heads, cfg.gen_ff, dropout=0.0,
                batch_first=True, norm_first=True,
            )
            for _ in range(cfg.gen_dec_layers)
        )
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.enc_prompts = nn.ParameterList(
            nn.Parameter(torch.randn(cfg.prompt_len, d) * cfg.prompt_init_std)
            for _ in range(cfg.gen_enc_layers)
        )
        self.dec_prompts = nn.ParameterList(
            nn.Parameter(torch.randn(cfg.prompt_len, d) * cfg.prompt_init_std)
            for _ in range(cfg.gen_dec_layers)
        )

    # ------------------------------------------------------------------
    # parameter partitioning

    def backbone_named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, param in self.named_parameters():
            if not name.startswith(("enc_prompts", "dec_prompts")):
                yield name, param

    def prompt_parameters(self) -> Iterator[Tensor]:
        for prompt in self.enc_prompts:
            yield prompt
        for prompt in self.dec_prompts:
            yield prompt

    def freeze_backbone(self) -> None:
        for _, param in self.backbone_named_parameters():
            param.requires_grad_(False)

    def backbone_hash(self) -> str:
        return state_hash(self.backbone_named_parameters())

    # ------------------------------------------------------------------
    # forward pieces

    def _embed(self, ids: Tensor) -> Tensor:
        return self.emb(ids) + self.pos[: ids.shape[1]]

    def _with_prompt_pad(self, pad: Tensor | None, batch: int) -> Tensor | None:
        """Prepend always-attended prompt columns to a key-padding mask."""
        if pad is None:
            return None
        prompt_cols = torch.zeros(
            batch, self.prompt_len, dtype=torch.bool, device=pad.device
        )
        return torch.cat([prompt_cols, pad], dim=1)

    def encode(self, src_ids: Tensor, src_pad: Tensor | None = None) -> Tensor:
        batch = src_ids.shape[0]
        h = self._embed(src_ids)
        padded = self._with_prompt_pad(src_pad, batch)
        for layer, prompt in zip(self.enc_layers, self.enc_prompts):
            h = torch.cat([prompt.expand(batch, -1, -1), h], dim=1)
            h = layer(h, src_key_padding_mask=padded)
            h = h[:, self.prompt_len :]
        return self.enc_norm(h)

    def decode_logits(
        self,
        memory: Tensor,
        mem_pad: Tensor | None,
        tgt_ids: Tensor,
        tgt_pad: Tensor | None = None,
    ) -> Tensor:
        batch, tgt_len = tgt_ids.shape
        h = self._embed(tgt_ids)
        total = self.prompt_len + tgt_len
        causal = torch.triu(torch.ones(total, total, dtype=torch.bool), 1)
        causal[:, : self.prompt_len] = False  # every position sees the prompt
        padded_tgt = self._with_prompt_pad(tgt_pad, batch)
        for layer, prompt in zip(self.dec_layers, self.dec_prompts):
            h = torch.cat([prompt.expand(batch, -1, -1), h], dim=1)
            h = layer(
                h,
                memory,
                tgt_mask=causal,
                tgt_key_padding_mask=padded_tgt,
                memory_key_padding_mask=mem_pad,
            )
            h = h[:, self.prompt_len :]
        h = self.dec_norm(h)
        return h @ self.emb.weight.T / math.sqrt(self.d_model)

    def forward(
        self,
        src_ids: Tensor,
        src_pad: Tensor | None,
        tgt_ids: Tensor,
        tgt_pad: Tensor | None = None,
    ) -> Tensor:
        memory = self.encode(src_ids, src_pad)
        return self.decode_logits(memory, src_pad, tgt_ids, tgt_pad)

    # ------------------------------------------------------------------
    # inference

    @torch.no_grad()
    def generate(
        self,
        src_ids: Tensor,
        bos_id: int,
        eos_id: int,
        max_new: int,
        temperature: float,
        gen: torch.Generator | None = None,
        banned_ids: Iterable[int] = (),
    ) -> list[list[int]]:
        """Decode id sequences (EOS-terminated, BOS/EOS stripped)."""
        batch = src_ids.shape[0]
        src_pad = src_ids == self.pad_id
        memory = self.encode(src_ids, src_pad)
        out = torch.full((batch, 1), bos_id, dtype=torch.long)
        finished = torch.zeros(batch, dtype=torch.bool)
        banned = sorted(set(banned_ids))
        for _ in range(max_new):
            logits = self.decode_logits(memory, src_pad, out)[:, -1, :]
            if banned:
                logits[:, banned] = _BAN_VALUE
            if temperature <= 0:
                nxt = logits.argmax(dim=-1, keepdim=True)
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                nxt = torch.multinomial(probs, 1, generator=gen)
            nxt[finished] = eos_id
            out = torch.cat([out, nxt], dim=1)
            finished |= nxt.squeeze(1) == eos_id
            if bool(finished.all()):
                break
        results: list[list[int]] = []
        for row in out[:, 1:].tolist():
            ids: list[int] = []
            for token_id in row:
                if token_id == eos_id:
                    break
                ids.append(token_id)
            results.append(ids)
        return results

    @torch.no_grad()
    def sequence_logprobs(
        self,
        memory: Tensor,
        mem_pad: Tensor | None,
        targets: list[list[int]],
        score_from: int,
        bos_id: int,
    ) -> Tensor:
        """Teacher-forced log P(target[score_from:] | target[:score_from]).

        ``memory`` is a single encoded source (1, S, D) shared by every
        target row. Returns one summed log-probability per target.
        """
        batch = len(targets)
        max_len = max(len(t) for t in targets)
        tgt_in = torch.full((batch, max_len), self.pad_id, dtype=torch.long)
        tgt_out = torch.full((batch, max_len), self.pad_id, dtype=torch.long)
        for i, target in enumerate(targets):
            shifted = [bos_id] + target[:-1]
            tgt_in[i, : len(target)] = torch.tensor(shifted, dtype=torch.long)
            tgt_out[i, : len(target)] = torch.tensor(target, dtype=torch.long)
        tgt_pad = torch.ones(batch, max_len, dtype=torch.bool)
        for i, target in enumerate(targets):
            tgt_pad[i, : len(target)] = False
        mem = memory.expand(batch, -1, -1)
        mem_mask = mem_pad.expand(batch, -1) if mem_pad is not None else None
        logits = self.decode_logits(mem, mem_mask, tgt_in, tgt_pad)
        logprobs = torch.log_softmax(logits, dim=-1)
        token_lp = logprobs.gather(2, tgt_out.unsqueeze(2)).squeeze(2)
        keep = ~tgt_pad
        keep[:, :score_from] = False
        return (token_lp * keep).sum(dim=1)
