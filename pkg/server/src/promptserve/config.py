"""Server-side model and training configuration.

Everything here is desk scale: miniature backbones sized so training and the
test suite run on CPU in seconds. Clients may send full-scale hints (10k
steps, batch 16); the server honors hyperparameters it can and caps step
counts at its own limits, echoing what it actually used in every training
response.

Prompt length and initialization have no authoritative setting anywhere, so
they are plain config with arbitrary defaults: 16 vectors per layer, entries
drawn from N(0, 0.5**2).
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class ServerConfig:
    seed: int = 0

    # generator: frozen seq2seq backbone + per-layer soft prompts
    gen_d_model: int = 64
    gen_heads: int = 4
    gen_ff: int = 128
    gen_enc_layers: int = 2
    gen_dec_layers: int = 2
    prompt_len: int = 16
    prompt_init_std: float = 0.5
    pretrain_steps: int = 400     # backbone provisioning, before the freeze
    pretrain_lr: float = 3e-3
    prompt_steps: int = 200       # cap on prompt-tuning steps per train call
    prompt_lr: float = 5e-3       # used when the client sends no lr
    generator_batch: int = 16
    max_sentinels: int = 24       # upper bound on mask slots per request
    max_new_tokens_cap: int = 64

    # tagger: token classification with mixup layer hooks
    tagger_d_model: int = 32
    tagger_heads: int = 2
    tagger_ff: int = 64
    tagger_layers: int = 12
    ner_lr: float = 5e-5
    ner_batch: int = 8
    ner_steps: int = 200          # used when the client sends no step count

    max_len: int = 512            # positional-encoding budget

    def __post_init__(self) -> None:
        if self.tagger_layers < 2:
            raise ValueError("tagger needs at least two layers to mix between")
        if self.prompt_len < 1:
            raise ValueError("prompt_len must be positive")
