"""Command-line launcher: ``promptserve --host 0.0.0.0 --port 8000``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import ServerConfig


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="promptserve",
        description="Model server for span-filling, type scoring, and NER tagging.",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0, help="server-side base seed")
    parser.add_argument("--pretrain-steps", type=int, default=None,
                        help="backbone provisioning steps before the freeze")
    parser.add_argument("--prompt-steps", type=int, default=None,
                        help="cap on prompt-tuning steps per training call")
    parser.add_argument("--ner-steps", type=int, default=None,
                        help="tagger steps when the client sends no count")
    args = parser.parse_args(argv)

    overrides: dict = {"seed": args.seed}
    if args.pretrain_steps is not None:
        overrides["pretrain_steps"] = args.pretrain_steps
    if args.prompt_steps is not None:
        overrides["prompt_steps"] = args.prompt_steps
    if args.ner_steps is not None:
        overrides["ner_steps"] = args.ner_steps
    cfg = ServerConfig(**overrides)
    uvicorn.run(create_app(cfg), host=args.host, port=args.port, log_level="info")


if __name__ == "__main__":
    main()
