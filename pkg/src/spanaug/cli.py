"""Command-line interface.

Subcommands: sample-shots, linearize, augment, filter, pairs, run, run-star,
eval. Exit codes: 0 success, 2 configuration error, 3 backend failure after
retries, 1 any other pipeline error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .augment import AugmentedSample, augment_dataset
from .config import RunConfig, load_config, parse_strategies
from .corpus import load_corpus, load_schema, sample_shots, save_corpus, sentence_to_record
from .errors import BackendUnavailableError, ConfigError, SpanAugError
from .evaluate import micro_f1
from .filtering import filter_samples
from .gateway import DecodeConfig, Gateway, RetryPolicy
from .manifest import dump_json, dump_jsonl, load_jsonl
from .mixup import MixupConfig, build_pairs
from .pipeline import build_backend, linearize_dataset, run, run_star
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--backend", choices=["mock", "http"], help="generation backend")
    p.add_argument("--backend-url", help="model server base URL (http backend)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--train", help="training corpus path")
    p.add_argument("--schema", help="schema file path")
    p.add_argument("--unlabeled", help="unlabeled corpus path")
    p.add_argument("--strategy", help="sa, elc, ea, er, a comma list, or all")
    p.add_argument("--multiplier", type=int, help="samples per sentence per strategy")
    p.add_argument("--K", type=int, dest="flip_count", help="label flips per sample")
    p.add_argument("--M-choices", dest="m_choices", help="comma list of entity-round choices")
    p.add_argument("--N-choices", dest="n_choices", help="comma list of context-round choices")
    p.add_argument("--flip-scheme", choices=["random", "fixed", "probability"])
    p.add_argument("--flip-metric", choices=["cosine", "negative_euclidean"])
    p.add_argument("--flip-direction", choices=["similar_high", "similar_low"])
    p.add_argument("--tau", type=float, help="confidence threshold")
    p.add_argument("--iterations", type=int, help="self-training iterations")


def _csv_ints(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError as e:
        raise ConfigError(f"bad integer list {raw!r}: {e}") from None


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    direct = {
        "seed": "seed", "backend": "backend", "backend_url": "backend_url",
        "out": "out", "train": "train", "schema": "schema", "unlabeled": "unlabeled",
        "multiplier": "multiplier", "flip_count": "flip_count",
        "flip_scheme": "flip_scheme", "flip_metric": "flip_metric",
        "flip_direction": "flip_direction", "tau": "tau", "iterations": "iterations",
    }
    for attr, fname in direct.items():
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, fname, value)
    if getattr(args, "strategy", None):
        cfg.strategies = parse_strategies(args.strategy)
    if getattr(args, "m_choices", None):
        cfg.entity_rounds_choices = _csv_ints(args.m_choices)
    if getattr(args, "n_choices", None):
        cfg.context_rounds_choices = _csv_ints(args.n_choices)
    return cfg


def _prepared_gateway(cfg: RunConfig):
    """Backend + gateway with the generator trained, for standalone commands."""
    schema = load_schema(cfg.schema)
    train = load_corpus(cfg.train, schema)
    backend = build_backend(cfg, schema)
    backend.train_generator({
        "train": [sentence_to_record(s) for s in train.sentences],
        "schema": {"types": [
            {"id": e.type_id, "tag": e.tag, "display_name": e.display_name}
            for e in schema.entries
        ]},
        "seed": derive_seed(cfg.seed, "train_lm"),
    })
    gateway = Gateway(backend, schema,
                      retry=RetryPolicy(cfg.retry_attempts, cfg.retry_backoff),
                      max_in_flight=cfg.max_in_flight)
    return schema, train, gateway


# --- subcommands ------------------------------------------------------------------


def cmd_sample_shots(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    corpus = load_corpus(args.corpus, schema, mode=args.mode)
    picked, rest = sample_shots(corpus, args.shots, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(picked, out / "train.conll")
    save_corpus(rest, out / "unlabeled.conll")
    print(f"selected {len(picked)} sentences for {args.shots}-shot train set, "
          f"{len(rest)} left unlabeled -> {out}")
    return 0


def cmd_linearize(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    corpus = load_corpus(args.corpus, schema, mode=args.mode)
    lines = linearize_dataset(corpus)
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} linearized sentences to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    cfg.require_paths()
    schema, train, gateway = _prepared_gateway(cfg)
    samples, report = augment_dataset(
        train, list(cfg.strategies), cfg.multiplier,
        cfg.strategy_config(), cfg.op_config(), cfg.scheme(), gateway,
        seed=derive_seed(cfg.seed, "augment"),
        decode=DecodeConfig(cfg.decode_max_new_tokens, cfg.decode_temperature),
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "augmented.jsonl").write_text(
        dump_jsonl([s.to_record() for s in samples]), encoding="utf-8")
    (out / "augment_report.json").write_text(dump_json(report.to_json()), encoding="utf-8")
    totals = report.to_json()["totals"]
    print(f"augmented {len(train.sentences)} sentences -> {totals['produced']} samples "
          f"({totals['skipped']} skipped, {totals['dropped']} dropped) -> {out}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    cfg.require_paths()
    out = Path(cfg.out)
    samples_path = Path(args.samples) if args.samples else out / "augmented.jsonl"
    if not samples_path.is_file():
        raise ConfigError(f"samples file not found: {samples_path}")
    samples = [AugmentedSample.from_record(r) for r in load_jsonl(samples_path)]
    schema, _, gateway = _prepared_gateway(cfg)
    kept, dropped, report = filter_samples(samples, gateway, schema)
    out.mkdir(parents=True, exist_ok=True)
    (out / "kept.jsonl").write_text(
        dump_jsonl([s.to_record() for s in kept]), encoding="utf-8")
    (out / "dropped.jsonl").write_text(
        dump_jsonl([{**s.to_record(), "filter_verdict": v} for s, v in dropped]),
        encoding="utf-8")
    (out / "filter_report.json").write_text(dump_json(report.to_json()), encoding="utf-8")
    (out / "filter_report.txt").write_text(report.format_table() + "\n", encoding="utf-8")
    print(report.format_table())
    return 0


def cmd_pairs(args: argparse.Namespace) -> int:
    samples_path = Path(args.samples)
    if not samples_path.is_file():
        raise ConfigError(f"samples file not found: {samples_path}")
    samples = [AugmentedSample.from_record(r) for r in load_jsonl(samples_path)]
    cfg = MixupConfig(args.alpha, args.beta, _csv_ints(args.layers))
    pairs = build_pairs(samples, cfg, derive_rng(args.seed, "pairs"))
    Path(args.out).write_text(dump_jsonl([p.to_record() for p in pairs]), encoding="utf-8")
    print(f"paired {len(pairs)} flipped samples -> {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    state = run(cfg)
    print(f"run complete: {len(state.completed)} phases, "
          f"{len(state.entries)} artifacts -> {cfg.out}/manifest.json")
    return 0


def cmd_run_star(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    state = run_star(cfg)
    print(f"extended run complete: {len(state.completed)} phases, "
          f"{len(state.entries)} artifacts -> {cfg.out}/manifest.json")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    gold = load_corpus(args.gold, schema, mode=args.mode)
    pred = load_corpus(args.pred, schema, mode=args.mode)
    score = micro_f1(gold, pred)
    if args.json:
        print(json.dumps(score.to_json(), sort_keys=True))
    else:
        print(f"precision {score.precision:.4f}  recall {score.recall:.4f}  "
              f"f1 {score.f1:.4f}  (tp {score.tp} fp {score.fp} fn {score.fn})")
    return 0


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanaug",
        description="Span-level data augmentation for low-resource NER corpora.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-shots", help="select a few-shot train set per entity type")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["strict", "lenient"], default="strict")
    p.set_defaults(fn=cmd_sample_shots)

    p = sub.add_parser("linearize", help="print the reversible linearized form")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", help="write to a file instead of stdout")
    p.add_argument("--mode", choices=["strict", "lenient"], default="strict")
    p.set_defaults(fn=cmd_linearize)

    p = sub.add_parser("augment", help="generate augmented samples")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("filter", help="self-consistency filter augmented samples")
    _add_config_flags(p)
    p.add_argument("--samples", help="augmented samples JSONL (default: <out>/augmented.jsonl)")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("pairs", help="build mixup pairs from flipped samples")
    p.add_argument("--samples", required=True, help="kept samples JSONL")
    p.add_argument("--out", required=True, help="pairs JSONL to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=130.0)
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--layers", default="8,9,10", help="comma list of mixable layers")
    p.set_defaults(fn=cmd_pairs)

    p = sub.add_parser("run", help="full augment/filter/self-training flow")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("run-star", help="run plus pseudo-labeling of an unlabeled pool")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_run_star)

    p = sub.add_parser("eval", help="span-level micro precision/recall/F1")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--mode", choices=["strict", "lenient"], default="strict")
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"file error: {e}", file=sys.stderr)
        return 2
    except BackendUnavailableError as e:
        print(f"backend failure: {e}", file=sys.stderr)
        return 3
    except SpanAugError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
