"""Command-line entry point: ``lowres-adapt <command> [options]``.

Exit status is 0 on success, 1 for invalid input or configuration, 2 for
I/O failures. Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import PRESETS, PipelineConfig, default_output_dir, preset_configs, resolve
from .corpus import Document, prepare_corpus
from .jsonio import JsonlError, dumps, iter_jsonl, write_json, write_jsonl
from .metrics import SentencePair, bootstrap_stderr
from .perplexity import record_from_ppl, record_from_totals, perplexity_record
from .report import render_report, scores_from_records
from .sft import InstructionPair, assemble_pool
from .tokenizer import bytes_per_codepoint, get_tokenizer
from .training import ConfigError, TrainingDiverged, toy_train

log = logging.getLogger("lowres_adapt")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # bad usage is a validation failure, not an I/O one
    def error(self, message):
        self.print_usage(sys.stderr)
        print(dumps({"error": "usage", "message": message}), file=sys.stderr)
        sys.exit(EXIT_INVALID)


# ---------------------------------------------------------------- helpers

def load_records(path, parse):
    """Parse every JSONL line with ``parse``; errors name the line number."""
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(parse(obj))
        except (ValueError, TypeError, KeyError) as exc:
            raise JsonlError(path, lineno, str(exc)) from None
    return out


def read_lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def output_dir(cfg: PipelineConfig, command: str) -> Path:
    out = Path(cfg.output_dir) if cfg.output_dir else default_output_dir(command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_record(out: Path, command: str, cfg: PipelineConfig) -> None:
    record = {"command": command, "config": cfg.record(), "version": __version__}
    if cfg.preset:
        record["preset_configs"] = preset_configs(cfg.preset)
    write_json(out / "run.json", record)


def require(value, flag: str):
    if value is None:
        raise UsageError(f"missing required input: {flag}")
    return value


# ---------------------------------------------------------------- commands

def cmd_prep_corpus(cfg: PipelineConfig) -> int:
    docs = load_records(require(cfg.input, "--input"), Document.from_json)
    tokenizer = get_tokenizer(cfg.tokenizer)
    result = prepare_corpus(docs, tokenizer, window=cfg.window, overlap=cfg.overlap,
                            seed=cfg.seed, dedup=cfg.dedup,
                            min_drop_confidence=cfg.min_drop_confidence, workers=cfg.workers)
    out = output_dir(cfg, "prep-corpus")
    write_jsonl(out / "chunks.jsonl", (c.to_json() for c in result.chunks))
    write_jsonl(out / "drops.jsonl", (d.to_json() for d in result.drops))
    write_json(out / "manifest.json", result.manifest.to_json())
    write_run_record(out, "prep-corpus", cfg)
    log.info("kept %d documents, %d chunks", len(result.documents), len(result.chunks))
    return EXIT_OK


def cmd_assemble_sft(cfg: PipelineConfig) -> int:
    pairs = load_records(require(cfg.input, "--input"), InstructionPair.from_json)
    tokenizer = get_tokenizer(cfg.tokenizer)
    pool = assemble_pool(pairs, tokenizer, upsample=cfg.upsample, prompt_targets=cfg.prompt_targets,
                         no_prompt_share=cfg.no_prompt_share, seed=cfg.seed, dedup=cfg.dedup,
                         workers=cfg.workers)
    out = output_dir(cfg, "assemble-sft")
    write_jsonl(out / "pairs.jsonl", (p.to_json() for p in pool.pairs))
    write_jsonl(out / "examples.jsonl", (e.to_json() for e in pool.examples))
    write_jsonl(out / "drops.jsonl", pool.drops)
    write_json(out / "manifest.json", pool.manifest.to_json())
    write_run_record(out, "assemble-sft", cfg)
    log.info("final pool: %d pairs", len(pool.pairs))
    return EXIT_OK


def _eval_pairs(cfg: PipelineConfig) -> list[SentencePair]:
    if cfg.input:
        def parse(obj):
            return SentencePair(obj["hypothesis"], obj["reference"], obj.get("direction", cfg.direction))
        return load_records(cfg.input, parse)
    hyp_path, ref_path = require(cfg.hyp, "--hyp"), require(cfg.ref, "--ref")
    hyps, refs = read_lines(hyp_path), read_lines(ref_path)
    if len(hyps) != len(refs):
        raise UsageError(f"line counts differ: {hyp_path} has {len(hyps)}, {ref_path} has {len(refs)}")
    pairs = []
    for lineno, (h, r) in enumerate(zip(hyps, refs), start=1):
        try:
            pairs.append(SentencePair(h, r, cfg.direction))
        except ValueError as exc:
            raise JsonlError(ref_path, lineno, str(exc)) from None
    return pairs


def cmd_eval_translate(cfg: PipelineConfig) -> int:
    pairs = _eval_pairs(cfg)
    if not pairs:
        raise UsageError("no sentence pairs to score")
    by_direction: dict[str, list[SentencePair]] = {}
    for p in pairs:
        by_direction.setdefault(p.direction, []).append(p)
    records = []
    for direction, group in by_direction.items():
        for metric in ("bleu", "chrf"):
            score = bootstrap_stderr(group, metric, cfg.n_resamples, cfg.seed, cfg.workers)
            records.append({"direction": direction, "model": cfg.model, **score.to_json()})
    out = output_dir(cfg, "eval-translate")
    write_json(out / "report.json", records)
    scores, models = scores_from_records(records)
    (out / "table.txt").write_text(render_report(scores, models, cfg.metric, cfg.stderr, cfg.format),
                                   encoding="utf-8")
    write_run_record(out, "eval-translate", cfg)
    return EXIT_OK


def _ppl_record(obj: dict, default_k: float | None) -> dict:
    if "k" in obj:
        k = float(obj["k"])
    elif "text" in obj:
        k = bytes_per_codepoint(obj["text"]).k
    else:
        k = 1.0 if default_k is None else default_k
    if "ppl_token" in obj:
        rec = record_from_ppl(float(obj["ppl_token"]), k)
    elif "token_count" in obj and "total_nll_nats" in obj:
        rec = record_from_totals(int(obj["token_count"]), float(obj["total_nll_nats"]), k)
    elif "mean_nll" in obj:
        rec = perplexity_record(float(obj["mean_nll"]), k)
    else:
        raise ValueError("record needs ppl_token, mean_nll, or token_count with total_nll_nats")
    out = {key: obj[key] for key in ("id", "model", "split") if key in obj}
    out.update(rec.to_json())
    return out


def cmd_ppl_normalize(cfg: PipelineConfig) -> int:
    records = load_records(require(cfg.input, "--input"), lambda obj: _ppl_record(obj, cfg.k))
    out = output_dir(cfg, "ppl-normalize")
    write_jsonl(out / "ppl.jsonl", records)
    write_run_record(out, "ppl-normalize", cfg)
    return EXIT_OK


def cmd_adapter_demo(cfg: PipelineConfig) -> int:
    out = output_dir(cfg, "adapter-demo")
    runs = {}
    for method in cfg.methods:
        ranks = [0] if method == "full" else cfg.ranks
        for r in ranks:
            try:
                tel = toy_train(method, r, cfg.alpha, cfg.steps, cfg.seed,
                                lr=cfg.demo_lr, dropout=cfg.dropout)
            except TrainingDiverged as exc:
                write_jsonl(out / f"telemetry_{method}_r{r}.jsonl", exc.telemetry.records())
                raise
            runs[(method, r)] = tel
            name = "telemetry_full.jsonl" if method == "full" else f"telemetry_{method}_r{r}.jsonl"
            write_jsonl(out / name, tel.records())

    cells = [{"method": m, "rank": r, "final_loss": t.loss[-1], "eval_loss": t.eval_loss,
              "step0_b_grad_norm": t.b_grad_norm[0]} for (m, r), t in runs.items()]
    summary = {"cells": cells}
    if "lora" in cfg.methods and "rslora" in cfg.methods:
        checks = []
        for r in cfg.ranks:
            measured = runs[("lora", r)].b_grad_norm[0] / runs[("rslora", r)].b_grad_norm[0]
            expected = 1.0 / math.sqrt(r)
            rel = abs(measured - expected) / expected
            checks.append({"rank": r, "ratio": measured, "expected": expected,
                           "relative_error": rel, "pass": rel <= 1e-9})
        summary["step0_grad_ratio"] = checks
    write_json(out / "summary.json", summary)
    write_run_record(out, "adapter-demo", cfg)
    return EXIT_OK


def _load_score_records(path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return [obj for _, obj in iter_jsonl(path)]
    return data if isinstance(data, list) else [data]


def cmd_report(cfg: PipelineConfig) -> int:
    records = _load_score_records(require(cfg.input, "--input"))
    try:
        scores, models = scores_from_records(records)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad score record: {exc}") from None
    if cfg.models:
        models = cfg.models
    table = render_report(scores, models, cfg.metric, cfg.stderr, cfg.format)
    out = output_dir(cfg, "report")
    ext = {"text": "txt", "tsv": "tsv", "csv": "csv"}[cfg.format]
    (out / f"table.{ext}").write_text(table, encoding="utf-8")
    write_run_record(out, "report", cfg)
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "prep-corpus": cmd_prep_corpus,
    "assemble-sft": cmd_assemble_sft,
    "eval-translate": cmd_eval_translate,
    "ppl-normalize": cmd_ppl_normalize,
    "adapter-demo": cmd_adapter_demo,
    "report": cmd_report,
}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--preset", choices=PRESETS)
    common.add_argument("--seed", type=int, help="default 42")
    common.add_argument("--workers", type=int)
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--input", help="input file")
    common.add_argument("--tokenizer", help="'byte-level' or a vocab JSON path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lowres-adapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep-corpus", parents=[common], help="normalize, filter, dedup and chunk documents")
    p.add_argument("--window", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--min-drop-confidence", type=float)

    p = sub.add_parser("assemble-sft", parents=[common], help="dedup, upsample and serialize instruction pairs")
    p.add_argument("--upsample", help="bucket=factor list, e.g. synthesized=5")
    p.add_argument("--prompt-targets", help="language=count list")
    p.add_argument("--no-prompt-share", type=float)
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("eval-translate", parents=[common], help="BLEU and chrF with bootstrap stderr")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--direction")
    p.add_argument("--model")
    p.add_argument("--n-resamples", type=int)
    _report_flags(p)

    p = sub.add_parser("ppl-normalize", parents=[common], help="per-token to information-level perplexity")
    p.add_argument("--k", type=float, help="bytes per codepoint when a record gives none (default 1)")

    p = sub.add_parser("adapter-demo", parents=[common], help="toy training across methods and ranks")
    p.add_argument("--methods", help="comma list, e.g. lora,rslora")
    p.add_argument("--ranks", help="comma list, e.g. 4,16,64")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", dest="demo_lr", type=float)
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("report", parents=[common], help="render score records as a table")
    p.add_argument("--models", help="comma list fixing column order")
    _report_flags(p)
    return parser


def _report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--metric", choices=("bleu", "chrf"))
    p.add_argument("--stderr", action="store_true", default=None)
    p.add_argument("--format", choices=("text", "tsv", "csv"))


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve(args.config, flags)
        return COMMANDS[args.command](cfg)
    except JsonlError as exc:
        return _fail(EXIT_INVALID, "parse", str(exc), path=exc.path, line=exc.lineno)
    except ConfigError as exc:
        return _fail(EXIT_INVALID, "config", str(exc), errors=exc.errors)
    except TrainingDiverged as exc:
        return _fail(EXIT_INVALID, "diverged", str(exc), step=exc.step)
    except ValueError as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
