"""Command-line driver: bank, simulate, train, generate, evaluate, report.

Exit codes: 0 ok, 1 usage, 2 runtime error, 3 partial results.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__, dsp
from .bank import FileSpec, build_bank, default_synth_specs, builtin_classes, load_bank, save_bank
from .captions import (CaptionError, freq_to_schedule, parse_frequency_caption,
                       parse_timestamp_caption, serialize_frequency_caption,
                       serialize_timestamp_caption)
from .config import PipelineConfig, load_config
from .diffusion import DenoiserParams, encode_records, render_schedules, train
from .diffusion.training import write_log
from .metrics import evaluate_system, read_report_csv
from .normalize import HttpChatClient, examples_from_manifest, llm_normalize
from .simulate import MANIFEST_VERSION, read_manifest, schedule_from_record, schedule_record, simulate_dataset, write_manifest

log = logging.getLogger("tempoaudio")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class PartialResults(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- shared plumbing -------------------------------------------------------

def _prepare_out(out: Path, cfg: PipelineConfig, command: str, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "INCOMPLETE").unlink(missing_ok=True)
    (out / "config.effective.json").write_text(cfg.canonical_json())
    run = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": seed,
        "versions": {"tempoaudio": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.jobs is not None:
        cfg = cfg.model_copy(update={"jobs": args.jobs})
    return cfg


# --- commands --------------------------------------------------------------

def cmd_bank(args, cfg: PipelineConfig, out: Path):
    classes = builtin_classes()
    if cfg.bank.sources:
        sources = [FileSpec(s.path, s.event) for s in cfg.bank.sources]
    else:
        sources = default_synth_specs(classes, cfg.bank.per_class, cfg.seed)
    bank = build_bank(sources, classes, cfg.bank_config())
    save_bank(bank, out)
    log.info("bank with %d segments written to %s", len(bank.segments), out)


def cmd_simulate(args, cfg: PipelineConfig, out: Path):
    bank = load_bank(args.bank or cfg.paths.bank)
    summary = simulate_dataset(bank, cfg.sim_config(), out, cfg.jobs)
    log.info("simulated %s (skipped %d)", summary["splits"], len(summary["skipped"]))


def cmd_train(args, cfg: PipelineConfig, out: Path):
    dataset = Path(args.dataset or cfg.paths.dataset)
    tcfg = cfg.train_config()
    if args.no_timestamp:
        tcfg.use_timestamp = False
    if args.epochs is not None:
        tcfg.epochs = args.epochs
    records = read_manifest(dataset / "train.jsonl")
    classes = builtin_classes()
    data = encode_records(records, dataset, classes)
    params, rows = train(data, tcfg, out / "epochs", [c.name for c in classes])
    params.save(out / "model.json")
    write_log(out / "train_log.csv", rows)
    log.info("trained %d steps; final loss %s", params.trained_steps, rows[-1]["loss"] if rows else "n/a")


def _normalize(text: str, cfg: PipelineConfig, use_llm: bool, names):
    client, examples = None, ()
    if use_llm:
        if not (cfg.llm.endpoint and cfg.llm.model):
            raise UsageError("--llm needs llm.endpoint and llm.model in the config")
        client = HttpChatClient(cfg.llm.endpoint, cfg.llm.model, cfg.llm.token_env)
        src = cfg.llm.examples_manifest or str(Path(cfg.paths.dataset) / "train.jsonl")
        examples = examples_from_manifest(src, cfg.llm.n_examples)
    return llm_normalize(text, client, examples, names, cfg.simulate.clip_length)


def cmd_generate(args, cfg: PipelineConfig, out: Path):
    params = DenoiserParams.load(args.checkpoint or Path(cfg.paths.checkpoint) / "model.json")
    names = params.meta.get("class_names") or [c.name for c in builtin_classes()]
    classes = builtin_classes()
    clip = cfg.simulate.clip_length
    stats = None

    def bank_stats():
        nonlocal stats
        if stats is None:
            stats = load_bank(args.bank or cfg.paths.bank).stats
        return stats

    jobs = []  # (record, schedule)
    if args.caption is not None:
        norm = _normalize(args.caption, cfg, args.llm, names)
        if norm.warning:
            log.warning(norm.warning)
        if norm.kind == "frequency":
            spec = parse_frequency_caption(norm.caption, names)
            sched = freq_to_schedule(spec, bank_stats(), clip, cfg.seed)
            freq_caption = norm.caption
        else:
            sched = parse_timestamp_caption(norm.caption, clip, names)
            freq_caption = serialize_frequency_caption(sched)
        log.info("intermediate timestamp caption: %s", serialize_timestamp_caption(sched))
        jobs.append(({"id": "gen_00000", "split": "generated", "input_caption": args.caption,
                      "kind": norm.kind, "normalized_by": norm.source,
                      "frequency_caption": freq_caption, "seed": cfg.seed}, sched))
    else:
        manifest = args.manifest
        if manifest is None:
            raise UsageError("generate needs --caption or --manifest")
        for i, rec in enumerate(read_manifest(manifest)):
            seed = dsp.derive_seed(cfg.seed, 7, i)
            if args.task == "frequency":
                spec = parse_frequency_caption(rec["frequency_caption"], names)
                sched = freq_to_schedule(spec, bank_stats(), clip, seed)
                log.info("%s: %s -> %s", rec["id"], rec["frequency_caption"], serialize_timestamp_caption(sched))
            else:
                sched = schedule_from_record(rec["schedule"])
            jobs.append(({"id": rec["id"], "split": rec.get("split", "generated"),
                          "input_caption": rec[f"{args.task}_caption"], "kind": args.task,
                          "normalized_by": "none", "frequency_caption": rec["frequency_caption"],
                          "seed": seed}, sched))

    audios = render_schedules([sched for _, sched in jobs], params, classes, cfg.generate.guidance_scale,
                              [rec["seed"] for rec, _ in jobs], cfg.simulate.sample_rate)
    records = []
    for (rec, sched), audio in zip(jobs, audios):
        dsp.write_wav(out / f"{rec['id']}.wav", audio, cfg.simulate.sample_rate)
        records.append({**rec, "manifest_version": MANIFEST_VERSION, "generated_wav": f"{rec['id']}.wav",
                        "timestamp_caption": serialize_timestamp_caption(sched),
                        "schedule": schedule_record(sched)})
    write_manifest(out / "generated.jsonl", records)


def cmd_evaluate(args, cfg: PipelineConfig, out: Path):
    manifest = args.manifest or str(Path(cfg.paths.generated) / "generated.jsonl")
    audio_dir = args.audio_dir or str(Path(manifest).parent)
    report = evaluate_system(manifest, audio_dir, builtin_classes(), cfg.detector_params(),
                             cfg.metrics.segment_length, args.system, args.task, cfg.jobs)
    report.write_csv(out / "report.csv")
    report.write_details(out / "details.json")
    for row in report.rows:
        log.info("%s", row)
    if report.has_nan():
        raise RuntimeError("a metric evaluated to NaN")
    if report.partial:
        raise PartialResults(f"missing generated files: {', '.join(report.missing)}")


TABLE_FIELDS = ["run", "system", "split", "f1_segment", "mos_control_ts", "frechet_ts", "mos_quality_ts",
                "l1_freq", "mos_control_freq", "frechet_freq", "mos_quality_freq"]


def cmd_report(args, cfg: PipelineConfig, out: Path):
    if not args.reports:
        raise UsageError("report needs at least one report CSV")
    table: dict[tuple, dict] = {}
    plot = []
    for path in args.reports:
        path = Path(path)
        run = path.parent.name if path.name == "report.csv" else path.stem
        for row in read_report_csv(path):
            key = (run, row["system"], row["split"])
            entry = table.setdefault(key, {f: "" for f in TABLE_FIELDS} | {"run": run, "system": row["system"],
                                                                            "split": row["split"]})
            if row["task"] == "frequency":
                entry["l1_freq"] = row["l1_freq"]
                entry["frechet_freq"] = row["frechet"]
            else:
                entry["f1_segment"] = row["f1_segment"]
                entry["frechet_ts"] = row["frechet"]
                entry.setdefault("l1_freq", "")
                if not entry["l1_freq"]:
                    entry["l1_freq"] = row["l1_freq"]
            for metric in ("f1_segment", "l1_freq", "frechet"):
                if row[metric]:
                    plot.append([run, row["system"], row["split"], row["task"], metric, row[metric]])
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, TABLE_FIELDS, lineterminator="\n")
        w.writeheader()
        for key in table:
            w.writerow(table[key])
    with open(out / "plot_data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "system", "split", "task", "metric", "value"])
        w.writerows(plot)


COMMANDS = {
    "bank": (cmd_bank, "bank", "build the one-occurrence segment bank"),
    "simulate": (cmd_simulate, "dataset", "simulate train/test manifests and WAVs"),
    "train": (cmd_train, "checkpoint", "train the timestamp-conditioned denoiser"),
    "generate": (cmd_generate, "generated", "generate audio from a caption or a manifest"),
    "evaluate": (cmd_evaluate, "reports", "score generated audio (segment F1, L1 freq, Frechet)"),
    "report": (cmd_report, "reports", "merge evaluation CSVs into a results table"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML or JSON pipeline config")
    common.add_argument("--seed", type=int, help="override the config's master seed")
    common.add_argument("--out", metavar="DIR", help="output directory (defaults to the config path)")
    common.add_argument("--llm", action="store_true", help="use the external chat-completion normalizer")
    common.add_argument("--jobs", type=int, help="worker threads for per-clip work")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="tempoaudio", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "simulate":
            p.add_argument("--bank", metavar="DIR", help="bank directory")
        elif name == "train":
            p.add_argument("--dataset", metavar="DIR", help="simulated dataset directory")
            p.add_argument("--epochs", type=int, help="override train.epochs")
            p.add_argument("--no-timestamp", action="store_true",
                           help="ablation: train without the timestamp matrix")
        elif name == "generate":
            p.add_argument("--checkpoint", metavar="PATH", help="model.json from train")
            p.add_argument("--bank", metavar="DIR", help="bank (durations for frequency captions)")
            src = p.add_mutually_exclusive_group()
            src.add_argument("--caption", metavar="TEXT", help="timestamp or frequency caption")
            src.add_argument("--manifest", metavar="PATH", help="generate one clip per manifest record")
            p.add_argument("--task", choices=["timestamp", "frequency"], default="timestamp",
                           help="which caption of each manifest record drives generation")
        elif name == "evaluate":
            p.add_argument("--manifest", metavar="PATH", help="reference manifest (JSONL)")
            p.add_argument("--audio-dir", metavar="DIR", help="directory with <id>.wav per record")
            p.add_argument("--system", default="system", help="row label in the report")
            p.add_argument("--task", choices=["timestamp", "frequency"], default="timestamp")
        elif name == "report":
            p.add_argument("reports", nargs="*", metavar="REPORT", help="report.csv files from evaluate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    func, default_out, _ = COMMANDS[args.command]
    try:
        cfg = _resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or getattr(cfg.paths, default_out))
    out.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(out / ".lock"), timeout=0):
            _prepare_out(out, cfg, args.command, cfg.seed)
            try:
                func(args, cfg, out)
            except PartialResults as exc:
                (out / "INCOMPLETE").write_text(f"{exc}\n")
                print(f"partial: {exc}", file=sys.stderr)
                return EXIT_PARTIAL
            except UsageError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_USAGE
            except (CaptionError, ValueError, RuntimeError, OSError, KeyError) as exc:
                (out / "INCOMPLETE").write_text(f"{type(exc).__name__}: {exc}\n")
                print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
    except Timeout:
        print(f"error: output directory {out} is locked by another run", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
