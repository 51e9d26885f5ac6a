"""Command-line interface: sample, calibrate, evaluate, synth, and report.

Exit codes: 0 success, 1 usage, 2 validation, 3 transport.  Every command
writes a ``manifest.json`` into its output directory recording the command,
its configuration, the seed, input file hashes, the tool version, and
timestamps; no command mutates its inputs.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .conformal import CalibrationMethod, calibrate, nonconformity
from .data import (
    DatasetError,
    build_frequency_tables,
    load_dataset,
    load_logit_probs,
    load_sample_records,
    write_dataset,
    write_logit_probs,
    write_sample_records,
)
from .metrics import split_indices, sweep, trial_streams, write_report_csv, write_report_jsonl
from .sampler import (
    EndpointRejectionError,
    SampleCache,
    SamplerConfig,
    TransportError,
    sample_dataset,
)
from .synth import OracleConfig, generate

log = logging.getLogger("freqcp")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3

DEFAULT_ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; this CLI reserves 2 for validation."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, started: str) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hashes": {str(p): _sha256(Path(p)) for p in inputs},
        "tool_version": __version__,
        "started_at": started,
        "finished_at": _utcnow(),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_alphas(values) -> list[float]:
    if not values:
        return list(DEFAULT_ALPHA_GRID)
    alphas: list[float] = []
    for chunk in values:
        for part in str(chunk).split(","):
            part = part.strip()
            if part:
                alphas.append(float(part))
    return alphas


def _load_eval_inputs(args):
    """Items plus score tables for evaluate/calibrate commands.

    Frequency tables come from the sample cache (items without a record are
    dropped, with a count reported); a probability file yields logit tables,
    either as the primary tables or as the extra AUROC comparison.
    """
    items = load_dataset(args.dataset)
    if not args.cache and not args.probs:
        raise DatasetError("need --cache and/or --probs")

    logit_all = None
    if args.cache:
        records = load_sample_records(args.cache, items)
        covered = [item for item in items if item.id in records]
        dropped = len(items) - len(covered)
        if dropped:
            log.warning("dropping %d item(s) with no sample record", dropped)
        if not covered:
            raise DatasetError(f"{args.cache}: no sample records for this dataset")
        ms = sorted({records[item.id].m for item in covered})
        if len(ms) > 1:
            raise DatasetError(
                f"mixed sample counts across items in frequency mode: m={ms}"
            )
        items = covered
        tables = build_frequency_tables(items, records)
        if args.probs:
            logit_all = load_logit_probs(args.probs, items)
    else:
        tables = None

    if args.probs and tables is None:
        logit_map = load_logit_probs(args.probs, items)
        tables = [logit_map[item.id] for item in items]
        extra = None
    else:
        extra = [logit_all[item.id] for item in items] if logit_all else None
    return items, tables, extra


def _cmd_synth(args) -> int:
    started = _utcnow()
    cfg = OracleConfig(
        num_items=args.num_items,
        num_options=args.num_options,
        m=args.m,
        concentration=args.concentration,
        noise=args.noise,
        seed=args.seed,
    )
    batch = generate(cfg)
    out = _out_dir(args)
    write_dataset(batch.items, out / "dataset.jsonl")
    write_sample_records(batch.records, out / "samples.jsonl")
    if args.emit_probs:
        probs = {item.id: row for item, row in zip(batch.items, batch.answer_probs)}
        write_logit_probs(probs, out / "probs.jsonl")
    config = {
        "num_items": args.num_items,
        "num_options": args.num_options,
        "m": args.m,
        "concentration": args.concentration,
        "noise": args.noise,
        "emit_probs": bool(args.emit_probs),
    }
    _write_manifest(out, "synth", config, args.seed, [], started)
    print(f"wrote {len(batch.items)} synthetic items to {out}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    started = _utcnow()
    items = load_dataset(args.dataset)
    cfg = SamplerConfig(
        endpoint_url=args.endpoint,
        model_name=args.model,
        m=args.m,
        temperature=args.temperature,
        max_tokens=args.max_tokens,
        concurrency=args.concurrency,
        timeout=args.timeout,
        retries=args.retries,
    )
    out = _out_dir(args)
    cache_path = Path(args.cache) if args.cache else out / "cache.jsonl"
    cache = SampleCache(cache_path)
    result = sample_dataset(cfg, items, cache)
    config = {
        "endpoint": cfg.endpoint_url,
        "model": cfg.model_name,
        "m": cfg.m,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "concurrency": cfg.concurrency,
        "timeout": cfg.timeout,
        "retries": cfg.retries,
        "cache": str(cache_path),
        "sampled": len(result.records),
        "failed": sorted(result.failed),
    }
    _write_manifest(out, "sample", config, None, [args.dataset], started)
    print(f"sampled {len(result.records)}/{len(items)} items into {cache_path}")
    if result.failed:
        log.error("%d item(s) failed to sample", len(result.failed))
        if args.strict:
            return EXIT_TRANSPORT
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    started = _utcnow()
    items, tables, _ = _load_eval_inputs(args)
    rng = trial_streams(args.seed, 1)[0]
    cal_idx, _test_idx = split_indices(len(items), args.split_ratio, rng)
    cal_scores = [nonconformity(tables[i], items[i].truth) for i in cal_idx]
    result = calibrate(cal_scores, args.alpha, args.method)
    out = _out_dir(args)
    with open(out / "calibration.json", "w") as fh:
        json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    inputs = [p for p in (args.dataset, args.cache, args.probs) if p]
    config = {
        "alpha": args.alpha,
        "method": args.method,
        "split_ratio": args.split_ratio,
    }
    _write_manifest(out, "calibrate", config, args.seed, inputs, started)
    print(json.dumps(result.to_json_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    started = _utcnow()
    items, tables, extra = _load_eval_inputs(args)
    alphas = _parse_alphas(args.alpha)
    label = args.label or Path(args.dataset).stem
    report = sweep(
        items,
        tables,
        alphas,
        args.method,
        split_ratio=args.split_ratio,
        trials=args.trials,
        seed=args.seed,
        logit_tables=extra,
        label=label,
    )
    out = _out_dir(args)
    write_report_csv(report, out / "report.csv")
    write_report_jsonl(report, out / "report.jsonl")
    inputs = [p for p in (args.dataset, args.cache, args.probs) if p]
    config = {
        "alphas": alphas,
        "method": args.method,
        "split_ratio": args.split_ratio,
        "trials": args.trials,
        "label": label,
    }
    _write_manifest(out, "evaluate", config, args.seed, inputs, started)
    for row in report.rows:
        print(
            f"alpha={row.alpha:g} emr={row.emr:.4f} apss={row.apss:.4f} "
            f"coverage={row.coverage:.4f} empty={row.empty_set_fraction:.4f}"
        )
    if report.auroc_frequency is not None:
        print(f"auroc_frequency={report.auroc_frequency:.4f}")
    if report.auroc_logit is not None:
        print(f"auroc_logit={report.auroc_logit:.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from . import plots  # deferred: pulls in matplotlib
    from . import report as tables
    from .metrics import read_report_jsonl

    started = _utcnow()
    reports = [read_report_jsonl(path) for path in args.inputs]
    out = _out_dir(args)
    tables.write_table(tables.apss_table(reports), out / "apss_table.csv")
    tables.write_table(
        tables.emr_split_table(reports, alpha=args.table_alpha),
        out / "emr_split_table.csv",
    )
    tables.write_table(tables.auroc_table(reports), out / "auroc_table.csv")
    for index, report in enumerate(reports):
        name = f"curves_{index:02d}_{tables.slug(report.label)}.csv"
        tables.write_table(tables.curve_rows(report), out / name)
    figures = [] if args.no_figures else plots.render_figures(reports, out / "figures")
    config = {"inputs": [str(p) for p in args.inputs], "table_alpha": args.table_alpha}
    _write_manifest(out, "report", config, None, args.inputs, started)
    print(f"wrote tables for {len(reports)} report(s) to {out}")
    for path in figures:
        print(f"wrote figure {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="freqcp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"freqcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("synth", help="generate a synthetic dataset and sample cache")
    p.add_argument("--num-items", type=int, default=1000)
    p.add_argument("--num-options", type=int, default=4)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-probs", action="store_true",
                   help="also write the true per-item probabilities as a logit-mode file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sample", help="sample M responses per item from an endpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--endpoint", required=True, help="chat-completions URL")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-tokens", type=int, default=1)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--cache", help="cache path (default: OUT/cache.jsonl)")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any item failed to sample")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    def add_eval_inputs(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--cache", help="sample cache JSONL (frequency mode)")
        p.add_argument("--probs", help="probability JSONL (logit mode)")
        p.add_argument("--method", choices=[m.value for m in CalibrationMethod],
                       default="quantile")
        p.add_argument("--split-ratio", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="calibrate once on a seeded split")
    add_eval_inputs(p)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("evaluate", help="resplit sweep over an alpha grid")
    add_eval_inputs(p)
    p.add_argument("--alpha", action="append",
                   help="risk level(s), repeatable or comma-separated "
                        "(default: 0.1..0.9)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--label", help="report label (default: dataset stem)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="summary tables and figures from reports")
    p.add_argument("--inputs", nargs="+", required=True, help="report.jsonl files")
    p.add_argument("--table-alpha", type=float, default=0.1,
                   help="alpha for the split-ratio table")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (TransportError, EndpointRejectionError) as exc:
        log.error("%s", exc)
        return EXIT_TRANSPORT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
