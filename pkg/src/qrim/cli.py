"""Command line entry point: ``qrim <subcommand> [options]``.

Subcommands::

    gen-data    generate the train/val/test QRDS files of a config
    train       train and score the config's model grid (repeats per model)
    sweep-bits  train one architecture at several equal weight/activation bit-widths
    infer       score a saved checkpoint on a QRDS file
    budget      memory / operation report for model specs (CSV or Markdown)
    pareto      F1-vs-memory Pareto front of a results CSV

Model specs on the command line are ``NAME[:Q]`` where ``Q`` is ``R`` (real,
default), ``B`` (binary weights), ``S`` (sign activations), a bit-width such
as ``8`` (weights and activations alike) or ``wXaY``.

The exit code of ``train`` and ``sweep-bits`` is the number of failed runs.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
from dataclasses import replace

from .errors import ConfigurationError, QrimError
from .qat import ModelConfig, QuantSpec

log = logging.getLogger("qrim")

_WA_RE = re.compile(r"^w(\d+)a(\d+)$", re.IGNORECASE)


def parse_model_spec(spec: str) -> ModelConfig:
    name, _, q = spec.partition(":")
    q = q.strip() or "R"
    if q.upper() == "R":
        quant = QuantSpec()
    elif q.upper() == "B":
        quant = QuantSpec(weight_bits=1)
    elif q.upper() == "S":
        quant = QuantSpec(act_bits=1)
    elif q.isdigit():
        quant = QuantSpec.uniform(int(q))
    elif _WA_RE.match(q):
        w, a = _WA_RE.match(q).groups()
        quant = QuantSpec(weight_bits=int(w), act_bits=int(a))
    else:
        raise ConfigurationError(f"bad quantization {q!r} in model spec {spec!r}")
    return ModelConfig.parse(name, quant)


def _load(args):
    from .experiment.config import load_config

    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed, dataset=replace(config.dataset, seed=args.seed))
    if getattr(args, "f64", False):
        config = replace(config, training=replace(config.training, f64=True))
    if getattr(args, "repeats", None) is not None:
        config = replace(config, training=replace(config.training, repeats=args.repeats))
    if getattr(args, "models", None):
        config = replace(config, models=tuple(parse_model_spec(s) for s in args.models))
    return config


def _print_summary(result) -> None:
    base = result.baselines
    print(f"baseline clean F1 {base['clean'].f1:.4f}, interfered F1 {base['interfered'].f1:.4f}")
    for m, (mean, std) in result.summary().items():
        print(f"{m.tag:24s} F1 {mean:.4f} +- {std:.4f}")
    if result.out_dir:
        print(f"results written to {result.out_dir}")


def cmd_gen_data(args) -> int:
    from .experiment.dataset import generate_dataset

    config = _load(args)
    out = args.out or os.path.join(config.output_dir, "data")
    splits = generate_dataset(config.dataset, out)
    for name, ds in splits.items():
        print(f"{name}: {len(ds)} snapshots {ds.shape[0]}x{ds.shape[1]} -> {os.path.join(out, name + '.qrds')}")
    return 0


def _run(config, args) -> int:
    from .experiment.runner import run_experiment

    result = run_experiment(config, out_dir=args.out or config.output_dir, data_dir=args.data,
                            threads=args.threads, log=log.info)
    _print_summary(result)
    return result.failures


def cmd_train(args) -> int:
    return _run(_load(args), args)


def cmd_sweep_bits(args) -> int:
    from .experiment.runner import sweep_bits_config

    config = sweep_bits_config(_load(args), args.model, tuple(args.bits))
    return _run(config, args)


def cmd_infer(args) -> int:
    from .experiment.runner import infer

    config = _load(args)
    pooled, per, text = infer(args.checkpoint, args.data, args.out, config.cfar, config.match,
                              denoised_out=args.denoised)
    if args.out is None:
        sys.stdout.write(text)
    print(f"{len(per)} snapshots: precision {pooled.precision:.4f} recall {pooled.recall:.4f} F1 {pooled.f1:.4f}",
          file=sys.stderr)
    return 0


DEFAULT_BUDGET = ("L3-C16-B:1", "L3-C16-B:2", "L3-C16-B:4", "L3-C16-B:6", "L3-C16-B:8", "L3-C16-B:32")


def cmd_budget(args) -> int:
    from .resources import report, reports_csv, reports_markdown

    reports = [report(parse_model_spec(s), args.N, args.M, honest=args.honest)
               for s in (args.models or DEFAULT_BUDGET)]
    text = reports_markdown(reports) if args.format == "md" else reports_csv(reports)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_pareto(args) -> int:
    """Reads ``model, quant, memory_kb, f1_mean`` columns (``f1_memory.csv``)."""
    from .resources import pareto_scan

    try:
        with open(args.results, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.results}: {exc}") from exc
    keys, scores, memory = [], {}, {}
    for r in rows:
        if not r.get("f1_mean"):
            continue
        k = f"{r['model']}/{r['quant']}"
        keys.append(k)
        scores[k] = float(r["f1_mean"])
        memory[k] = float(r["memory_kb"])
    front = pareto_scan(keys, scores, memory)
    print("model,memory_kb,f1_mean")
    for k in front:
        print(f"{k},{memory[k]!r},{scores[k]!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrim", description="Quantized radar interference mitigation experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="TOML experiment config (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the experiment and dataset seed")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--threads", type=int, default=1, help="parallel training runs")
        sp.add_argument("--f64", action="store_true", help="train in float64 (test-precision mode)")

    sp = sub.add_parser("gen-data", help="generate dataset files")
    common(sp, "output directory (default <output_dir>/data)")
    sp.set_defaults(func=cmd_gen_data)

    for name, func, text in (("train", cmd_train, "train and score the model grid"),
                             ("sweep-bits", cmd_sweep_bits, "bit-width sweep of one architecture")):
        sp = sub.add_parser(name, help=text)
        common(sp, "output directory (default output_dir of the config)")
        sp.add_argument("--data", help="directory with train/val/test .qrds files (generated if missing)")
        sp.add_argument("--repeats", type=int, help="override the number of repeats")
        if name == "train":
            sp.add_argument("--models", nargs="+", metavar="SPEC", help="override the model grid")
        else:
            sp.add_argument("--model", default="L3-C16-B")
            sp.add_argument("--bits", type=int, nargs="+", default=[1, 2, 4, 6, 8, 32])
        sp.set_defaults(func=func)

    sp = sub.add_parser("infer", help="score a checkpoint on a dataset file")
    common(sp, "per-snapshot CSV (stdout when omitted)")
    sp.add_argument("checkpoint")
    sp.add_argument("data", help=".qrds file")
    sp.add_argument("--denoised", help="also write the denoised maps as a .qrds file")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("budget", help="memory and operation counts")
    sp.add_argument("models", nargs="*", metavar="SPEC")
    sp.add_argument("--N", type=int, default=96)
    sp.add_argument("--M", type=int, default=96)
    sp.add_argument("--format", choices=("csv", "md"), default="csv")
    sp.add_argument("--honest", action="store_true", help="also count stored dynamic ranges")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("pareto", help="Pareto front of a f1_memory.csv file")
    sp.add_argument("results")
    sp.set_defaults(func=cmd_pareto)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return int(args.func(args))
    except QrimError as exc:
        print(f"qrim {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
