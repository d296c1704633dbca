"""Command-line driver.

Subcommands cover the individual pipeline stages (generate-data, train,
evaluate, certify, sweep, attack, bench-at-eps) plus ``report``, which
runs the whole experiment from one config file. Exit codes: 0 success,
2 invalid input, 3 resource guard tripped, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .adversary import verify_bound_under_attack, write_attack_reports
from .analysis import frr_trr_sweep, make_k_grid, write_sweep_csv
from .benchmark import bench_at_epsilon
from .certificates import (dataset_fingerprint, domain_certificate_from_scores,
                           solve_k_from_scores)
from .chartask import CharTaskSpec, build_dataset, chartask_vocabulary, load_dataset, save_dataset
from .errors import InputError, ResourceLimitError
from .experiment import load_config, run_experiment
from .models import NGramModel, SeededTabularModel, apply_temperature
from .sampler import batch_evaluate, read_records_csv, write_records_csv
from .vocab import Vocabulary


def _add_seed(parser, required=True):
    parser.add_argument("--seed", type=int, required=required,
                        help="seed for any randomness (required)")


def cmd_generate_data(args) -> int:
    spec = CharTaskSpec(
        tasks=tuple(args.tasks), pool=args.pool, train=args.train, val=args.val,
        test=args.test, min_input_len=args.min_input_len,
        max_input_len=args.max_input_len, seed=args.seed)
    splits = build_dataset(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        items = getattr(splits, split)
        if items:
            path = out.with_name(f"{out.stem}_{split}{out.suffix or '.txt'}")
            save_dataset(path, items, spec, split)
            print(f"wrote {len(items):6d} items -> {path}")
    return 0


def cmd_train(args) -> int:
    items, _ = load_dataset(args.data)
    vocab = chartask_vocabulary(args.vocab_pool)
    corpus = [vocab.encode(item.flat) + (vocab.eos_id,) for item in items]
    if args.suffix_samples > 0:
        if args.seed is None:
            raise InputError("--suffix-samples requires --seed")
        from .experiment import _with_suffixes

        corpus = _with_suffixes(corpus, args.suffix_samples,
                                np.random.default_rng(args.seed))
    model = NGramModel.train(corpus, args.order, args.alpha, vocab)
    model.save(args.out)
    print(f"trained order-{args.order} model on {len(corpus)} sequences "
          f"({model.num_contexts} contexts, backend={model.backend}) -> {args.out}")
    return 0


def _load_eval_inputs(args):
    lm = apply_temperature(NGramModel.load(args.generalist), args.temperature_generalist)
    guide = apply_temperature(NGramModel.load(args.guide), args.temperature_guide)
    dataset = []
    for label, path in (("ID", args.target_data), ("OOD", args.ood_data)):
        items, _ = load_dataset(path)
        vocab = lm.vocab
        for i, item in enumerate(items):
            flat = vocab.encode(item.flat)
            response = flat[args.prompt_len:] + (vocab.eos_id,)
            if len(response) < 2:
                continue
            dataset.append((f"{label.lower()}-{i:05d}", flat[:args.prompt_len],
                            response, label))
    return lm, guide, dataset


def cmd_evaluate(args) -> int:
    lm, guide, dataset = _load_eval_inputs(args)
    result = batch_evaluate(lm, guide, dataset)
    write_records_csv(result.records, args.out)
    for item_id, reason in result.skipped:
        print(f"skipped {item_id}: {reason}", file=sys.stderr)
    print(f"wrote {len(result.records)} records -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    records = read_records_csv(args.records)
    grid = make_k_grid(records, args.points)
    sweep = frr_trr_sweep(records, grid, args.trials)
    write_sweep_csv(sweep, args.out)
    targets = Path(args.out).with_suffix(".targets.json")
    targets.write_text(json.dumps({repr(t): k for t, k in sweep.k_at_frr.items()},
                                  indent=2) + "\n")
    print(f"wrote sweep over {len(grid)} thresholds -> {args.out}")
    print(f"wrote per-target thresholds -> {targets}")
    return 0


def cmd_certify(args) -> int:
    records = [r for r in read_records_csv(args.records) if r.label == args.label]
    if not records:
        raise InputError(f"no {args.label} records in {args.records}")
    scores = [r.logg_bits for r in records]
    lens = [r.n_y for r in records]
    ids = [r.item_id for r in records]
    fingerprint = dataset_fingerprint([[r.n_y] for r in records])  # ids+lens proxy
    if args.epsilon is not None:
        k_bits = solve_k_from_scores(scores, lens, args.trials, args.epsilon,
                                     args.quantile)
    elif args.k_bits is not None:
        k_bits = args.k_bits
    else:
        raise InputError("pass either --k-bits or --epsilon")
    cert = domain_certificate_from_scores(scores, lens, k_bits, args.trials,
                                          ids=ids, fingerprint=fingerprint,
                                          robust_quantile=args.quantile)
    Path(args.out).write_text(json.dumps(cert.to_json_dict(), indent=2) + "\n")
    print(f"domain certificate: log2(eps) = {cert.log2_eps:.3f} "
          f"(witness {cert.witness_id}) -> {args.out}")
    return 0


def cmd_attack(args) -> int:
    vocab = Vocabulary.build([f"t{i}" for i in range(args.vocab_size - 2)])
    lm = SeededTabularModel(vocab, args.seed, args.max_response_len)
    guide = SeededTabularModel(vocab, args.seed + 1, args.max_response_len)
    targets = []
    rng = np.random.default_rng(args.seed + 2)
    non_special = [i for i in range(len(vocab)) if i != vocab.bos_id]
    for _ in range(args.targets):
        length = int(rng.integers(1, args.max_response_len))
        body = [int(non_special[i]) for i in rng.integers(0, len(non_special), length - 1)]
        targets.append(tuple(body) + (vocab.eos_id,))
    reports = verify_bound_under_attack(
        lm, guide, args.k_bits, args.trials, targets,
        prompt_len=args.prompt_len, max_len=args.max_response_len,
        guard=args.guard)
    write_attack_reports(reports, args.out)
    violations = sum(r.violated for r in reports)
    print(f"attacked {len(reports)} targets over prompts up to length "
          f"{args.prompt_len}; violations: {violations} -> {args.out}")
    return 0 if violations == 0 else 1


def cmd_bench_at_eps(args) -> int:
    lm = apply_temperature(NGramModel.load(args.generalist), args.temperature_generalist)
    guide = apply_temperature(NGramModel.load(args.guide), args.temperature_guide)
    items, _ = load_dataset(args.target_data)
    ood_items, _ = load_dataset(args.ood_data)
    vocab = lm.vocab
    ood_responses = [vocab.encode(i.flat)[args.prompt_len:] + (vocab.eos_id,)
                     for i in ood_items]
    ood_responses = [y for y in ood_responses if len(y) >= 2]
    result = bench_at_epsilon(lm, guide, ood_responses, items, vocab,
                              args.epsilons, args.trials, args.prompt_len,
                              args.max_len)
    result.write_csv(args.out)
    for p in result.points:
        print(f"eps={p.epsilon:10.3e}  k={p.k_bits:8.3f}  raw={p.raw_accuracy:.3f}  "
              f"score={p.certified_score:.3f}  abstain={p.abstention_rate:.3f}")
    return 0


def cmd_report(args) -> int:
    config = load_config(args.config)
    manifest = run_experiment(config, args.out)
    out = Path(args.out if args.out is not None else config.output_dir)
    print(f"experiment complete; manifest -> {out / 'manifest.json'}")
    for key, value in manifest["summary"].items():
        print(f"  {key}: {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domaincert",
        description="Certified rejection-sampling guardrails for sequence models")
    parser.add_argument("--version", action="version",
                        version=f"domaincert {__version__} (kernel: {kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate a synthetic task dataset")
    p.add_argument("--tasks", nargs="+", default=["S"], choices=list("SARE"))
    p.add_argument("--pool", default="int", choices=["int", "intchar"])
    p.add_argument("--train", type=int, default=10_000)
    p.add_argument("--val", type=int, default=64)
    p.add_argument("--test", type=int, default=256)
    p.add_argument("--min-input-len", type=int, default=6)
    p.add_argument("--max-input-len", type=int, default=16)
    p.add_argument("--out", required=True, help="base path; split suffixes are added")
    _add_seed(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a smoothed n-gram model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--vocab-pool", default="intchar", choices=["int", "intchar"])
    p.add_argument("--suffix-samples", type=int, default=0,
                   help="also train on this many random suffixes per sequence "
                        "(for guides that score responses marginally)")
    p.add_argument("--out", required=True)
    _add_seed(p, required=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score ground-truth pairs into a record CSV")
    p.add_argument("--generalist", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--target-data", required=True)
    p.add_argument("--ood-data", required=True)
    p.add_argument("--prompt-len", type=int, default=10)
    p.add_argument("--temperature-generalist", type=float, default=1.0)
    p.add_argument("--temperature-guide", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="FRR/TRR/J sweep over thresholds")
    p.add_argument("--records", required=True)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("certify", help="domain certificate from a record CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--label", default="OOD", choices=["ID", "OOD"])
    p.add_argument("--k-bits", type=float)
    p.add_argument("--epsilon", type=float, help="solve for the threshold instead")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--quantile", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("attack", help="exhaustive adversary on seeded toy models")
    p.add_argument("--vocab-size", type=int, default=5)
    p.add_argument("--max-response-len", type=int, default=5)
    p.add_argument("--prompt-len", type=int, default=3)
    p.add_argument("--k-bits", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--targets", type=int, default=50)
    p.add_argument("--guard", type=int, default=10_000_000,
                   help="abort when the search space exceeds this many nodes")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench-at-eps", help="certified benchmark scores")
    p.add_argument("--generalist", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--target-data", required=True)
    p.add_argument("--ood-data", required=True)
    p.add_argument("--epsilons", type=float, nargs="+",
                   default=[1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14,
                            1e-16, 1e-18])
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--prompt-len", type=int, default=10)
    p.add_argument("--max-len", type=int, default=160)
    p.add_argument("--temperature-generalist", type=float, default=1.0)
    p.add_argument("--temperature-guide", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_at_eps)

    p = sub.add_parser("report", help="run the full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
