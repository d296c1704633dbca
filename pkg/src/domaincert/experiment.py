"""Reproducible end-to-end experiment runs.

One TOML config drives the whole pipeline: generate the target and
out-of-domain datasets, train the n-gram models, score ground-truth
pairs, sweep thresholds, certify, aggregate distributions, benchmark
under certificate budgets and measure generation quality. Every output
is a deterministic function of (config, seed); the manifest records the
config hash and a checksum for every emitted file.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import ecdf_and_histograms, frr_trr_sweep, make_k_grid, write_sweep_csv
from .benchmark import bench_at_epsilon, generation_accuracy, write_generation_accuracy
from .certificates import (atomic_from_score, dataset_fingerprint,
                           domain_certificate_from_scores, solve_k_from_scores)
from .chartask import (TASK_TOKENS, CharTaskItem, CharTaskSpec, build_dataset,
                       chartask_vocabulary, generate_item, save_dataset)
from .errors import DomainCertError, InputError
from .models import NGramModel, apply_temperature
from .sampler import batch_evaluate, write_records_csv
from .vocab import Vocabulary

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def derive_seed(base: int, tag: str) -> int:
    """Stable per-stage seed derived from the experiment seed."""
    digest = hashlib.sha256(f"{base}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    tasks: tuple[str, ...] = ("S",)
    pool: str = "int"
    train: int = 10_000
    val: int = 64
    test: int = 256
    min_input_len: int = 6
    max_input_len: int = 16


DEFAULT_OOD_COMBOS = tuple(
    (task, pool) for pool in ("int", "intchar") for task in TASK_TOKENS
    if (task, pool) != ("S", "int")
)


@dataclass(frozen=True)
class OodConfig:
    combos: tuple[tuple[str, str], ...] = DEFAULT_OOD_COMBOS
    test_per_combo: int = 146
    min_input_len: int = 6
    max_input_len: int = 16


@dataclass(frozen=True)
class ModelConfig:
    order: int = 3
    alpha: float = 0.1
    temperature: float = 1.0
    # guides score responses marginally, so they also train on suffixes
    # (this many random cut points per sequence; 0 = full sequences only)
    suffix_samples: int = 0


@dataclass(frozen=True)
class ValidSettings:
    trials: int = 1
    max_len: int = 160
    k_grid_points: int = 256
    target_frr: float = 0.10


@dataclass(frozen=True)
class EvaluateConfig:
    prompt_len: int = 10


@dataclass(frozen=True)
class CertifyConfig:
    epsilons: tuple[float, ...] = (1.0, 1e-3, 1e-6, 1e-9, 1e-12)
    robust_quantile: float = 1.0


@dataclass(frozen=True)
class BenchConfig:
    """Certified-benchmark settings (runs on the generation profile)."""

    enabled: bool = True
    prompt_len: int = 5
    epsilons: tuple[float, ...] = (
        1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14, 1e-16, 1e-18)


@dataclass(frozen=True)
class GenerationConfig:
    """Small-pool profile where a long-context n-gram can complete items.

    The generalist memorizes with a long context window; the guide gets
    a much shorter one, standing in for the capability gap between a
    large generalist and a small domain model. Evaluation items are
    drawn from the training distribution (memorization substitutes for
    the generalization the synthetic task would otherwise require).
    """

    enabled: bool = True
    n_prompts: int = 1000
    prompt_lengths: tuple[int, ...] = (1, 5, 10)
    generalist_order: int = 12
    guide_order: int = 3
    alpha: float = 1e-4
    temperature_generalist: float = 0.2
    temperature_guide: float = 0.7
    train_per_task: int = 2000
    guide_train: int = 600
    guide_alpha: float = 0.05
    guide_suffix_samples: int = 8
    int_pool_size: int = 10
    char_pool_size: int = 10
    max_input_len: int = 2
    ood_per_combo: int = 32
    n_bench_items: int = 256
    max_len: int = 24


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str = "runs/experiment"
    target: DataConfig = field(default_factory=DataConfig)
    ood: OodConfig = field(default_factory=OodConfig)
    generalist: ModelConfig = field(default_factory=ModelConfig)
    guide: ModelConfig = field(default_factory=lambda: ModelConfig(suffix_samples=3))
    generalist_train_per_task: int = 10_000
    valid: ValidSettings = field(default_factory=ValidSettings)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    def canonical(self) -> dict:
        return asdict(self)

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()


def _build(cls, section: dict, path: str):
    known = {f: section[f] for f in cls.__dataclass_fields__ if f in section}
    unknown = set(section) - set(cls.__dataclass_fields__)
    if unknown:
        raise InputError(f"unknown config keys in [{path}]: {sorted(unknown)}")
    for key, value in known.items():
        if isinstance(value, list):
            known[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return cls(**known)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if "seed" not in raw:
        raise InputError("config must set a seed")
    sections = {
        "target": DataConfig, "ood": OodConfig, "generalist": ModelConfig,
        "guide": ModelConfig, "valid": ValidSettings, "evaluate": EvaluateConfig,
        "certify": CertifyConfig, "bench": BenchConfig, "generation": GenerationConfig,
    }
    kwargs: dict = {"seed": int(raw["seed"])}
    for key in ("output_dir", "generalist_train_per_task"):
        if key in raw:
            kwargs[key] = raw[key]
    for name, cls in sections.items():
        if name in raw:
            kwargs[name] = _build(cls, raw[name], name)
    unknown = set(raw) - set(sections) - {"seed", "output_dir", "generalist_train_per_task"}
    if unknown:
        raise InputError(f"unknown top-level config keys: {sorted(unknown)}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# pipeline


@contextmanager
def _stage(name: str):
    try:
        yield
    except DomainCertError as exc:
        raise type(exc)(f"[stage:{name}] {exc}") from exc
    except Exception as exc:
        raise DomainCertError(f"[stage:{name}] {exc}") from exc


def _corpus(items, vocab: Vocabulary) -> list[tuple[int, ...]]:
    return [vocab.encode(item.flat) + (vocab.eos_id,) for item in items]


def _with_suffixes(corpus, samples: int, rng) -> list[tuple[int, ...]]:
    """Full sequences plus random suffixes (marginal-scoring training)."""
    if samples <= 0:
        return list(corpus)
    out = list(corpus)
    for seq in corpus:
        for cut in rng.integers(1, len(seq), size=samples):
            out.append(seq[int(cut):])
    return out


def _eval_dataset(items, vocab, prompt_len, label, prefix):
    out = []
    for i, item in enumerate(items):
        flat = vocab.encode(item.flat)
        y = flat[prompt_len:] + (vocab.eos_id,)
        if len(y) < 2:  # prompt swallowed the whole item
            continue
        out.append((f"{prefix}-{i:05d}", flat[:prompt_len], y, label))
    return out


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Execute every stage; returns the manifest dictionary."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    for sub in ("data", "models", "eval", "sweep", "certs", "analysis",
                "bench", "generation"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    summary: dict = {}

    with _stage("data"):
        target_spec = CharTaskSpec(
            tasks=config.target.tasks, pool=config.target.pool,
            train=config.target.train, val=config.target.val, test=config.target.test,
            min_input_len=config.target.min_input_len,
            max_input_len=config.target.max_input_len,
            seed=derive_seed(config.seed, "target"))
        target = build_dataset(target_spec)
        for split in ("train", "val", "test"):
            save_dataset(out / "data" / f"target_{split}.txt",
                         getattr(target, split), target_spec, split)
        ood_items: list[CharTaskItem] = []
        for task, pool in config.ood.combos:
            spec = CharTaskSpec(
                tasks=(task,), pool=pool, train=0, val=0,
                test=config.ood.test_per_combo,
                min_input_len=config.ood.min_input_len,
                max_input_len=config.ood.max_input_len,
                seed=derive_seed(config.seed, f"ood-{task}-{pool}"))
            items = build_dataset(spec).test
            save_dataset(out / "data" / f"ood_{task}_{pool}.txt", items, spec, "test")
            ood_items.extend(items)
        gen_all_spec = CharTaskSpec(
            tasks=TASK_TOKENS, pool="intchar",
            train=4 * config.generalist_train_per_task, val=0, test=0,
            min_input_len=config.target.min_input_len,
            max_input_len=config.target.max_input_len,
            seed=derive_seed(config.seed, "generalist-train"))
        gen_train = build_dataset(gen_all_spec).train

    with _stage("train"):
        vocab = chartask_vocabulary("intchar")
        lm_corpus = _with_suffixes(
            _corpus(gen_train, vocab), config.generalist.suffix_samples,
            np.random.default_rng(derive_seed(config.seed, "generalist-suffixes")))
        guide_corpus = _with_suffixes(
            _corpus(target.train, vocab), config.guide.suffix_samples,
            np.random.default_rng(derive_seed(config.seed, "guide-suffixes")))
        lm_base = NGramModel.train(lm_corpus, config.generalist.order,
                                   config.generalist.alpha, vocab)
        guide_base = NGramModel.train(guide_corpus, config.guide.order,
                                      config.guide.alpha, vocab)
        lm_base.save(out / "models" / "generalist.json")
        guide_base.save(out / "models" / "guide.json")
        lm = apply_temperature(lm_base, config.generalist.temperature)
        guide = apply_temperature(guide_base, config.guide.temperature)

    with _stage("evaluate"):
        plen = config.evaluate.prompt_len
        dataset = (_eval_dataset(target.test, vocab, plen, "ID", "id") +
                   _eval_dataset(ood_items, vocab, plen, "OOD", "ood"))
        result = batch_evaluate(lm, guide, dataset)
        write_records_csv(result.records, out / "eval" / "records.csv")
        summary["n_records"] = len(result.records)
        summary["n_skipped"] = len(result.skipped)

    with _stage("sweep"):
        records = result.records
        grid = make_k_grid(records, config.valid.k_grid_points)
        targets = tuple(sorted({0.0, 0.01, 0.05, 0.10, 0.20, 0.25, 0.50,
                                config.valid.target_frr}))
        sweep = frr_trr_sweep(records, grid, config.valid.trials, targets)
        write_sweep_csv(sweep, out / "sweep" / "sweep.csv")
        (out / "sweep" / "k_targets.json").write_text(json.dumps(
            {repr(t): k for t, k in sweep.k_at_frr.items()}, indent=2) + "\n")

    with _stage("certify"):
        k_op = sweep.k_at_frr.get(config.valid.target_frr)
        if k_op is None:
            raise InputError(f"target FRR {config.valid.target_frr} not in sweep targets")
        summary["k_bits_operating"] = k_op
        ood_records = [r for r in records if r.label == "OOD"]
        ood_scores = [r.logg_bits for r in ood_records]
        ood_lens = [r.n_y for r in ood_records]
        ood_responses = [rec[2] for rec in dataset if rec[3] == "OOD"]
        cert = domain_certificate_from_scores(
            ood_scores, ood_lens, k_op, config.valid.trials,
            ids=[r.item_id for r in ood_records],
            fingerprint=dataset_fingerprint(ood_responses),
            robust_quantile=config.certify.robust_quantile)
        (out / "certs" / "domain_certificate.json").write_text(
            json.dumps(cert.to_json_dict(), indent=2) + "\n")
        solved = []
        for eps in config.certify.epsilons:
            k_eps = solve_k_from_scores(ood_scores, ood_lens, config.valid.trials,
                                        eps, config.certify.robust_quantile)
            roundtrip = domain_certificate_from_scores(
                ood_scores, ood_lens, k_eps, config.valid.trials,
                robust_quantile=config.certify.robust_quantile).log2_eps
            solved.append({"epsilon": eps, "k_bits": k_eps,
                           "log2_eps_roundtrip": roundtrip,
                           "log2_eps_target": math.log2(eps)})
        (out / "certs" / "solved_k.json").write_text(json.dumps(solved, indent=2) + "\n")

    with _stage("analysis"):
        trials = config.valid.trials
        by_label = {"id": [], "ood": []}
        for r in records:
            ac = atomic_from_score(r.logg_bits, r.n_y, k_op, trials)
            by_label["id" if r.label == "ID" else "ood"].append(ac.log2_eps)
        for label, values in by_label.items():
            (out / "analysis" / f"ecdf_ac_{label}.json").write_text(
                json.dumps(ecdf_and_histograms(values), indent=2) + "\n")
        ratios = {"id": [r.norm_ratio_bits for r in records if r.label == "ID"],
                  "ood": [r.norm_ratio_bits for r in records if r.label == "OOD"]}
        for label, values in ratios.items():
            (out / "analysis" / f"hist_norm_ratio_{label}.json").write_text(
                json.dumps(ecdf_and_histograms(values), indent=2) + "\n")
        log10_2 = math.log10(2.0)
        cr = [(r.logl_bits - (k_op * r.n_y + math.log2(trials) + r.logg_bits)) * log10_2
              for r in ood_records]
        (out / "analysis" / "cr_hist_ood.json").write_text(
            json.dumps(ecdf_and_histograms(cr), indent=2) + "\n")
        summary["median_norm_ratio_id"] = float(np.median(ratios["id"]))
        summary["median_norm_ratio_ood"] = float(np.median(ratios["ood"]))
        summary["median_ac_id"] = float(np.median(by_label["id"]))
        summary["median_ac_ood"] = float(np.median(by_label["ood"]))
        summary["median_log10_cr_ood"] = float(np.median(cr))

    if config.generation.enabled or config.bench.enabled:
        gcfg = config.generation
        with _stage("generation-models"):
            gen_mixed_spec = CharTaskSpec(
                tasks=TASK_TOKENS, pool="intchar",
                train=4 * gcfg.train_per_task, val=0, test=0,
                min_input_len=1, max_input_len=gcfg.max_input_len,
                int_pool_size=gcfg.int_pool_size,
                char_pool_size=gcfg.char_pool_size,
                seed=derive_seed(config.seed, "gen-mixed"))
            gen_target_spec = CharTaskSpec(
                tasks=("S",), pool="int", train=gcfg.guide_train, val=0, test=0,
                min_input_len=1, max_input_len=gcfg.max_input_len,
                int_pool_size=gcfg.int_pool_size,
                char_pool_size=gcfg.char_pool_size,
                seed=derive_seed(config.seed, "gen-target"))
            gen_mixed = build_dataset(gen_mixed_spec)
            gen_target = build_dataset(gen_target_spec)
            lm_gen_base = NGramModel.train(_corpus(gen_mixed.train, vocab),
                                           gcfg.generalist_order, gcfg.alpha, vocab)
            guide_gen_corpus = _with_suffixes(
                _corpus(gen_target.train, vocab), gcfg.guide_suffix_samples,
                np.random.default_rng(derive_seed(config.seed, "gen-guide-suffixes")))
            guide_gen_base = NGramModel.train(guide_gen_corpus, gcfg.guide_order,
                                              gcfg.alpha, vocab)
            lm_gen_base.save(out / "models" / "generalist_gen.json")
            guide_gen_base.save(out / "models" / "guide_gen.json")
            lm_gen = apply_temperature(lm_gen_base, gcfg.temperature_generalist)
            guide_gen = apply_temperature(guide_gen_base, gcfg.temperature_guide)

            def draw_items(spec: CharTaskSpec, count: int, tag: str):
                # training-distribution draws; overlap with training is the
                # point (memorization stands in for task generalization)
                rng = np.random.default_rng(derive_seed(config.seed, tag))
                return [generate_item(spec, rng) for _ in range(count)]

    if config.generation.enabled:
        with _stage("generation"):
            prompts = draw_items(gen_mixed_spec, gcfg.n_prompts, "gen-prompts")
            save_dataset(out / "data" / "gen_prompts.txt", prompts,
                         gen_mixed_spec, "eval")
            table = generation_accuracy(
                {"generalist": lm_gen, "guide_full": guide_gen},
                prompts, vocab, gcfg.prompt_lengths, gcfg.max_len,
                np.random.default_rng(derive_seed(config.seed, "generation")))
            write_generation_accuracy(table, out / "generation" / "accuracy.json")
            summary["generation_accuracy"] = table

    if config.bench.enabled:
        with _stage("bench"):
            bench_items = draw_items(
                CharTaskSpec(tasks=("S",), pool="int", train=0, val=0, test=0,
                             min_input_len=1, max_input_len=gcfg.max_input_len,
                             int_pool_size=gcfg.int_pool_size,
                             char_pool_size=gcfg.char_pool_size,
                             seed=derive_seed(config.seed, "bench-items")),
                gcfg.n_bench_items, "bench-items")
            # the forbidden set: complete out-of-domain sequences
            gen_ood_responses = []
            for task, pool in config.ood.combos:
                spec = CharTaskSpec(
                    tasks=(task,), pool=pool, train=0, val=0, test=0,
                    min_input_len=1, max_input_len=gcfg.max_input_len,
                    int_pool_size=gcfg.int_pool_size,
                    char_pool_size=gcfg.char_pool_size,
                    seed=derive_seed(config.seed, f"bench-ood-{task}-{pool}"))
                for item in draw_items(spec, gcfg.ood_per_combo,
                                       f"bench-ood-{task}-{pool}"):
                    gen_ood_responses.append(
                        vocab.encode(item.flat) + (vocab.eos_id,))
            bench = bench_at_epsilon(
                lm_gen, guide_gen, gen_ood_responses, bench_items, vocab,
                config.bench.epsilons, config.valid.trials,
                config.bench.prompt_len, gcfg.max_len)
            bench.write_csv(out / "bench" / "bench_at_eps.csv")
            (out / "bench" / "bench_at_eps.json").write_text(
                json.dumps(bench.to_json_dict(), indent=2) + "\n")
            summary["bench_raw_accuracy"] = bench.points[0].raw_accuracy

    with _stage("manifest"):
        files = {}
        for path in sorted(out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                files[str(path.relative_to(out))] = {
                    "sha256": digest, "bytes": path.stat().st_size}
        manifest = {
            "tool": {"name": "domaincert", "version": __version__,
                     "kernel_backend": kernels.BACKEND},
            "config": config.canonical(),
            "config_sha256": config.sha256(),
            "summary": summary,
            "files": files,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")
    return manifest
