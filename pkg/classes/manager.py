"""Run orchestration behind the CLI subcommands.

Every command that writes a directory writes its RunManifest first (status
"running") and finalizes it when the command returns.
"""
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import os
import shutil
import timeit
import numpy as np
import pandas as pd
from tabulate import tabulate
from keys import Keys
from modules import sha256_file, write_json, write_jsonl
from classes.checkpoint import load_checkpoint, save_checkpoint
from classes.data_processor import Dataset, Schema, Vocabulary, build_vocab, load_raw, quantize_frame, split_dataset
from classes.embedding import delta_el, delta_pae, embedding_size_sweep, full_param_count
from classes.errors import ConfigError, DataError, UndefinedMetricError
from classes.metrics import Metrics, auc, emit_report, p_value_matrix, p_value_table
from classes.models import build_model
from classes.numerics import sigmoid
from classes.selection import keep_count
from classes.synthetic import SyntheticSpec, generate_synthetic, read_informative, write_synthetic
from classes.train_config import TrainConfig
from classes.trainer import evaluate, train

logger = logging.getLogger(__name__)

# compare labels -> config overrides; plain method names map to themselves
METHOD_VARIANTS = {
    "none": {"method": "none"},
    "random": {"method": "random"},
    "adafs": {"method": "adafs"},
    "adafs-soft": {"method": "adafs", "mode": "soft"},
    "adafs-hard": {"method": "adafs", "mode": "hard"},
    "aefs": {"method": "aefs"},
    "aefs-no-eal": {"method": "aefs", "enable_eal": False},
    "aefs-no-pal": {"method": "aefs", "enable_pal": False},
    "aefs-no-align": {"method": "aefs", "enable_eal": False, "enable_pal": False},
    "aefs-no-reweight": {"method": "aefs", "enable_topk_reweight": False},
    "aefs-pretrain": {"method": "aefs", "pretrain_epochs": 1},
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    output_dir: str
    config_hash: str = ""
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    status: str = "running"
    timings: Dict[str, float] = field(default_factory=dict)
    artifact_versions: Dict[str, str] = field(default_factory=lambda: {
        "aefs": Keys.ARTIFACT_VERSION, "checkpoint": Keys.CHECKPOINT_FORMAT,
        "numpy": np.__version__, "pandas": pd.__version__})

    @property
    def path(self) -> str:
        return os.path.join(self.output_dir, Keys.MANIFEST_FILE)

    def write(self):
        write_json(asdict(self), self.path)

    def finalize(self, status: str = "ok"):
        self.status = status
        self.finished_at = _now()
        self.write()


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    schema: Schema
    vocab: Vocabulary
    informative: Optional[List[int]] = None


def data_directory(config: TrainConfig) -> str:
    return config.data if os.path.isdir(config.data) else os.path.dirname(config.data)


def prepare_data(config: TrainConfig) -> PreparedData:
    """Reads raw records, splits 8:1:1 and quantizes with a vocabulary built on the train split only"""
    frame, schema = load_raw(config.data, config.data_format)
    train_frame, val_frame, test_frame = split_dataset(frame, config.split_seed)
    vocab = build_vocab(train_frame, schema, config.min_freq)
    splits = [quantize_frame(f, schema, vocab) for f in (train_frame, val_frame, test_frame)]
    informative = read_informative(data_directory(config))
    logger.info("prepared %d/%d/%d instances over %d fields", *(len(s) for s in splits), len(schema))
    return PreparedData(*splits, schema=schema, vocab=vocab, informative=informative)


def input_digests(config: TrainConfig) -> Dict[str, str]:
    inputs = {"data": config.data}
    path = os.path.join(config.data, Keys.DATA_FILE) if os.path.isdir(config.data) else config.data
    if os.path.isfile(path):
        inputs["data_sha256"] = sha256_file(path)
    return inputs


def expected_delta_pae(config: TrainConfig, n_fields: int) -> Fraction:
    """Fraction of activated embedding parameters saved relative to the no-selection model"""
    kept = Fraction(keep_count(n_fields, config.r), n_fields)
    if config.method == "aefs":
        return delta_pae(config.d1, config.d2, kept)
    if config.method == "random":
        return 1 - kept
    return Fraction(0)


def metrics_row(label: str, config: TrainConfig, metrics: Metrics, vocab_sizes: Sequence[int]) -> Dict:
    row = {"method": label, "seed": config.seed}
    row.update(metrics.to_dict())
    main_full = full_param_count(vocab_sizes, config.d1)
    row["delta_pae"] = float(expected_delta_pae(config, len(vocab_sizes)))
    row["delta_pae_observed"] = 1.0 - metrics.activated_params_avg / main_full
    return row


class RunManager():
    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self.time_recoder = dict()

    # ------------------------------------------------------------ synth

    def synth(self, out: str, spec: SyntheticSpec) -> str:
        manifest = RunManifest(command="synth", output_dir=out, seed=spec.seed)
        os.makedirs(out, exist_ok=True)
        manifest.write()
        time1 = timeit.default_timer()
        data = generate_synthetic(spec)
        try:
            oracle_auc = auc(sigmoid(data.logits), data.labels)
        except UndefinedMetricError:
            oracle_auc = None
        write_synthetic(data, spec, out, oracle_auc=oracle_auc)
        manifest.timings["synth"] = timeit.default_timer() - time1
        manifest.finalize()
        print(f"wrote {spec.n_records} records over {spec.n_fields} fields to {out}")
        print(f"informative fields: {data.informative}, planted-model AUC: {oracle_auc}")
        return out

    # ------------------------------------------------------------ prepare

    def prepare(self, config: TrainConfig, out: Optional[str] = None) -> str:
        prepared = prepare_data(config)
        out = out or os.path.join(data_directory(config), Keys.VOCAB_FILE)
        prepared.vocab.to_json(out)
        print(f"vocabulary of {sum(prepared.vocab.vocab_sizes)} ids over {len(prepared.schema)} fields -> {out}")
        return out

    # ------------------------------------------------------------ train

    def run_directory(self, config: TrainConfig) -> str:
        return os.path.join(config.out, config.run_name())

    def _claim(self, run_dir: str, force: bool):
        if os.path.exists(run_dir):
            if not force:
                raise ConfigError(f"run directory {run_dir} already exists; use another seed or --force")
            shutil.rmtree(run_dir)
        os.makedirs(run_dir)

    def train(self, config: TrainConfig, run_dir: Optional[str] = None, label: Optional[str] = None) -> Tuple[str, Dict]:
        """prepare -> train -> evaluate on the test split; returns (run directory, metrics row)"""
        run_dir = run_dir or self.run_directory(config)
        self._claim(run_dir, config.force)
        manifest = RunManifest(command="train", output_dir=run_dir, config_hash=config.config_hash(),
                               seed=config.seed, inputs=input_digests(config))
        manifest.write()
        with open(os.path.join(run_dir, Keys.CONFIG_FILE), "w") as f:
            f.write(config.to_text())
        try:
            time1 = timeit.default_timer()
            prepared = prepare_data(config)
            time2 = timeit.default_timer()
            manifest.timings["prepare"] = time2 - time1
            prepared.vocab.to_json(os.path.join(run_dir, Keys.VOCAB_FILE))
            model = build_model(config, prepared.vocab.vocab_sizes)
            model, report = train(model, prepared.train, prepared.val, config)
            time3 = timeit.default_timer()
            manifest.timings["train"] = time3 - time2
            metrics = evaluate(model, prepared.test, config.batch_size, informative=prepared.informative)
            manifest.timings["evaluate"] = timeit.default_timer() - time3
            save_checkpoint(model, os.path.join(run_dir, Keys.CHECKPOINT_FILE), config.to_text())
            write_json(report.to_dict(), os.path.join(run_dir, Keys.TRAIN_REPORT_FILE))
            row = metrics_row(label or config.method, config, metrics, prepared.vocab.vocab_sizes)
            emit_report([row], os.path.join(run_dir, Keys.METRICS_REPORT))
        except Exception:
            manifest.finalize("failed")
            raise
        manifest.finalize()
        self.time_recoder[run_dir] = manifest.timings
        print(f"{row['method']}: test AUC {row['auc']:.5f}, Logloss {row['logloss']:.5f}, "
              f"ΔPaE {100 * row['delta_pae']:.2f}%, run directory {run_dir}")
        return run_dir, row

    # ------------------------------------------------------------ evaluate

    def evaluate(self, run_dir: str, dump: bool = False) -> Dict:
        """Re-evaluates a finished run's checkpoint on its test split"""
        config_path = os.path.join(run_dir, Keys.CONFIG_FILE)
        config = TrainConfig.from_file(config_path)
        manifest = RunManifest(command="evaluate", output_dir=os.path.join(run_dir, "evaluate"),
                               config_hash=config.config_hash(), seed=config.seed,
                               inputs={"run": run_dir, "data": config.data})
        os.makedirs(manifest.output_dir, exist_ok=True)
        manifest.write()
        prepared = prepare_data(config)
        model = build_model(config, prepared.vocab.vocab_sizes)
        load_checkpoint(model, os.path.join(run_dir, Keys.CHECKPOINT_FILE))
        dump_path = os.path.join(manifest.output_dir, Keys.SELECTION_DUMP_FILE) if dump else None
        metrics = evaluate(model, prepared.test, config.batch_size, informative=prepared.informative,
                           dump_path=dump_path)
        row = metrics_row(config.method, config, metrics, prepared.vocab.vocab_sizes)
        emit_report([row], os.path.join(manifest.output_dir, Keys.METRICS_REPORT))
        manifest.finalize()
        print(f"{config.method}: test AUC {row['auc']:.5f}, Logloss {row['logloss']:.5f}")
        return row

    # ------------------------------------------------------------ compare

    def compare(self, config: TrainConfig, methods: Sequence[str], seeds: Sequence[int]) -> str:
        labels = _unique_labels(methods)
        if len(labels) < 2:
            raise ConfigError("compare needs at least two methods")
        if not seeds:
            raise ConfigError("compare needs at least one seed")
        if len(seeds) < 2:
            logger.warning("a single seed gives no significance test")
        compare_dir = os.path.join(config.out, f"compare_{config.config_hash()[:12]}")
        self._claim(compare_dir, config.force)
        manifest = RunManifest(command="compare", output_dir=compare_dir, config_hash=config.config_hash(),
                               inputs={"data": config.data, "methods": ",".join(labels),
                                       "seeds": ",".join(str(s) for s in seeds)})
        manifest.write()
        cells = [(label, method, seed) for label, method in labels.items() for seed in seeds]
        time1 = timeit.default_timer()
        results = {}
        if self.workers > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as executor:
                futures = {executor.submit(run_cell, config, label, method, seed, compare_dir): (label, seed)
                           for label, method, seed in cells}
                for result in as_completed(futures):
                    results[futures[result]] = result.result()
        else:
            for label, method, seed in cells:
                results[(label, seed)] = run_cell(config, label, method, seed, compare_dir)
        manifest.timings["cells"] = timeit.default_timer() - time1
        # merge in submission order
        cell_rows = [results[(label, seed)] for label, _, seed in cells]
        write_jsonl(cell_rows, os.path.join(compare_dir, "cells.jsonl"))
        summary, samples = [], {}
        for label in labels:
            rows = [r for r in cell_rows if r["method"] == label]
            samples[label] = [r["auc"] for r in rows]
            summary.append({"method": label, "seeds": len(rows),
                            "auc": float(np.mean([r["auc"] for r in rows])),
                            "auc_std": float(np.std([r["auc"] for r in rows])),
                            "logloss": float(np.mean([r["logloss"] for r in rows])),
                            "delta_pae": rows[0]["delta_pae"],
                            "activated_params_avg": float(np.mean([r["activated_params_avg"] for r in rows]))})
        emit_report(summary, os.path.join(compare_dir, Keys.METRICS_REPORT))
        names, matrix = p_value_matrix(samples)
        write_jsonl([{"method": a, "p_values": dict(zip(names, row))} for a, row in zip(names, matrix)],
                    os.path.join(compare_dir, "p_values.jsonl"))
        table = p_value_table(names, matrix)
        with open(os.path.join(compare_dir, "p_values.txt"), "w", encoding="utf-8") as f:
            f.write(table + "\n")
        manifest.finalize()
        with open(os.path.join(compare_dir, Keys.METRICS_REPORT + ".txt"), "r", encoding="utf-8") as f:
            print(f.read())
        print(table)
        return compare_dir

    # ------------------------------------------------------------ params

    def params(self, vocab, d1: int = Keys.D_MAIN, d2: int = Keys.D_AUX, r=Keys.KEEP_RATIO,
               sweep: Sequence[int] = ()) -> Dict:
        """Parameter accounting for a vocabulary file, a data directory, or a total id count.

        ``sweep`` lists auxiliary sizes d2 for which ΔPaE is tabulated as well.
        """
        vocab_sizes = _vocab_sizes(vocab)
        main_full = full_param_count(vocab_sizes, d1)
        aux_full = full_param_count(vocab_sizes, d2)
        reduction = delta_pae(d1, d2, r)
        result = {"main_full": main_full, "aux_full": aux_full,
                  "expected_activated": float(main_full * (1 - reduction)),
                  "delta_pae": float(reduction), "delta_el": float(delta_el(r))}
        table = [["full main embedding params", f"{main_full:,}"],
                 ["auxiliary embedding params", f"{aux_full:,}"],
                 ["expected activated params", f"{result['expected_activated']:,.0f}"],
                 ["ΔPaE", f"{100 * result['delta_pae']:.2f}%"],
                 ["ΔEL", f"{100 * result['delta_el']:.2f}%"]]
        print(tabulate(table, tablefmt="simple", disable_numparse=True))
        if sweep:
            result["sweep"] = {int(size): float(value) for size, value in embedding_size_sweep(d1, sweep, r)}
            rows = [[size, f"{100 * value:.2f}%"] for size, value in result["sweep"].items()]
            print(tabulate(rows, headers=["d2", "ΔPaE"], tablefmt="simple", disable_numparse=True))
        return result


def _unique_labels(methods: Sequence[str]) -> Dict[str, str]:
    """label -> variant name; a repeated method gets a #2, #3 suffix"""
    labels = {}
    for method in methods:
        if method not in METHOD_VARIANTS:
            raise ConfigError(f"unknown compare method {method!r}, expected one of {sorted(METHOD_VARIANTS)}")
        label, n = method, 1
        while label in labels:
            n += 1
            label = f"{method}#{n}"
        labels[label] = method
    return labels


def run_cell(config: TrainConfig, label: str, method: str, seed: int, compare_dir: str) -> Dict:
    """One isolated (method, seed) training run; module level so worker processes can pickle it"""
    overrides = dict(METHOD_VARIANTS[method])
    if method == "aefs-pretrain":
        overrides["pretrain_epochs"] = max(1, config.pretrain_epochs)
    cell_config = config.with_overrides(seed=seed, force=True, **overrides)
    run_dir = os.path.join(compare_dir, label.replace("#", "_"), f"seed{seed}")
    _, row = RunManager().train(cell_config, run_dir=run_dir, label=label)
    return row


def _vocab_sizes(vocab) -> List[int]:
    if isinstance(vocab, (int, np.integer)):
        return [int(vocab)]
    path = str(vocab)
    if os.path.isdir(path):
        path = os.path.join(path, Keys.VOCAB_FILE)
    if not os.path.exists(path):
        raise DataError(f"vocabulary {path} does not exist; run prepare first")
    return Vocabulary.from_json(path).vocab_sizes
