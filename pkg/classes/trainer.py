"""Joint optimization loop, auxiliary pretraining and evaluation."""
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import sys
import timeit
import jsonlines
import numpy as np
from tqdm import tqdm
from keys import Keys
from classes.data_processor import Dataset
from classes.embedding import ActivationLedger, record_batch_activation
from classes.errors import ConfigError, DataError, NumericAbort, NumericError, UndefinedMetricError
from classes.metrics import Metrics, auc, logloss
from classes.models import CTRModel, ModelPair
from classes.numerics import Adam
from classes.train_config import TrainConfig

logger = logging.getLogger(__name__)

LOSS_KEYS = ("bce_a", "bce_m", "eal", "pal", "total")


@dataclass
class EpochRow:
    epoch: int
    phase: str
    losses: Dict[str, float]
    val_auc: Optional[float] = None
    val_logloss: Optional[float] = None
    activation: Dict[str, float] = field(default_factory=dict)
    train_seconds: float = 0.0
    val_seconds: float = 0.0


@dataclass
class TrainReport:
    rows: List[EpochRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("nan")

    def to_dict(self, include_timings: bool = True) -> Dict:
        rows = []
        for row in self.rows:
            entry = asdict(row)
            if not include_timings:
                entry.pop("train_seconds")
                entry.pop("val_seconds")
            rows.append(entry)
        return {"rows": rows, "best_epoch": self.best_epoch, "best_val_auc": self.best_val_auc}


def _progress(iterable, total: int, desc: str):
    return tqdm(iterable, total=total, desc=desc, leave=False,
                disable=not (Keys.PROGRESS and sys.stderr.isatty()))


def _n_batches(n: int, batch_size: int) -> int:
    return n // batch_size + (1 if n % batch_size >= 2 else 0)


def _check_split(data: Dataset, name: str):
    if data is None or len(data) == 0:
        raise DataError(f"the {name} split is empty")


def _run_epoch(model: CTRModel, data: Dataset, config: TrainConfig, optimizer: Adam, rng: np.random.Generator,
               desc: str, pretraining: bool = False) -> Tuple[Dict[str, float], ActivationLedger]:
    sums = defaultdict(float)
    n_batches = 0
    ledger = ActivationLedger()
    batches = data.batches(config.batch_size, rng)
    for ids, labels in _progress(batches, _n_batches(len(data), config.batch_size), desc):
        optimizer.zero_grad()
        try:
            if pretraining:
                trace = model.pretrain_forward(ids)
                losses = model.pretrain_backward(trace, labels)
            else:
                trace = model.forward(ids, training=True)
                losses = model.backward(trace, labels, config.enable_eal, config.enable_pal)
        except NumericError as e:
            raise NumericAbort(f"{desc}, batch {n_batches}: {e}") from e
        if not all(math.isfinite(v) for v in losses.values()):
            raise NumericAbort(f"{desc}, batch {n_batches}: non-finite loss {losses}")
        optimizer.step()
        for key, value in losses.items():
            sums[key] += value
        n_batches += 1
        if not pretraining:
            ledger = record_batch_activation(ledger, trace.activated_fields, model.main_embeddings,
                                             model.aux_embeddings)
    if n_batches == 0:
        raise DataError(f"{desc}: no batch of at least two instances")
    return {key: sums[key] / n_batches for key in LOSS_KEYS if key in sums}, ledger


def pretrain(model: CTRModel, data: Dataset, epochs: int, config: TrainConfig,
             rng: Optional[np.random.Generator] = None) -> Tuple[CTRModel, List[EpochRow]]:
    """Trains the auxiliary embeddings and controller alone, over all N fields, with BCE only"""
    if epochs < 0:
        raise ConfigError("pretrain epochs must be nonnegative")
    if epochs == 0:
        return model, []
    if not isinstance(model, ModelPair):
        logger.warning("method %s has no auxiliary model, skipping %d pretraining epochs", model.method, epochs)
        return model, []
    _check_split(data, "train")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    optimizer = Adam(model.pretrain_parameters(), lr=config.lr)
    rows = []
    for epoch in range(1, epochs + 1):
        start = timeit.default_timer()
        losses, _ = _run_epoch(model, data, config, optimizer, rng, f"pretrain {epoch}", pretraining=True)
        rows.append(EpochRow(epoch=epoch, phase="pretrain", losses=losses,
                             train_seconds=timeit.default_timer() - start))
        logger.info("pretrain epoch %d: bce_a=%.5f", epoch, losses["bce_a"])
    return model, rows


def train(model: CTRModel, train_data: Dataset, val_data: Dataset,
          config: TrainConfig) -> Tuple[CTRModel, TrainReport]:
    """Runs pretraining (if asked) then joint training; restores the best-validation-AUC epoch"""
    _check_split(train_data, "train")
    _check_split(val_data, "validation")
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    model, report.rows = pretrain(model, train_data, config.pretrain_epochs, config, rng)
    optimizer = Adam(model.joint_parameters(), lr=config.lr)
    best_state = None
    for epoch in range(1, config.max_epochs + 1):
        start = timeit.default_timer()
        losses, ledger = _run_epoch(model, train_data, config, optimizer, rng, f"epoch {epoch}")
        middle = timeit.default_timer()
        metrics = evaluate(model, val_data, config.batch_size)
        row = EpochRow(epoch=epoch, phase="train", losses=losses, val_auc=metrics.auc, val_logloss=metrics.logloss,
                       activation=ledger.summary(), train_seconds=middle - start,
                       val_seconds=timeit.default_timer() - middle)
        report.rows.append(row)
        logger.info("epoch %d: loss=%.5f val_auc=%.5f val_logloss=%.5f", epoch, losses["total"],
                    metrics.auc, metrics.logloss)
        if best_state is None or metrics.auc > report.best_val_auc:
            best_state = model.state_dict()
            report.best_epoch, report.best_val_auc = epoch, metrics.auc
    model.load_state_dict(best_state)
    return model, report


def _selection_precision(selected: np.ndarray, informative: Sequence[int]) -> float:
    return float(np.isin(selected, np.asarray(list(informative), dtype=np.int64)).mean())


def evaluate(model: CTRModel, data: Dataset, batch_size: int = Keys.BATCH_SIZE,
             informative: Optional[Sequence[int]] = None, dump_path: Optional[str] = None) -> Metrics:
    """Inference-mode pass over a split; parameters and batch-norm statistics stay untouched"""
    _check_split(data, "evaluation")
    predictions, labels = [], []
    ledger = ActivationLedger()
    gaps = defaultdict(float)
    precision_hits, precision_total = 0.0, 0
    writer = jsonlines.open(dump_path, mode="w", sort_keys=True) if dump_path else None
    row_offset = 0
    try:
        for ids, y in data.batches(batch_size, rng=None, drop_last_single=False):
            trace = model.forward(ids, training=False)
            predictions.append(trace.p_main)
            labels.append(y)
            ledger = record_batch_activation(ledger, trace.activated_fields, model.main_embeddings,
                                             model.aux_embeddings)
            if isinstance(model, ModelPair):
                for key, value in model.alignment_gaps(trace).items():
                    gaps[key] += value * len(y)
            selected = model.selected_fields(trace)
            if informative is not None and selected is not None:
                precision_hits += _selection_precision(selected, informative) * len(y)
                precision_total += len(y)
            if writer is not None:
                weights = trace.selection.weights if trace.selection is not None else None
                for i in range(len(y)):
                    record = {"row": row_offset + i, "label": int(y[i]), "p_main": float(trace.p_main[i])}
                    if selected is not None:
                        record["selected"] = [int(f) for f in selected[i]]
                    if weights is not None:
                        record["weights"] = [float(w) for w in weights[i]]
                    writer.write(record)
            row_offset += len(y)
    finally:
        if writer is not None:
            writer.close()
    scores, truth = np.concatenate(predictions), np.concatenate(labels)
    summary = ledger.summary()
    n = len(truth)
    try:
        split_auc = auc(scores, truth)
    except UndefinedMetricError as e:
        raise DataError(f"cannot score a split of {n} instances: {e}") from e
    return Metrics(auc=split_auc, logloss=logloss(scores, truth), n=n,
                   activated_params_avg=summary["activated_params_avg"], lookups_avg=summary["lookups_avg"],
                   aux_lookups_avg=summary["aux_lookups_avg"],
                   prediction_gap=gaps["prediction_gap"] / n if gaps else None,
                   embedding_gap=gaps["embedding_gap"] / n if gaps else None,
                   selection_precision=precision_hits / precision_total if precision_total else None)
