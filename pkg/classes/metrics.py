"""AUC, Logloss, Welch's t-test and report emission."""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import os
import jsonlines
import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata
from tabulate import tabulate
from classes.errors import DataError, UndefinedMetricError
from classes.predictors import clamp_probability

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("method", "AUC", "Logloss", "ΔPaE")


@dataclass
class Metrics:
    auc: float
    logloss: float
    n: int
    activated_params_avg: float
    lookups_avg: float
    aux_lookups_avg: float = 0.0
    prediction_gap: Optional[float] = None
    embedding_gap: Optional[float] = None
    selection_precision: Optional[float] = None

    def __post_init__(self):
        if self.n <= 0:
            raise DataError("metrics need at least one instance")

    def to_dict(self) -> Dict:
        return asdict(self)


def _labels_and_scores(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores for {labels.size} labels")
    if scores.size == 0:
        raise DataError("cannot score an empty set")
    return scores, labels


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied pairs count one half"""
    scores, labels = _labels_and_scores(scores, labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    scores, labels = _labels_and_scores(scores, labels)
    p = clamp_probability(scores)
    return float(np.mean(-labels * np.log(p) - (1.0 - labels) * np.log(1.0 - p)))


def welch_t_statistic(sample_a, sample_b) -> Tuple[float, float]:
    """Returns (t, Welch-Satterthwaite degrees of freedom)"""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise UndefinedMetricError("Welch's test needs at least two values per sample")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va == 0 and vb == 0:
        raise UndefinedMetricError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), float(df)


def welch_t_test(sample_a, sample_b) -> float:
    """Two-sided p-value of Welch's unequal-variance t-test"""
    t, df = welch_t_statistic(sample_a, sample_b)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


# ---------------------------------------------------------------- reports

def format_delta_pae(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{100.0 * float(value):.2f}%"


def report_table(rows: Sequence[Dict]) -> str:
    ordered = sorted(rows, key=lambda row: (-row["auc"], row["method"]))
    body = [[row["method"], f"{row['auc']:.6f}", f"{row['logloss']:.6f}", format_delta_pae(row.get("delta_pae"))]
            for row in ordered]
    return tabulate(body, headers=list(TABLE_COLUMNS), tablefmt="simple", disable_numparse=True)


def emit_report(rows: Sequence[Dict], destination: str) -> Tuple[str, str]:
    """Writes ``destination``.jsonl (one sorted-key record per row) and ``destination``.txt (aligned table)"""
    rows = list(rows)
    if not rows:
        raise DataError("a report needs at least one row")
    jsonl_path, text_path = destination + ".jsonl", destination + ".txt"
    try:
        directory = os.path.dirname(destination)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with jsonlines.open(jsonl_path, mode="w", sort_keys=True) as writer:
            writer.write_all(rows)
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(report_table(rows) + "\n")
    except OSError as e:
        raise DataError(f"cannot write report {destination}: {e}") from e
    logger.info("report written to %s", jsonl_path)
    return jsonl_path, text_path


def parse_report(path: str) -> List[Dict]:
    if not path.endswith(".jsonl"):
        path = path + ".jsonl"
    try:
        with jsonlines.open(path) as reader:
            return list(reader)
    except OSError as e:
        raise DataError(f"cannot read report {path}: {e}") from e


def p_value_matrix(samples: Dict[str, Sequence[float]]) -> Tuple[List[str], List[List[Optional[float]]]]:
    """Pairwise Welch p-values; identical constant samples give 1.0, other undefined cells None"""
    names = list(samples)
    matrix = []
    for a in names:
        row = []
        for b in names:
            try:
                row.append(welch_t_test(samples[a], samples[b]))
            except UndefinedMetricError:
                same = len(samples[a]) > 0 and np.allclose(np.mean(samples[a]), np.mean(samples[b]))
                row.append(1.0 if same else None)
        matrix.append(row)
    return names, matrix


def p_value_table(names: Sequence[str], matrix) -> str:
    body = [[a] + ["-" if p is None else f"{p:.4f}" for p in row] for a, row in zip(names, matrix)]
    return tabulate(body, headers=["p-value"] + list(names), tablefmt="simple", disable_numparse=True)
