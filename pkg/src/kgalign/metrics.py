"""Ranking metrics, detection quality, and verification-matrix reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, KgAlignError

_RANK_CHUNK = 1024


@dataclass
class RankingMetrics:
    hits: dict[int, float]
    mrr: float
    ranks: np.ndarray


def load_ground_truth(path) -> list[tuple[int, int]]:
    """Read `<src_id>\\t<tgt_id>` pairs; each side may appear at most once."""
    pairs = []
    seen_src: set[int] = set()
    seen_tgt: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 columns")
            s, t = int(parts[0]), int(parts[1])
            if s in seen_src or t in seen_tgt:
                raise DataFormatError(f"{path}:{lineno}: duplicate endpoint in pair ({s}, {t})")
            seen_src.add(s)
            seen_tgt.add(t)
            pairs.append((s, t))
    return pairs


def ranks_of_truth(scores: np.ndarray, truth: list[tuple[int, int]]) -> np.ndarray:
    """Pessimistic rank of each true target: equal-scored competitors count
    as ranked ahead of it."""
    rows, cols = scores.shape
    src = np.array([p[0] for p in truth])
    tgt = np.array([p[1] for p in truth])
    if src.size and (src.min() < 0 or src.max() >= rows):
        raise DataFormatError("ground-truth source outside matrix rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= cols):
        raise DataFormatError("ground-truth target outside matrix columns")
    ranks = np.empty(src.size, dtype=np.int64)
    for start in range(0, src.size, _RANK_CHUNK):
        stop = min(start + _RANK_CHUNK, src.size)
        block = scores[src[start:stop]]
        true_vals = block[np.arange(stop - start), tgt[start:stop]]
        ranks[start:stop] = (block >= true_vals[:, None]).sum(axis=1)
    return ranks


def hits_mrr(scores: np.ndarray, truth: list[tuple[int, int]], ks=(1, 10)) -> RankingMetrics:
    ranks = ranks_of_truth(scores, truth)
    hits = {int(k): float((ranks <= k).mean()) for k in ks}
    return RankingMetrics(hits=hits, mrr=float((1.0 / ranks).mean()), ranks=ranks)


def detection_quality(metric: np.ndarray, error_labels: np.ndarray) -> tuple[float, float]:
    """AUROC and AUPR of a per-entity metric for spotting erroneous alignments.

    Positives are erroneous alignments; a lower metric value means more
    likely erroneous.  AUROC uses the tie-averaged rank statistic, AUPR the
    step integration of the precision-recall curve.
    """
    metric = np.asarray(metric, dtype=np.float64)
    labels = np.asarray(error_labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise KgAlignError("detection_quality needs both positive and negative labels")
    pred = -metric  # higher = more likely erroneous

    order = np.argsort(pred, kind="stable")
    sorted_pred = pred[order]
    ranks = np.empty(labels.size, dtype=np.float64)
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_pred[j + 1] == sorted_pred[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    auroc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    desc = np.argsort(-pred, kind="stable")
    sorted_desc = pred[desc]
    lab_desc = labels[desc].astype(np.float64)
    tp = np.cumsum(lab_desc)
    total = np.arange(1, labels.size + 1)
    boundary = np.flatnonzero(np.diff(sorted_desc) != 0)
    cut = np.append(boundary, labels.size - 1)  # last index of each tie group
    precision = tp[cut] / total[cut]
    recall = tp[cut] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    aupr = float(((recall - prev_recall) * precision).sum())
    return float(auroc), aupr


@dataclass
class VerificationMatrix:
    wrong_to_wrong: int = 0
    correct_to_wrong: int = 0
    wrong_to_correct: int = 0
    correct_to_correct: int = 0
    non_corrected_wrong: int = 0
    non_corrected_correct: int = 0
    non_detected_wrong: int = 0
    non_detected_correct: int = 0

    @property
    def corrected_total(self) -> int:
        return (self.wrong_to_wrong + self.correct_to_wrong
                + self.wrong_to_correct + self.correct_to_correct)

    @property
    def non_corrected(self) -> int:
        return self.non_corrected_wrong + self.non_corrected_correct

    @property
    def non_detected(self) -> int:
        return self.non_detected_wrong + self.non_detected_correct

    def percentages(self) -> dict[str, float]:
        """Cell shares over the corrected subset, in percent."""
        total = self.corrected_total
        if total == 0:
            return {k: 0.0 for k in
                    ("wrong_to_wrong", "correct_to_wrong", "wrong_to_correct", "correct_to_correct")}
        return {
            "wrong_to_wrong": 100.0 * self.wrong_to_wrong / total,
            "correct_to_wrong": 100.0 * self.correct_to_wrong / total,
            "wrong_to_correct": 100.0 * self.wrong_to_correct / total,
            "correct_to_correct": 100.0 * self.correct_to_correct / total,
        }


def verification_matrix(before: np.ndarray, after: np.ndarray, detected, corrected,
                        truth: list[tuple[int, int]]) -> VerificationMatrix:
    """Partition truth-covered sources into the detection/correction cells."""
    detected = set(int(x) for x in detected)
    corrected_set = set(int(x) for x in corrected)
    vm = VerificationMatrix()
    for src, tgt in truth:
        ok_before = int(before[src]) == tgt
        ok_after = int(after[src]) == tgt
        if src not in detected:
            if ok_before:
                vm.non_detected_correct += 1
            else:
                vm.non_detected_wrong += 1
        elif src not in corrected_set:
            if ok_before:
                vm.non_corrected_correct += 1
            else:
                vm.non_corrected_wrong += 1
        else:
            if ok_before and ok_after:
                vm.correct_to_correct += 1
            elif ok_before:
                vm.correct_to_wrong += 1
            elif ok_after:
                vm.wrong_to_correct += 1
            else:
                vm.wrong_to_wrong += 1
    return vm
