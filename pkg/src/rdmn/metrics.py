"""Classification metrics: pair-counting AUC and F1 scores."""

import math

import numpy as np
from scipy.stats import rankdata

UNDEFINED = float("nan")


def roc_auc(scores, labels):
    """Probability that a random positive outranks a random negative, ties counting 1/2.

    Uses the rank-sum identity, which is exactly the positive/negative pair
    count. Returns NaN when only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return UNDEFINED
    ranks = rankdata(scores)  # average ranks give ties half credit
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def threshold_predictions(prob_pos, threshold=0.5):
    """Binary decisions; a score exactly at the threshold counts as positive."""
    return (np.asarray(prob_pos) >= threshold).astype(int)


def confusion_counts(y_true, y_pred, cls):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(np.sum((y_pred == cls) & (y_true == cls)))
    fp = int(np.sum((y_pred == cls) & (y_true != cls)))
    fn = int(np.sum((y_pred != cls) & (y_true == cls)))
    return tp, fp, fn


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def precision_recall_f1(y_true, y_pred, n_classes):
    precision, recall, f1 = [], [], []
    for cls in range(n_classes):
        tp, fp, fn = confusion_counts(y_true, y_pred, cls)
        precision.append(tp / (tp + fp) if tp + fp else 0.0)
        recall.append(tp / (tp + fn) if tp + fn else 0.0)
        f1.append(_f1(tp, fp, fn))
    return precision, recall, f1


def micro_f1(y_true, y_pred, n_classes):
    """Pooled F1.

    For two classes this is the positive-class F1 from the confusion matrix
    (pooled over every binary decision, as when several binary tasks are
    scored together). For more classes counts are pooled over all classes.
    """
    classes = [1] if n_classes == 2 else range(n_classes)
    tp = fp = fn = 0
    for cls in classes:
        a, b, c = confusion_counts(y_true, y_pred, cls)
        tp, fp, fn = tp + a, fp + b, fn + c
    return _f1(tp, fp, fn)


def macro_f1(y_true, y_pred, n_classes):
    """Unweighted mean of per-class F1."""
    return float(np.mean(precision_recall_f1(y_true, y_pred, n_classes)[2]))


def average_auc(probs, labels, n_classes):
    """AUC of the positive class for binary problems, mean one-vs-rest AUC otherwise."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if n_classes == 2:
        return roc_auc(probs[:, 1], labels == 1)
    aucs = [roc_auc(probs[:, c], labels == c) for c in range(n_classes)]
    aucs = [a for a in aucs if not math.isnan(a)]
    return float(np.mean(aucs)) if aucs else UNDEFINED
