import numpy as np


def confusion_counts(y_true, y_pred):
    """(tp, fp, fn, tn) for boolean-like vectors (truthy = positive)."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise ValueError("label vectors differ in length")
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    return tp, fp, fn, tn


def f1_score(y_true, y_pred, zero_division=None):
    """F1 of the positive class.

    When there are no positives in either vector F1 is undefined: a
    ValueError is raised unless ``zero_division`` gives a fallback value.
    """
    tp, fp, fn, _ = confusion_counts(y_true, y_pred)
    denom = 2 * tp + fp + fn
    if denom == 0:
        if zero_division is None:
            raise ValueError("F1 undefined: no positive labels or predictions")
        return float(zero_division)
    return 2.0 * tp / denom
