import dataclasses
import string
import typing

import Levenshtein
import numpy as np

from ._errors import DimensionError, DomainError

OVERLAP_THRESHOLDS = (0.10, 0.25, 0.50)


class Segment(typing.NamedTuple):
    """Run of frames with the same class; `end` is inclusive"""

    label: int
    start: int
    end: int

    @property
    def length(self):
        return self.end - self.start + 1


@dataclasses.dataclass
class EvalReport:
    """Frame accuracy, segmental edit score and F1@{10,25,50} in percent"""

    acc: float
    edit: float
    f1_10: float
    f1_25: float
    f1_50: float
    n_videos: int = 0
    n_frames: int = 0

    def to_kv(self):
        """Mapping for :func:`~._config.format_kv`"""
        return dataclasses.asdict(self)

    def to_table(self):
        return (
            f'{"F1@10":>7} {"F1@25":>7} {"F1@50":>7} {"Edit":>7} {"Acc":>7} {"videos":>7} {"frames":>9}\n'
            f'{self.f1_10:>7.2f} {self.f1_25:>7.2f} {self.f1_50:>7.2f} {self.edit:>7.2f} '
            f'{self.acc:>7.2f} {self.n_videos:>7} {self.n_frames:>9}\n'
        )


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise DimensionError(f'Prediction has {pred.size} frames, ground truth has {gt.size}')
    return pred, gt


def frame_accuracy(pred, gt):
    """Percentage of frames where `pred` equals `gt`"""
    pred, gt = _check_pair(pred, gt)
    if pred.size == 0:
        raise DimensionError('Empty label sequence')
    return 100 * float(np.mean(pred == gt))


def labels_to_segments(labels):
    """
    Maximal runs of equal labels as list of :class:`Segment`

    :raise DimensionError: if `labels` is empty
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DimensionError('Empty label sequence')
    boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries - 1, [labels.size - 1]))
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def segments_to_labels(segments):
    """Inverse of :func:`labels_to_segments`"""
    labels = np.empty(segments[-1].end + 1, dtype=np.int64)
    for segment in segments:
        labels[segment.start:segment.end + 1] = segment.label
    return labels


def _without(segments, background):
    if background:
        return [s for s in segments if s.label not in background]
    return list(segments)


def segmental_edit_score(pred_segs, gt_segs):
    """
    ``100 * (1 - levenshtein / max(len(pred_segs), len(gt_segs)))`` on the
    class sequences of both segment lists; durations are ignored

    :raise DimensionError: if either list is empty
    """
    if not pred_segs or not gt_segs:
        raise DimensionError('Segment lists must not be empty')
    return _edit_score(pred_segs, gt_segs)


def _edit_score(pred_segs, gt_segs):
    # Also defined for empty lists, which happens after background removal
    longest = max(len(pred_segs), len(gt_segs))
    if longest == 0:
        return 100.0
    distance = Levenshtein.distance([s.label for s in pred_segs], [s.label for s in gt_segs])
    return 100 * (1 - distance / longest)


def _iou(a, b):
    intersection = max(0, min(a.end, b.end) - max(a.start, b.start) + 1)
    union = a.length + b.length - intersection
    return intersection / union


def overlap_counts(pred_segs, gt_segs, threshold):
    """
    True positives, false positives and false negatives of `pred_segs`

    Predicted segments are processed in order. Each one is matched to the
    unmatched ground truth segment of the same class with the highest IoU
    (first one on ties). The match counts if the IoU is at least `threshold`,
    which consumes the ground truth segment.

    :return: ``(tp, fp, fn)``
    """
    matched = [False] * len(gt_segs)
    tp = fp = 0
    for pred in pred_segs:
        best_iou, best_index = 0.0, None
        for index, gt in enumerate(gt_segs):
            if not matched[index] and gt.label == pred.label:
                iou = _iou(pred, gt)
                if iou > best_iou:
                    best_iou, best_index = iou, index
        if best_index is not None and best_iou >= threshold:
            matched[best_index] = True
            tp += 1
        else:
            fp += 1
    fn = matched.count(False)
    return tp, fp, fn


def f1_from_counts(tp, fp, fn):
    """F1 in percent; 0 if precision and recall are both 0"""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100 * 2 * precision * recall / (precision + recall)


def overlap_f1(pred_segs, gt_segs, threshold):
    """
    Segmental F1 score in percent at IoU `threshold`

    :raise DimensionError: if either list is empty
    :raise DomainError: if `threshold` is not in ``(0, 1]``
    """
    if not pred_segs or not gt_segs:
        raise DimensionError('Segment lists must not be empty')
    if not 0 < threshold <= 1:
        raise DomainError(f'Overlap threshold must be in (0, 1]: {threshold}')
    return f1_from_counts(*overlap_counts(pred_segs, gt_segs, threshold))


def evaluate_set(pairs, background_labels=()):
    """
    Evaluate sequence of ``(pred_labels, gt_labels)`` pairs

    Frame accuracy is pooled over all frames. The edit score is averaged over
    videos. F1 is computed once from true/false positives and false negatives
    pooled over all videos. Segments with a class in `background_labels` are
    ignored by the edit score and F1 but not by frame accuracy.

    :return: :class:`EvalReport`
    :raise DimensionError: if any pair has different lengths or there are no
        pairs
    """
    pairs = list(pairs)
    if not pairs:
        raise DimensionError('Nothing to evaluate')
    background = frozenset(background_labels or ())
    correct = frames = 0
    edits = []
    counts = {threshold: [0, 0, 0] for threshold in OVERLAP_THRESHOLDS}
    for pred, gt in pairs:
        pred, gt = _check_pair(pred, gt)
        if pred.size == 0:
            raise DimensionError('Empty label sequence')
        correct += int(np.sum(pred == gt))
        frames += pred.size
        pred_segs = _without(labels_to_segments(pred), background)
        gt_segs = _without(labels_to_segments(gt), background)
        edits.append(_edit_score(pred_segs, gt_segs))
        for threshold, total in counts.items():
            for i, count in enumerate(overlap_counts(pred_segs, gt_segs, threshold)):
                total[i] += count
    f1 = {threshold: f1_from_counts(*total) for threshold, total in counts.items()}
    return EvalReport(
        acc=100 * correct / frames,
        edit=float(np.mean(edits)),
        f1_10=f1[0.10],
        f1_25=f1[0.25],
        f1_50=f1[0.50],
        n_videos=len(pairs),
        n_frames=frames,
    )


def evaluate_by_duration(pairs, edges, background_labels=()):
    """
    Evaluate videos grouped by their number of frames

    `edges` are ascending frame counts that separate the groups, e.g.
    ``(600, 900)`` gives the groups ``<600``, ``600-899`` and ``>=900``.
    Empty groups are omitted.

    :return: list of ``(group name, EvalReport)`` tuples
    """
    edges = sorted(int(edge) for edge in edges)
    groups = [[] for _ in range(len(edges) + 1)]
    for pred, gt in pairs:
        groups[int(np.searchsorted(edges, len(gt), side='right'))].append((pred, gt))
    bounds = [None] + edges + [None]
    reports = []
    for group, low, high in zip(groups, bounds[:-1], bounds[1:]):
        if group:
            if low is None:
                name = f'<{high}' if high is not None else 'all'
            elif high is None:
                name = f'>={low}'
            else:
                name = f'{low}-{high - 1}'
            reports.append((name, evaluate_set(group, background_labels)))
    return reports


def count_segments(labels):
    return len(labels_to_segments(labels))


def segment_surplus(pairs):
    """Mean number of predicted segments minus ground truth segments per video"""
    pairs = list(pairs)
    return float(np.mean([count_segments(pred) - count_segments(gt) for pred, gt in pairs]))


_TIMELINE_SYMBOLS = string.digits + string.ascii_letters


def segment_timeline(labels, width=80):
    """
    Compress `labels` into a strip of at most `width` characters

    Each character shows the most frequent class (as 0-9, a-z, A-Z) of the
    frames it covers.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return ''
    width = max(1, min(width, labels.size))
    chunks = np.array_split(labels, width)
    symbols = []
    for chunk in chunks:
        label = int(np.bincount(chunk).argmax())
        symbols.append(_TIMELINE_SYMBOLS[label] if label < len(_TIMELINE_SYMBOLS) else '?')
    return ''.join(symbols)
