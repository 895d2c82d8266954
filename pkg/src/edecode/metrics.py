"""POPE and CHAIR evaluation.

POPE scores yes/no object-existence answers with precision, recall, F1,
and accuracy ("yes" is the positive class). CHAIR scores generated
captions against ground-truth object sets: the share of captions with at
least one hallucinated object, the share of hallucinated mentions among
all object mentions, and per-image recall of ground-truth objects.

Object mentions are found with a deterministic longest-match scan over a
shipped surface-form dictionary covering the 80 MSCOCO classes with
synonyms and plurals; there is no learned extraction, so absolute CHAIR
values are a function of that dictionary.

All reported rates are percentages; a metric whose denominator is zero
is reported as None rather than 0.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import InputError

YES, NO, UNPARSEABLE = "yes", "no", "unparseable"

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class PopeRecord:
    question_id: str
    image: str
    question: str
    label: str  # gold: "yes" or "no"
    answer: str  # model output text

    def __post_init__(self):
        if self.label not in (YES, NO):
            raise InputError(f"gold label must be yes/no, got {self.label!r}")


@dataclass(frozen=True)
class CaptionRecord:
    image: str
    caption: str
    gt_objects: frozenset[str]


@dataclass
class PopeReport:
    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float | None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "counts": self.counts,
        }


@dataclass
class ChairReport:
    chair_s: float | None
    chair_i: float | None
    recall: float | None
    avg_length: float
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chair_s": self.chair_s,
            "chair_i": self.chair_i,
            "recall": self.recall,
            "avg_length": self.avg_length,
            "counts": self.counts,
        }


MetricReport = PopeReport | ChairReport


def parse_yes_no(answer: str) -> str:
    """Classify an answer by its leading word, case-insensitive.

    Punctuation and whitespace before the first word are ignored;
    anything whose first word is not yes/no is UNPARSEABLE.
    """
    match = _WORD_RE.search(answer.lower())
    if match is None:
        return UNPARSEABLE
    word = match.group(0)
    if word == YES:
        return YES
    if word == NO:
        return NO
    return UNPARSEABLE


def pope_eval(records: list[PopeRecord]) -> PopeReport:
    """Confusion-matrix metrics over parsed answers, as percentages.

    An unparseable answer counts as the wrong label (a miss on gold-yes,
    a false alarm on gold-no) so evasive generations are always penalized;
    the unparseable tally is reported alongside the matrix.
    """
    if not records:
        raise InputError("pope_eval needs at least one record")
    tp = fp = fn = tn = unparseable = 0
    for rec in records:
        pred = parse_yes_no(rec.answer)
        if pred == UNPARSEABLE:
            unparseable += 1
            pred = NO if rec.label == YES else YES
        if rec.label == YES:
            if pred == YES:
                tp += 1
            else:
                fn += 1
        else:
            if pred == YES:
                fp += 1
            else:
                tn += 1

    def rate(num: int, den: int) -> float | None:
        return 100.0 * num / den if den > 0 else None

    precision = rate(tp, tp + fp)
    recall = rate(tp, tp + fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    accuracy = rate(tp + tn, len(records))
    return PopeReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        counts={
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "tn": tn,
            "unparseable": unparseable,
            "total": len(records),
        },
    )


def load_synonyms(path: str | None = None) -> dict[str, str]:
    """Load the surface-form -> canonical-class dictionary.

    Defaults to the shipped MSCOCO-80 file; a JSON file with either the
    shipped layout or a flat {"surface": "canonical"} object may be
    substituted.
    """
    if path is None:
        text = resources.files("edecode").joinpath("data/coco_synonyms.json").read_text()
    else:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise InputError(f"cannot read synonym dictionary {path}: {exc}") from None
    data = json.loads(text)
    mapping = data.get("synonyms", data) if isinstance(data, dict) else None
    if not isinstance(mapping, dict) or not mapping:
        raise InputError("synonym dictionary must be a non-empty JSON object")
    return {str(k).lower(): str(v).lower() for k, v in mapping.items()}


def extract_object_mentions(caption: str, synonyms: dict[str, str]) -> list[str]:
    """All object mentions in order, one canonical name per mention.

    Longest-match scan over lowercased word sequences: at each position
    the longest surface form in the dictionary wins and its words are
    consumed, so "hot dog" never also yields "dog".
    """
    words = _WORD_RE.findall(caption.lower())
    phrases: dict[tuple[str, ...], str] = {
        tuple(surface.split()): canonical for surface, canonical in synonyms.items()
    }
    max_len = max((len(p) for p in phrases), default=1)
    mentions: list[str] = []
    i = 0
    while i < len(words):
        for n in range(min(max_len, len(words) - i), 0, -1):
            canonical = phrases.get(tuple(words[i : i + n]))
            if canonical is not None:
                mentions.append(canonical)
                i += n
                break
        else:
            i += 1
    return mentions


def extract_objects(caption: str, synonyms: dict[str, str]) -> set[str]:
    """Unique canonical objects mentioned in a caption."""
    return set(extract_object_mentions(caption, synonyms))


def chair_eval(
    records: list[CaptionRecord],
    synonyms: dict[str, str] | None = None,
    recall_aggregation: str = "macro",
) -> ChairReport:
    """Caption-hallucination metrics, as percentages.

    chair_s: share of captions mentioning at least one object absent from
    that image's ground truth. chair_i: hallucinated mentions over all
    object mentions (captions without mentions contribute to neither
    side). recall: ground-truth objects recovered, averaged per image
    (macro, the default) or pooled over all images (micro).
    """
    if not records:
        raise InputError("chair_eval needs at least one record")
    if recall_aggregation not in ("macro", "micro"):
        raise InputError(f"recall_aggregation must be macro or micro, got {recall_aggregation!r}")
    if synonyms is None:
        synonyms = load_synonyms()

    hallucinated_captions = 0
    total_mentions = 0
    hallucinated_mentions = 0
    per_image_recall: list[float] = []
    hit_total = 0
    gt_total = 0
    lengths = []

    for rec in records:
        gt = {o.lower() for o in rec.gt_objects}
        mentions = extract_object_mentions(rec.caption, synonyms)
        bad = [m for m in mentions if m not in gt]
        if bad:
            hallucinated_captions += 1
        total_mentions += len(mentions)
        hallucinated_mentions += len(bad)
        hits = len(set(mentions) & gt)
        hit_total += hits
        gt_total += len(gt)
        if gt:
            per_image_recall.append(hits / len(gt))
        lengths.append(len(rec.caption.split()))

    chair_s = 100.0 * hallucinated_captions / len(records)
    chair_i = 100.0 * hallucinated_mentions / total_mentions if total_mentions else None
    if recall_aggregation == "macro":
        recall = (
            100.0 * sum(per_image_recall) / len(per_image_recall) if per_image_recall else None
        )
    else:
        recall = 100.0 * hit_total / gt_total if gt_total else None
    return ChairReport(
        chair_s=chair_s,
        chair_i=chair_i,
        recall=recall,
        avg_length=sum(lengths) / len(lengths),
        counts={
            "captions": len(records),
            "hallucinated_captions": hallucinated_captions,
            "mentions": total_mentions,
            "hallucinated_mentions": hallucinated_mentions,
            "gt_objects": gt_total,
            "recalled_objects": hit_total,
        },
    )
