"""Condition and annotation-label vocabularies.

Conditions are publication year plus keyword headings. Year ids occupy a
contiguous block [0, year_count) covering every year from the earliest
observed one; keyword ids follow. Keywords are kept when they occur in at
least ``min_count`` distinct documents. Annotation labels (POS, dependency,
entity) get their own small vocabularies with id 0 reserved for "no label",
used for special tokens and unseen labels.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .errors import DataError

NO_LABEL = "<none>"


@dataclass(frozen=True)
class ConditionVocab:
    keyword_ids: dict[str, int]  # keyword -> id in [year_count, total)
    year_base: int
    year_count: int

    @property
    def total(self) -> int:
        return self.year_count + len(self.keyword_ids)

    def year_id(self, year: int) -> int:
        if not self.year_base <= year < self.year_base + self.year_count:
            hi = self.year_base + self.year_count - 1
            raise DataError(f"year {year} outside vocabulary range [{self.year_base}, {hi}]")
        return year - self.year_base

    def lookup(self, year: int, keywords: Iterable[str]) -> list[int]:
        """Condition ids: year first, then in-vocabulary keywords in input
        order. Out-of-vocabulary keywords are dropped; duplicates collapse."""
        ids = [self.year_id(year)]
        seen = set()
        for kw in keywords:
            kid = self.keyword_ids.get(kw)
            if kid is not None and kid not in seen:
                seen.add(kid)
                ids.append(kid)
        return ids


def build_condition_vocab(records, min_count: int, max_year: int | None = None) -> ConditionVocab:
    """Document-frequency count over keywords, year range from observation.

    ``max_year`` extends the year block upward (e.g. to cover a held-out
    split); the base is always the earliest observed year.
    """
    df: Counter = Counter()
    years = []
    for rec in records:
        years.append(rec.year)
        df.update(set(rec.keywords))
    if not years:
        raise DataError("cannot build a condition vocabulary from zero records")
    base = min(years)
    top = max(max(years), max_year if max_year is not None else base)
    year_count = top - base + 1
    kept = sorted(kw for kw, c in df.items() if c >= min_count)
    keyword_ids = {kw: year_count + i for i, kw in enumerate(kept)}
    return ConditionVocab(keyword_ids, base, year_count)


def save_condition_vocab(vocab: ConditionVocab, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i in range(vocab.year_count):
            f.write(f"year\t{vocab.year_base + i}\t{i}\n")
        for kw, kid in sorted(vocab.keyword_ids.items(), key=lambda kv: kv[1]):
            f.write(f"keyword\t{kw}\t{kid}\n")


def load_condition_vocab(path) -> ConditionVocab:
    try:
        with open(path, encoding="utf-8") as f:
            rows = [line.split("\t") for line in f.read().splitlines() if line]
    except OSError as e:
        raise DataError(f"cannot read condition vocabulary {path}: {e}") from None
    years = {}
    keyword_ids = {}
    for row in rows:
        if len(row) != 3 or row[0] not in ("year", "keyword"):
            raise DataError(f"malformed condition vocabulary row {row!r} in {path}")
        kind, key, cid = row
        if kind == "year":
            years[int(key)] = int(cid)
        else:
            keyword_ids[key] = int(cid)
    if not years:
        raise DataError(f"condition vocabulary {path} has no year entries")
    base = min(years)
    count = len(years)
    expected = {base + i: i for i in range(count)}
    if years != expected:
        raise DataError(f"year block in {path} is not contiguous from {base}")
    return ConditionVocab(keyword_ids, base, count)


@dataclass(frozen=True)
class LabelVocab:
    kind: str
    ids: dict[str, int]  # includes NO_LABEL -> 0

    @property
    def size(self) -> int:
        return len(self.ids)

    def id(self, label: str) -> int:
        # Unseen labels collapse onto the no-label id.
        return self.ids.get(label, 0)


def _build_label_vocab(kind: str, labels: Iterable[str]) -> LabelVocab:
    distinct = sorted(set(labels) - {NO_LABEL})
    ids = {NO_LABEL: 0}
    ids.update({lab: i + 1 for i, lab in enumerate(distinct)})
    return LabelVocab(kind, ids)


@dataclass(frozen=True)
class LabelVocabs:
    pos: LabelVocab
    dep: LabelVocab
    ent: LabelVocab


def build_label_vocabs(records) -> LabelVocabs:
    """Collect every POS, dependency, and entity label in the records
    (title tokens included)."""
    pos, dep, ent = set(), set(), set()
    for rec in records:
        for tok in rec.all_tokens():
            pos.add(tok.pos)
            dep.add(tok.dep)
            ent.add(tok.ent)
    return LabelVocabs(
        _build_label_vocab("pos", pos),
        _build_label_vocab("dep", dep),
        _build_label_vocab("ent", ent),
    )


def save_label_vocabs(vocabs: LabelVocabs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lv in (vocabs.pos, vocabs.dep, vocabs.ent):
            for label, lid in sorted(lv.ids.items(), key=lambda kv: kv[1]):
                f.write(f"{lv.kind}\t{label}\t{lid}\n")


def load_label_vocabs(path) -> LabelVocabs:
    try:
        with open(path, encoding="utf-8") as f:
            rows = [line.split("\t") for line in f.read().splitlines() if line]
    except OSError as e:
        raise DataError(f"cannot read label vocabulary {path}: {e}") from None
    tables: dict[str, dict[str, int]] = {"pos": {}, "dep": {}, "ent": {}}
    for row in rows:
        if len(row) != 3 or row[0] not in tables:
            raise DataError(f"malformed label vocabulary row {row!r} in {path}")
        kind, label, lid = row
        tables[kind][label] = int(lid)
    for kind, table in tables.items():
        if table.get(NO_LABEL) != 0:
            raise DataError(f"label vocabulary {path} lacks the {kind} no-label entry at id 0")
    return LabelVocabs(
        LabelVocab("pos", tables["pos"]),
        LabelVocab("dep", tables["dep"]),
        LabelVocab("ent", tables["ent"]),
    )
