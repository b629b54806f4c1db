"""Error analyses over scored outcomes: name length, ambiguity, extremes.

Cross-system numbers weight each masker equally: rates are computed per
masker first, then averaged.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

from .corpus import AssociatedName
from .maskers import MaskOutcome

logger = logging.getLogger(__name__)

GROUP_ABBREV = {
    "Asian and Pacific Islander": "A",
    "Black": "B",
    "Hispanic": "H",
    "Indigenous": "I",
    "Multi-race": "M",
    "White": "W",
}

GENDER_ABBREV = {"F": "F", "M": "M", "Other": "O"}


@dataclass(frozen=True)
class AmbiguityLexicon:
    """Lowercase word forms that have non-person senses."""

    words: frozenset[str]

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self.words

    def __len__(self) -> int:
        return len(self.words)


def load_lexicon(source: Union[str, Path, IO, Iterable[str]]) -> AmbiguityLexicon:
    """One word per line, UTF-8; blank lines ignored."""
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        lines = data.splitlines()
    else:
        lines = list(source)
    words = frozenset(line.strip().casefold() for line in lines if line.strip())
    if not words:
        raise ValueError("ambiguity lexicon is empty")
    return AmbiguityLexicon(words)


def given_name(full: str) -> str:
    return full.split()[0] if full.split() else full


def _mean_over_systems(
    cells: dict[tuple, dict[str, tuple[int, int]]]
) -> dict[tuple, float]:
    # cells: key -> masker -> (misses, total); average the per-masker rates.
    out = {}
    for key, per_masker in cells.items():
        rates = [misses / total for misses, total in per_masker.values() if total]
        if rates:
            out[key] = sum(rates) / len(rates)
    return out


def _tally(outcomes: Iterable[MaskOutcome], key_fn) -> dict[tuple, dict[str, tuple[int, int]]]:
    cells: dict[tuple, dict[str, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    for o in outcomes:
        counts = cells[key_fn(o)][o.masker_id]
        counts[0] += 0 if o.detected else 1
        counts[1] += 1
    return {
        key: {m: (c[0], c[1]) for m, c in per_masker.items()}
        for key, per_masker in cells.items()
    }


def fnr_by_length(outcomes: Sequence[MaskOutcome]) -> dict[tuple[int, str], float]:
    """(given-name length, group) -> mean FNR across systems.

    Lengths are counted in Unicode scalar values; (length, group) cells with
    no names are simply absent.
    """
    cells = _tally(outcomes, lambda o: (len(given_name(o.name)), o.group))
    return _mean_over_systems(cells)


@dataclass(frozen=True)
class AmbiguitySplit:
    ambiguous: frozenset[str]
    unambiguous: frozenset[str]


def ambiguity_split(
    names: Iterable[Union[AssociatedName, str]], lexicon: AmbiguityLexicon
) -> AmbiguitySplit:
    """Partition names by whether the given name has a non-person sense.

    Full names are looked up by their given (first) token only.  The
    partition is over the full surface forms and is exhaustive and disjoint.
    """
    ambiguous, unambiguous = set(), set()
    for entry in names:
        surface = entry.name if isinstance(entry, AssociatedName) else entry
        (ambiguous if given_name(surface) in lexicon else unambiguous).add(surface)
    return AmbiguitySplit(frozenset(ambiguous), frozenset(unambiguous))


@dataclass(frozen=True)
class AmbiguityTable:
    """FNR by (ambiguity, group) plus the two marginal rates."""

    cells: dict[tuple[str, str], float]
    marginals: dict[str, float]


def fnr_by_ambiguity(
    outcomes: Sequence[MaskOutcome], split: AmbiguitySplit
) -> AmbiguityTable:
    def bucket(o: MaskOutcome) -> str:
        return "ambiguous" if o.name in split.ambiguous else "unambiguous"

    cells = _mean_over_systems(_tally(outcomes, lambda o: (bucket(o), o.group)))
    marginals = {
        key[0]: rate
        for key, rate in _mean_over_systems(_tally(outcomes, lambda o: (bucket(o),))).items()
    }
    return AmbiguityTable(cells=cells, marginals=marginals)


@dataclass(frozen=True)
class NameRate:
    """Mean FNR for one name, averaged across systems."""

    name: str
    group: str
    gender: str
    mean_fnr: float

    @property
    def annotation(self) -> str:
        group = GROUP_ABBREV.get(self.group, "?")
        gender = GENDER_ABBREV.get(self.gender)
        tag = f"{group}/{gender}" if gender else group
        return f"{self.name} ({tag})"


def extreme_names(
    outcomes: Sequence[MaskOutcome], k: int
) -> tuple[list[NameRate], list[NameRate]]:
    """(lowest-FNR k names, highest-FNR k names), FNR ties broken by name.

    The highest list is ordered worst-first.  If k exceeds the number of
    names, both lists contain all names (flagged with a warning).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cells = _mean_over_systems(_tally(outcomes, lambda o: (o.name,)))
    meta = {o.name: (o.group, o.gender) for o in outcomes}
    entries = [
        NameRate(name=key[0], group=meta[key[0]][0], gender=meta[key[0]][1], mean_fnr=rate)
        for key, rate in cells.items()
    ]
    if k > len(entries):
        logger.warning("k=%d exceeds the %d distinct names; returning all", k, len(entries))
        k = len(entries)
    # One ascending sort: lowest = head, highest = tail (keeps the two lists
    # disjoint whenever 2k <= name count, even under heavy ties).
    entries.sort(key=lambda e: (e.mean_fnr, e.name))
    lowest = entries[:k]
    highest = list(reversed(entries[-k:]))
    return lowest, highest
