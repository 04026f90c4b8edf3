"""Demographic name catalog: 16 name sets, dimension poolings, polysemy sets.

The bundled catalog fills the fixed 16-set demographic grid (gender, race,
popularity, decade per set) with exemplar names plus synthetic fillers up
to 20 first and 20 last names per set. Users can supply their own catalog
file with the same schema to audit against real name lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .rng import bounded_index

GENDER_GROUPS = ("male", "female")
RACE_GROUPS = ("White", "Black", "Asian", "Hispanic")
POPULARITY_GROUPS = ("top", "medium", "bottom")
DECADE_GROUPS = ("2000s", "1970s", "1940s")

NAMES_PER_LIST = 20
FULL_NAME_PAIRS = NAMES_PER_LIST * NAMES_PER_LIST


class CatalogError(ValueError):
    """Raised when a name-set file violates the catalog schema."""


@dataclass(frozen=True)
class DemographicDimension:
    kind: str
    groups: tuple[str, ...]


DIMENSIONS = {
    "gender": DemographicDimension("gender", GENDER_GROUPS),
    "race": DemographicDimension("race", RACE_GROUPS),
    "popularity": DemographicDimension("popularity", POPULARITY_GROUPS),
    "decade": DemographicDimension("decade", DECADE_GROUPS),
}

# (gender, race, popularity, decade) per set id; the fixed design of the
# 16-set grid. A catalog file must match this row for each set_id.
SET_PROFILES = {
    1: ("male", "White", "top", "2000s"),
    2: ("female", "White", "top", "2000s"),
    3: ("male", "White", "medium", "2000s"),
    4: ("female", "White", "medium", "2000s"),
    5: ("male", "White", "bottom", "2000s"),
    6: ("female", "White", "bottom", "2000s"),
    7: ("male", "Black", "medium", "2000s"),
    8: ("female", "Black", "medium", "2000s"),
    9: ("male", "Asian", "medium", "2000s"),
    10: ("female", "Asian", "medium", "2000s"),
    11: ("male", "Hispanic", "medium", "2000s"),
    12: ("female", "Hispanic", "medium", "2000s"),
    13: ("male", "White", "top", "1970s"),
    14: ("female", "White", "top", "1970s"),
    15: ("male", "White", "top", "1940s"),
    16: ("female", "White", "top", "1940s"),
}

# Which sets each group pools, per dimension. Gender covers all 16 sets;
# the other dimensions control for confounds by comparing only the subset
# of sets where the remaining attributes are held fixed.
POOLINGS: dict[str, dict[str, tuple[int, ...]]] = {
    "gender": {
        "male": (1, 3, 5, 7, 9, 11, 13, 15),
        "female": (2, 4, 6, 8, 10, 12, 14, 16),
    },
    "race": {
        "White": (3, 4),
        "Black": (7, 8),
        "Asian": (9, 10),
        "Hispanic": (11, 12),
    },
    "popularity": {
        "top": (1, 2),
        "medium": (3, 4),
        "bottom": (5, 6),
    },
    "decade": {
        "2000s": (1, 2),
        "1970s": (13, 14),
        "1940s": (15, 16),
    },
}

# Pseudo set ids used when populating notes from polysemy first-name sets.
POLYSEMY_SET_IDS = {"White": 101, "Black": 102, "Asian": 103}

# Source of last names for polysemy notes: the medium-popularity set pair
# of the matching race (pairs share last names, so one id suffices).
POLYSEMY_LAST_NAME_SETS = {"White": 3, "Black": 7, "Asian": 9}

_POLYSEMY_FIRST_NAMES = {
    "White": ("Sydney", "Faith", "Forest", "Cliff", "June"),
    "Black": ("Quincy", "Cleveland", "Kenya", "Prince", "Ivory"),
    "Asian": ("Asian", "Thai", "King", "Long", "Young", "Can"),
}


@dataclass(frozen=True)
class NameSet:
    set_id: int
    gender: str
    race: str
    popularity: str
    decade: str
    first_names: tuple[str, ...]
    last_names: tuple[str, ...]


@dataclass(frozen=True)
class FullName:
    first: str
    last: str
    source_set: int

    def __str__(self) -> str:
        return f"{self.first} {self.last}"


@dataclass(frozen=True)
class PolysemySet:
    race: str
    first_names: tuple[str, ...]


@dataclass(frozen=True)
class Catalog:
    sets: dict[int, NameSet]

    def __getitem__(self, set_id: int) -> NameSet:
        try:
            return self.sets[set_id]
        except KeyError:
            raise KeyError(f"unknown set_id {set_id}") from None

    def all_names(self, exclude_sets: tuple[int, ...] = ()) -> set[str]:
        """Union of first and last names, optionally excluding some sets."""
        names: set[str] = set()
        for set_id, name_set in self.sets.items():
            if set_id in exclude_sets:
                continue
            names.update(name_set.first_names)
            names.update(name_set.last_names)
        return names


def _check_name_list(set_id: int, field: str, value: object) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise CatalogError(f"set {set_id}: {field} must be a list of strings")
    if len(value) != NAMES_PER_LIST:
        raise CatalogError(
            f"set {set_id}: {field} has {len(value)} names, expected {NAMES_PER_LIST}"
        )
    if any(not v for v in value):
        raise CatalogError(f"set {set_id}: {field} contains an empty name")
    if len(set(value)) != len(value):
        dupes = sorted({v for v in value if value.count(v) > 1})
        raise CatalogError(f"set {set_id}: {field} contains duplicates {dupes}")
    return tuple(value)


def load_catalog(path) -> Catalog:
    """Load and validate a name-set JSON file (see README for the schema)."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CatalogError(f"{path}: not valid JSON ({exc})") from exc
    return _build_catalog(raw)


def _build_catalog(raw: object) -> Catalog:
    if not isinstance(raw, list):
        raise CatalogError("catalog file must be a JSON array of name sets")
    sets: dict[int, NameSet] = {}
    for entry in raw:
        if not isinstance(entry, dict):
            raise CatalogError("each catalog entry must be an object")
        set_id = entry.get("set_id")
        if not isinstance(set_id, int) or set_id not in SET_PROFILES:
            raise CatalogError(f"set_id {set_id!r} is not in 1..16")
        if set_id in sets:
            raise CatalogError(f"set {set_id}: duplicate set_id")
        profile = SET_PROFILES[set_id]
        labels = tuple(entry.get(k) for k in ("gender", "race", "popularity", "decade"))
        if labels != profile:
            raise CatalogError(
                f"set {set_id}: demographic labels {labels} do not match the "
                f"required profile {profile}"
            )
        sets[set_id] = NameSet(
            set_id=set_id,
            gender=profile[0],
            race=profile[1],
            popularity=profile[2],
            decade=profile[3],
            first_names=_check_name_list(set_id, "first_names", entry.get("first_names")),
            last_names=_check_name_list(set_id, "last_names", entry.get("last_names")),
        )
    missing = sorted(set(SET_PROFILES) - set(sets))
    if missing:
        raise CatalogError(f"catalog is missing sets {missing}")
    # Sets in the same (race, popularity, decade) stratum share last names.
    by_stratum: dict[tuple[str, str, str], list[NameSet]] = {}
    for name_set in sets.values():
        key = (name_set.race, name_set.popularity, name_set.decade)
        by_stratum.setdefault(key, []).append(name_set)
    for stratum, members in by_stratum.items():
        reference = sorted(members[0].last_names)
        for member in members[1:]:
            if sorted(member.last_names) != reference:
                raise CatalogError(
                    f"set {member.set_id}: last_names differ from set "
                    f"{members[0].set_id} in the same stratum {stratum}"
                )
    return Catalog(sets=sets)


def default_catalog() -> Catalog:
    """The bundled catalog (exemplar names plus synthetic fillers)."""
    data = resources.files("deidaudit.data").joinpath("catalog.json").read_text("utf-8")
    return _build_catalog(json.loads(data))


def sample_full_name(catalog: Catalog, set_id: int, rng_key: int) -> FullName:
    """Uniformly pick one of the 400 first-last pairs of a set.

    Pure in (catalog, set_id, rng_key): the same key always yields the same
    pair, independent of call order.
    """
    name_set = catalog[set_id]
    idx = bounded_index(rng_key, FULL_NAME_PAIRS)
    first_idx, last_idx = divmod(idx, NAMES_PER_LIST)
    return FullName(
        first=name_set.first_names[first_idx],
        last=name_set.last_names[last_idx],
        source_set=set_id,
    )


def pool_groups(catalog: Catalog, dimension: str) -> dict[str, list[int]]:
    """Group label -> pooled set ids for one demographic dimension."""
    if dimension not in POOLINGS:
        raise ValueError(f"unknown dimension {dimension!r}")
    return {group: list(ids) for group, ids in POOLINGS[dimension].items()}


def polysemy_catalog(asian_five: bool = False) -> list[PolysemySet]:
    """The three polysemy first-name sets (White, Black, Asian).

    The Asian list carries six names; ``asian_five=True`` keeps only the
    first five so all three sets have equal size.
    """
    out = []
    for race in ("White", "Black", "Asian"):
        firsts = _POLYSEMY_FIRST_NAMES[race]
        if race == "Asian" and asian_five:
            firsts = firsts[:5]
        out.append(PolysemySet(race=race, first_names=firsts))
    return out
