import json

import numpy as np
import pytest
import scipy.stats

from deidaudit.names import (
    CatalogError,
    DIMENSIONS,
    FULL_NAME_PAIRS,
    load_catalog,
    polysemy_catalog,
    pool_groups,
    sample_full_name,
)
from deidaudit.rng import derive_key


def test_bundled_catalog_shape(catalog):
    assert len(catalog.sets) == 16
    one = catalog[1]
    assert (one.gender, one.race, one.popularity, one.decade) == (
        "male", "White", "top", "2000s",
    )
    for name in ("Jacob", "Ethan", "Tyler"):
        assert name in one.first_names
    for name in ("Smith", "Davis", "Brown"):
        assert name in one.last_names
    for name_set in catalog.sets.values():
        assert len(name_set.first_names) == 20
        assert len(name_set.last_names) == 20
        assert len(set(name_set.first_names)) == 20
        assert len(set(name_set.last_names)) == 20


def test_table_exemplars_present(catalog):
    exemplars = {
        2: ("Emily", "Emma", "Olivia"),
        3: ("Wade", "Ted", "Brien"),
        7: ("Cedric", "Marlon", "Ollie"),
        9: ("Zhi", "Nguyen", "Rajeev"),
        12: ("Celina", "Rebeca", "Luisa"),
        15: ("Jerry", "George", "Frank"),
    }
    for set_id, names in exemplars.items():
        for name in names:
            assert name in catalog[set_id].first_names, (set_id, name)
    assert "Booker" in catalog[8].last_names
    assert "Ngo" in catalog[10].last_names
    assert "Ceja" in catalog[11].last_names


def _catalog_json(catalog):
    return [
        {
            "set_id": s.set_id,
            "gender": s.gender,
            "race": s.race,
            "popularity": s.popularity,
            "decade": s.decade,
            "first_names": list(s.first_names),
            "last_names": list(s.last_names),
        }
        for s in catalog.sets.values()
    ]


def test_load_catalog_rejects_short_list(catalog, tmp_path):
    data = _catalog_json(catalog)
    data[4]["first_names"] = data[4]["first_names"][:19]
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CatalogError, match=r"set 5.*19"):
        load_catalog(path)


def test_load_catalog_rejects_duplicates(catalog, tmp_path):
    data = _catalog_json(catalog)
    data[0]["first_names"][1] = data[0]["first_names"][0]
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CatalogError, match="duplicates"):
        load_catalog(path)


def test_load_catalog_rejects_wrong_profile(catalog, tmp_path):
    data = _catalog_json(catalog)
    data[0]["gender"] = "female"
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CatalogError, match="set 1"):
        load_catalog(path)


def test_load_catalog_rejects_stratum_mismatch(catalog, tmp_path):
    data = _catalog_json(catalog)
    assert data[1]["set_id"] == 2
    data[1]["last_names"] = list(catalog[7].last_names)
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CatalogError, match="last_names differ"):
        load_catalog(path)


def test_load_catalog_empty_file(tmp_path):
    path = tmp_path / "cat.json"
    path.write_text("")
    with pytest.raises(CatalogError, match="not valid JSON"):
        load_catalog(path)


def test_sample_determinism(catalog):
    key = derive_key(7, "corpus", 1, 1, 0, 1)
    assert sample_full_name(catalog, 1, key) == sample_full_name(catalog, 1, key)


def test_sample_unknown_set(catalog):
    with pytest.raises(KeyError, match="99"):
        sample_full_name(catalog, 99, 1)


def test_sample_uniformity(catalog):
    """Chi-square goodness of fit over the 400-cell pair histogram."""
    n = 100_000
    name_set = catalog[1]
    fi = {name: i for i, name in enumerate(name_set.first_names)}
    li = {name: i for i, name in enumerate(name_set.last_names)}
    counts = np.zeros(FULL_NAME_PAIRS)
    for i in range(n):
        full = sample_full_name(catalog, 1, derive_key(123, i))
        counts[fi[full.first] * 20 + li[full.last]] += 1
    expected = n / FULL_NAME_PAIRS
    sigma = np.sqrt(n * (1 / FULL_NAME_PAIRS) * (1 - 1 / FULL_NAME_PAIRS))
    assert np.all(np.abs(counts - expected) <= 5 * sigma)
    _, p = scipy.stats.chisquare(counts)
    assert p > 0.01


def test_pool_groups_race(catalog):
    pools = pool_groups(catalog, "race")
    assert pools == {
        "White": [3, 4], "Black": [7, 8], "Asian": [9, 10], "Hispanic": [11, 12],
    }


def test_pool_groups_gender_partition(catalog):
    pools = pool_groups(catalog, "gender")
    male, female = set(pools["male"]), set(pools["female"])
    assert male | female == set(range(1, 17))
    assert male & female == set()


def test_pool_groups_popularity_white_only(catalog):
    pools = pool_groups(catalog, "popularity")
    for set_ids in pools.values():
        for set_id in set_ids:
            assert catalog[set_id].race == "White"


def test_pooling_partition_per_dimension(catalog):
    """Each set id appears in exactly one group of a dimension's pooling."""
    for dim in DIMENSIONS:
        pools = pool_groups(catalog, dim)
        seen = [set_id for ids in pools.values() for set_id in ids]
        assert len(seen) == len(set(seen))


def test_pool_groups_unknown_dimension(catalog):
    with pytest.raises(ValueError, match="unknown dimension"):
        pool_groups(catalog, "age")


def test_polysemy_sets():
    sets = {s.race: s for s in polysemy_catalog()}
    assert "Cleveland" in sets["Black"].first_names
    assert set(sets["White"].first_names) == {"Sydney", "Faith", "Forest", "Cliff", "June"}
    white, black, asian = (
        set(sets["White"].first_names),
        set(sets["Black"].first_names),
        set(sets["Asian"].first_names),
    )
    assert white & black == set()
    assert white & asian == set()
    assert black & asian == set()
    assert len(sets["Asian"].first_names) == 6


def test_polysemy_five_name_mode():
    sets = {s.race: s for s in polysemy_catalog(asian_five=True)}
    assert len(sets["Asian"].first_names) == 5
    assert len(sets["White"].first_names) == 5
    assert len(sets["Black"].first_names) == 5
