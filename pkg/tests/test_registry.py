import math

import numpy as np
import pytest

from kobdual.factory import EtaSearchConfig, PolyBoundViolation, check_poly_bound
from kobdual.registry import cubic_voting, get_entry, get_function, registry, tie_probability
from kobdual.tables import default_cache_dir, table_for
from kobdual.verify import CHECKS, Context, BUDGETS, _clean, branch_expectation_bruteforce, run_all


def test_registry_contents():
    names = [e.name for e in registry()]
    assert len(names) >= 5
    assert {"constant-half", "linear13", "classical", "cubic-voting", "identity", "clamp2p"} <= set(names)


@pytest.mark.parametrize("entry", [e for e in registry() if not e.negative], ids=lambda e: e.name)
def test_positive_entries_certify(entry):
    entry.target.validate()
    assert check_poly_bound(entry.target).exponent == entry.expected_exponent


def test_negative_entry_rejected():
    with pytest.raises(PolyBoundViolation):
        check_poly_bound(get_function("clamp2p"))


def test_classical_fixation_endpoints():
    f = get_function("classical")
    assert f(0.0) == 0.0 and f(1.0) == 1.0


def test_cubic_voting_forcing():
    f = cubic_voting(0.1, 1.0)
    q = tie_probability(0.1, 1.0)
    assert q == pytest.approx(0.2 / 3.3)
    u = 0.3
    assert f(u) == pytest.approx(u**3 + 3 * u**2 * (1 - u) + q * 3 * u * (1 - u) ** 2)
    f.validate()


def test_unknown_entry():
    with pytest.raises(KeyError):
        get_entry("nope")


def test_cache_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("KOBDUAL_CACHE", str(tmp_path))
    assert default_cache_dir() == tmp_path
    monkeypatch.setenv("KOBDUAL_CACHE", "")
    assert default_cache_dir() is None


def test_table_cache_round_trip(tmp_path):
    cfg = EtaSearchConfig(levels=5)
    built = table_for("identity", cfg, cache_dir=tmp_path)
    files = list(tmp_path.glob("identity-*.kob"))
    assert len(files) == 1
    from kobdual import tables

    tables._MEMO.clear()
    loaded = table_for("identity", cfg, cache_dir=tmp_path)
    assert loaded.digest() == built.digest()


def test_clean_makes_json_safe():
    out = _clean({"a": np.float64(1.5), "b": [np.int64(2), math.inf], "c": np.array([1.0, 2.0])})
    assert out["a"] == 1.5 and isinstance(out["b"][0], int)
    assert isinstance(out["b"][1], str)
    assert out["c"] == [1.0, 2.0]


def test_bruteforce_oracle_hand_case():
    # one lineage replaced by one parent that copies itself: H is unchanged
    v = np.array([0.2, 0.9])
    assert branch_expectation_bruteforce(v, 1, np.array([0, 1]), 0.3) == pytest.approx(0.7 * 0.2 + 0.3 * 0.9)
    # a parent that always votes A
    assert branch_expectation_bruteforce(v, 1, np.array([1, 1]), 0.3) == pytest.approx(0.9)


def test_check_ids_cover_all_criteria():
    assert list(CHECKS) == ["R", "1", "2", "3", "4", "5a", "5b", "5c", "6", "7", "8", "9", "10", "11"]


def test_run_all_subset_is_deterministic(table_cache):
    a = run_all(3, "smoke", cache_dir=table_cache, only=["R", "3", "6", "7"])
    b = run_all(3, "smoke", threads=4, cache_dir=table_cache, only=["R", "3", "6", "7"])
    assert a == b and a["passed"]
    assert "wall_clock_seconds" not in str(a)


def test_budgets():
    assert BUDGETS["desk"].factory_reps == 10**5 and BUDGETS["desk"].dual_reps == 10**5
    assert BUDGETS["desk"].ac_reps == 10**5 and BUDGETS["desk"].wf_reps == 10**4
    assert Context(1, BUDGETS["smoke"]).rng(1, 2).stream_id == (1, 2)
