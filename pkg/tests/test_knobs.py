import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptdet.errors import DomainError, ParameterError
from adaptdet.knobs import (BranchConfig, KnobDomains, Tracker, enumerate_branches, is_base,
                            read_branches_csv, sample_branches, validate_branch,
                            write_branches_csv)

ALL = enumerate_branches()


def test_singleton_domains_give_one_branch():
    d = KnobDomains((1,), (224,), (1,), ("MedianFlow",), (1,))
    assert enumerate_branches(d) == [BranchConfig(1, 224, 1, Tracker.MEDIANFLOW, 1)]


def test_default_grid_size():
    assert len(ALL) == 7 * 23 * 7 * 4 * 3 == 13524
    assert KnobDomains().size == 13524


def test_enumeration_order_si_first():
    d = KnobDomains((1, 2), (224,), (1,), ("KCF",), (1,))
    assert [b.si for b in enumerate_branches(d)] == [1, 2]


def test_enumeration_is_lexicographic():
    keys = [b.sort_key() for b in ALL]
    assert keys == sorted(keys)


@pytest.mark.parametrize("field,value", [
    ("si_values", (1, 3)), ("shape_values", (230,)), ("nprop_values", (0,)),
    ("ds_values", (3,)), ("si_values", ()), ("nprop_values", (5, 1)),
])
def test_bad_domain_names_the_knob(field, value):
    d = KnobDomains(**{field: value})
    with pytest.raises(DomainError) as exc:
        enumerate_branches(d)
    assert exc.value.knob == field.removesuffix("_values")


def test_unknown_tracker_is_rejected():
    with pytest.raises(DomainError):
        KnobDomains(tracker_values=("Boosting",))


def test_sample_full_fraction_is_identity():
    assert sample_branches(ALL, 1.0) == ALL


def test_sample_twenty_percent_size():
    assert len(sample_branches(ALL, 0.2, seed=3)) == math.ceil(0.2 * 13524) == 2705


def test_sample_is_deterministic_and_keeps_base():
    a = sample_branches(ALL, 0.01, seed=7)
    assert a == sample_branches(ALL, 0.01, seed=7)
    assert any(is_base(b) for b in a)
    assert a != sample_branches(ALL, 0.01, seed=8)


def test_sample_preserves_input_order():
    s = sample_branches(ALL, 0.05, seed=1)
    pos = {b: i for i, b in enumerate(ALL)}
    assert [pos[b] for b in s] == sorted(pos[b] for b in s)


@pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
def test_sample_rejects_bad_fraction(frac):
    with pytest.raises(ParameterError):
        sample_branches(ALL, frac)


def test_sample_rejects_empty():
    with pytest.raises(ParameterError):
        sample_branches([], 0.5)


def test_validate_branch_reports():
    assert validate_branch(BranchConfig(8, 448, 50, Tracker.MEDIANFLOW, 2)) == []
    assert any("shape not multiple of 16" in m
               for m in validate_branch(BranchConfig(8, 230, 50, "MedianFlow", 2)))
    assert any("si not in preset set" in m
               for m in validate_branch(BranchConfig(3, 448, 50, "MedianFlow", 2)))
    many = validate_branch(BranchConfig(3, 608, 0, "KCF", 3))
    assert len(many) == 4


def test_branch_csv_and_domain_json_roundtrip(tmp_path):
    s = sample_branches(ALL, 0.01)
    write_branches_csv(s, tmp_path / "b.csv")
    assert read_branches_csv(tmp_path / "b.csv") == s
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "si,shape,nprop,tracker,ds"
    d = KnobDomains(nprop_values=(1, 10, 100))
    d.save(tmp_path / "d.json")
    assert KnobDomains.load(tmp_path / "d.json") == d


def test_tracker_parse_is_case_insensitive():
    assert Tracker.parse("denseflow") is Tracker.DENSEFLOW
    assert Tracker.parse("CSRT") is Tracker.CSRT


@settings(max_examples=40, deadline=None)
@given(st.floats(0.001, 1.0), st.integers(0, 10_000))
def test_sample_size_validity_and_membership(frac, seed):
    s = sample_branches(ALL, frac, seed)
    assert len(s) == max(1, math.ceil(frac * len(ALL) - 1e-9))
    assert all(validate_branch(b) == [] for b in s)
    assert any(is_base(b) for b in s)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5), st.integers(0, 1000))
def test_sample_is_monotone_in_fraction(f1, f2, seed):
    lo, hi = sorted((f1, f2))
    assert set(sample_branches(ALL, lo, seed)) <= set(sample_branches(ALL, hi, seed))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from((1, 2, 4, 8, 20, 50, 100)), min_size=1, max_size=7, unique=True),
       st.lists(st.sampled_from((1, 2, 4)), min_size=1, max_size=3, unique=True),
       st.lists(st.integers(1, 100), min_size=1, max_size=4, unique=True))
def test_enumeration_length_is_product(si, ds, nprop):
    d = KnobDomains(tuple(sorted(si)), (224, 576), tuple(sorted(nprop)),
                    ("MedianFlow", "CSRT"), tuple(sorted(ds)))
    out = enumerate_branches(d)
    assert len(out) == len(si) * 2 * len(nprop) * 2 * len(ds) == d.size
    assert len(set(out)) == len(out)
