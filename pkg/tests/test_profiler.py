import math
import random

import pytest

from adaptdet.errors import ParameterError
from adaptdet.knobs import BranchConfig, KnobDomains
from adaptdet.latency import GPU_LEVELS, ContentionVector
from adaptdet.profiler import (PROFILE_FIELDS, ProfileRecord, SamplingPlan, build_offline_log,
                               collect_profiles, read_profiles_csv, split_records,
                               write_profiles_csv)
from adaptdet.trace import ContentFeatures
from adaptdet.world import WorldModelConfig, world_true_latency

ONE = KnobDomains((8,), (576,), (100,), ("MedianFlow",), (1,))


def test_repetitions_identical_without_noise(tiny_plan):
    plan = SamplingPlan(**{**tiny_plan.__dict__, "repetitions": 3})
    recs = collect_profiles(plan, WorldModelConfig().noiseless())
    assert len(recs) == 3
    assert recs[0] == recs[1] == recs[2]


def test_record_count_for_twenty_percent():
    plan = SamplingPlan(branch_fraction=0.2)
    n = math.ceil(0.2 * 13524)
    assert len(plan.branches()) == n == 2705
    assert plan.expected_records() == n * 15 * 27
    small = SamplingPlan(branch_fraction=0.2, contention_levels=(ContentionVector(),),
                         n_obj_values=(4,), avg_size_values=(1e4,), movement_classes=("slow",))
    assert len(collect_profiles(small, WorldModelConfig())) == 2705


def test_gpu_sweep_log_is_increasing():
    levels = tuple(ContentionVector(0, 0.0, g) for g in GPU_LEVELS[1:])
    assert len(levels) == 11
    plan = SamplingPlan(branch_fraction=1.0, contention_levels=levels, n_obj_values=(4,),
                        avg_size_values=(1e4,), movement_classes=("medium",), domains=ONE)
    log = build_offline_log(collect_profiles(plan, WorldModelConfig().noiseless()))
    vals = [v for _, v in log.levels_for(BranchConfig(8, 576, 100, "MedianFlow", 1))]
    assert len(vals) == 11 and all(a < b for a, b in zip(vals, vals[1:]))


def test_records_match_world(world):
    plan = SamplingPlan(branch_fraction=0.002, seed=3)
    recs = collect_profiles(plan, world.noiseless())
    for r in recs[::97]:
        f = ContentFeatures(r.height, r.width, r.n_obj, r.avg_size, r.movement)
        assert (r.l_dnn, r.l_tracker) == pytest.approx(
            world_true_latency(world.noiseless(), r.branch, f, r.contention), rel=1e-12)
    assert all(r.l_dnn > 0 and r.l_tracker > 0 and 0 <= r.rel_accuracy <= 120 for r in recs)


def test_campaign_is_deterministic(world):
    plan = SamplingPlan(branch_fraction=0.003, seed=11)
    assert collect_profiles(plan, world) == collect_profiles(plan, world)
    other = collect_profiles(SamplingPlan(branch_fraction=0.003, seed=12), world)
    assert other != collect_profiles(plan, world)


@pytest.mark.parametrize("kw", [{"n_obj_values": ()}, {"contention_levels": ()},
                                {"branch_fraction": 0.0}, {"repetitions": 0},
                                {"movement_classes": ("warp",)}])
def test_bad_plans(kw):
    with pytest.raises(ParameterError):
        collect_profiles(SamplingPlan(**kw), WorldModelConfig())


def test_plan_json(tmp_path):
    p = SamplingPlan(branch_fraction=0.1, repetitions=2, movement_classes=("slow", 4.5))
    p.save(tmp_path / "p.json")
    assert SamplingPlan.load(tmp_path / "p.json") == p
    with pytest.raises(ParameterError):
        SamplingPlan.from_dict({"bogus": 1})


def test_split_examples():
    recs = list(range(10))
    tr, va = split_records(recs, 0.9, seed=1)
    assert (len(tr), len(va)) == (9, 1)
    assert split_records(recs, 0.9, seed=1) == (tr, va)
    assert sorted(tr + va) == recs and not set(tr) & set(va)
    with pytest.raises(ParameterError):
        split_records([1], 0.5)
    for frac in (0.0, 1.0):
        with pytest.raises(ParameterError):
            split_records(recs, frac)


def _rec(b, c, l_dnn, l_tr):
    return ProfileRecord(b, c, 720, 1280, 4, 1e4, 3.0, l_dnn, l_tr, 90.0)


def test_offline_log_means():
    b = BranchConfig(2, 576, 100, "KCF", 1)
    c = ContentionVector()
    one = build_offline_log([_rec(b, c, 100.0, 10.0)])
    assert one.entries == {(b, c): 60.0}
    two = build_offline_log([_rec(b, c, 100.0, 10.0), _rec(b, c, 140.0, 10.0)])
    assert two.entries[(b, c)] == 70.0
    c2 = ContentionVector(0, 0.0, 0.5)
    keys = build_offline_log([_rec(b, c, 100.0, 10.0), _rec(b, c2, 100.0, 10.0)]).entries
    assert set(keys) == {(b, c), (b, c2)}
    with pytest.raises(ParameterError):
        build_offline_log([])


def test_offline_log_permutation_invariant(world):
    recs = collect_profiles(SamplingPlan(branch_fraction=0.002), world)
    shuffled = recs[:]
    random.Random(4).shuffle(shuffled)
    assert build_offline_log(shuffled).entries == build_offline_log(recs).entries


def test_profile_csv_roundtrip(tmp_path, world):
    recs = collect_profiles(SamplingPlan(branch_fraction=0.001), world)
    write_profiles_csv(recs, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == ",".join(PROFILE_FIELDS)
    assert read_profiles_csv(tmp_path / "p.csv") == recs
    (tmp_path / "bad.csv").write_text("si,shape\n1,576\n")
    with pytest.raises(ParameterError):
        read_profiles_csv(tmp_path / "bad.csv")
