import csv
import io
import math

import numpy as np
import pytest

from cachecran.harness import (
    CSV_COLUMNS, SolverSettings, SweepResult, SweepSpec, emit_results, load_results, preset, run_drop,
    run_sweep, solve_scenario, spec_to_dict,
)
from cachecran.model import check_feasibility
from cachecran.scenario import derive_seed, generate_scenario

from conftest import tiny_config


def small_spec(**kw):
    base = dict(swept_param="fronthaul_capacity", values=(30e6, 60e6), template=tiny_config(),
                num_drops=2, seed=5)
    base.update(kw)
    return SweepSpec(**base)


@pytest.fixture(scope="module")
def small_result():
    return run_sweep(small_spec())


def test_records_cover_the_grid_in_order(small_result):
    recs = small_result.records
    assert len(recs) == 2 * 3 * 2
    assert [(r.value, r.strategy, r.drop) for r in recs[:3]] == [
        (30e6, "most_popular", 0), (30e6, "most_popular", 1), (30e6, "probabilistic", 0)]
    assert {r.seed for r in recs} == {derive_seed(5, 0), derive_seed(5, 1)}


def test_record_power_is_checked_total(small_result):
    r = small_result.records[0]
    sc = generate_scenario(tiny_config(fronthaul=r.value), r.seed, r.strategy)
    out = solve_scenario(sc)
    assert r.feasible == out.recovery.feasible
    if r.feasible:
        rep = check_feasibility(out.recovery.allocation, sc.content, sc.channel, sc.config)
        assert r.power == rep.total_power
        assert r.dual_bound <= r.power * (1 + 1e-9)
        assert r.gap == pytest.approx((r.power - r.dual_bound) / r.power)


def test_strategies_see_the_same_drop(small_result):
    for drop in range(2):
        seeds = {r.seed for r in small_result.records if r.drop == drop}
        assert len(seeds) == 1
    sc = generate_scenario(tiny_config(), derive_seed(5, 0), "none")
    assert sc.content.cache.sum() == 0


def test_summary_normalises_by_rrh_count(small_result):
    rows = small_result.summary()
    assert len(rows) == 6
    row = rows[0]
    p = [r.power for r in small_result.point(row.strategy, row.value) if r.feasible]
    assert row.mean_power_W == pytest.approx(np.mean(p) / 2, rel=1e-14)
    if len(p) > 1:
        assert row.stderr_W == pytest.approx(np.std(np.array(p) / 2, ddof=1) / math.sqrt(len(p)), rel=1e-10)
    paired = small_result.paired_powers("none")
    assert paired.shape == (2, 2)


def test_csv_layout(small_result):
    text = emit_results(small_result, "csv").decode()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 7
    assert rows[1][:3] == ["most_popular", "fronthaul_capacity", "30000000.0"]
    empty = emit_results(SweepResult(small_spec(), []), "csv").decode()
    assert empty == ",".join(CSV_COLUMNS) + "\n"
    with pytest.raises(ValueError):
        emit_results(small_result, "xml")


def test_structured_round_trip(small_result):
    data = emit_results(small_result, "structured")
    back = load_results(data)
    assert spec_to_dict(back.spec) == spec_to_dict(small_result.spec)
    assert back.records == small_result.records
    assert emit_results(back, "structured") == data
    with pytest.raises(ValueError):
        load_results('{"format": "nope"}')


def test_thread_count_does_not_change_output(small_result):
    par = run_sweep(small_spec(), threads=2)
    assert emit_results(par, "structured") == emit_results(small_result, "structured")
    assert emit_results(par, "csv") == emit_results(small_result, "csv")


def test_single_drop_has_no_stderr():
    res = run_sweep(small_spec(values=(60e6,), strategies=("none",), num_drops=1))
    row = res.summary()[0]
    assert row.n_drops == 1 and math.isnan(row.stderr_W)


@pytest.mark.parametrize("kw", [
    dict(values=()), dict(values=(60e6, 30e6)), dict(strategies=()), dict(strategies=("lru",)),
    dict(num_drops=0), dict(swept_param="bandwidth"),
    dict(swept_param="cache_size", values=(0, 1.5)), dict(swept_param="cache_size", values=(0, 4)),
])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        small_spec(**kw)


def test_full_scale_presets():
    a = preset("full", "fronthaul_capacity")
    assert (a.template.num_rrhs, a.template.num_users, a.template.num_subchannels) == (5, 10, 64)
    assert a.solver.mode == "greedy" and a.template.cache_size == 5
    b = preset("full", "cache_size")
    assert b.values[0] == 0 and b.template.fronthaul_capacity[0] == 80e6
    d = preset("desk", "cache_size", num_drops=3)
    assert d.num_drops == 3 and d.template.num_rrhs == 3
    with pytest.raises(ValueError):
        preset("lab", "cache_size")


def test_infeasible_drop_is_recorded():
    spec = small_spec(values=(5e6,), strategies=("none",), num_drops=1)
    r = run_drop(0, "none", 5e6, spec)
    assert not r.feasible and r.power is None and r.reason
