import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from masfs.errors import CycleError, MissingEntry, ParseError
from masfs.workload import (COST_HEADER, MasConfig, ModelProfile, QosLevel, RequestTrace, SaKind, TenantSpec,
                            assign_targets_zipf, cost_table_csv, generate_synthetic_cost_table, generate_trace,
                            isolated_latency, load_cost_table, load_tenants, load_trace, make_tenants,
                            pareto_cdf, pareto_from_uniform, request_deadline, sample_pareto, sample_zipf_rank,
                            tenants_csv, trace_csv, write_cost_table, write_tenants, write_trace, zipf_probabilities)


def chain(latency, name="m", model_id=0, bw=1.0):
    lat = np.asarray(latency, dtype=float)
    n = len(lat)
    deps = tuple(() if i == 0 else (i - 1,) for i in range(n))
    return ModelProfile(model_id, name, lat, lat.copy(), np.full_like(lat, bw), deps)


# -- cost tables -------------------------------------------------------------

def test_two_model_file(tmp_path):
    rows = [",".join(COST_HEADER)]
    for model, n in (("a", 2), ("b", 3)):
        for layer in range(n):
            for kind in ("ws", "rs"):
                dep = "" if layer == 0 else str(layer - 1)
                rows.append(f"{model},{layer},{kind},{10 + layer},{1.5},{2},{dep}")
    p = tmp_path / "c.csv"
    p.write_text("\n".join(rows) + "\n")
    profiles = load_cost_table(p, MasConfig.from_kinds("ws,rs".split(",")))
    assert [pr.name for pr in profiles] == ["a", "b"]
    assert [pr.n_layers for pr in profiles] == [2, 3]
    assert profiles[1].deps == ((), (0,), (1,))


def test_missing_row_names_entry(tmp_path):
    text = cost_table_csv([chain([[5, 7], [9, 4]])])
    lines = text.splitlines()
    dropped = [ln for ln in lines if not ln.startswith("m,1,rs")]
    p = tmp_path / "c.csv"
    p.write_text("\n".join(dropped) + "\n")
    with pytest.raises(MissingEntry) as ei:
        load_cost_table(p)
    assert (ei.value.model, ei.value.layer, ei.value.kind) == ("m", 1, "rs")


def test_cycle_rejected(tmp_path):
    rows = [",".join(COST_HEADER)]
    for layer, dep in ((0, "1"), (1, "0")):
        for kind in ("ws", "rs"):
            rows.append(f"x,{layer},{kind},5,1,1,{dep}")
    p = tmp_path / "c.csv"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(CycleError):
        load_cost_table(p)


def test_bad_header(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        load_cost_table(p)


def test_bandwidth_above_bound(tmp_path):
    p = tmp_path / "c.csv"
    write_cost_table([chain([[5, 7]], bw=20.0)], p)
    with pytest.raises(ParseError):
        load_cost_table(p, MasConfig.from_kinds(["ws", "rs"], 16))


def test_round_trip_synthetic(tmp_path):
    profiles = generate_synthetic_cost_table(3, 4)
    p = tmp_path / "c.csv"
    write_cost_table(profiles, p)
    assert load_cost_table(p) == profiles


def test_synthetic_deterministic_and_named():
    a = generate_synthetic_cost_table(1, 4)
    b = generate_synthetic_cost_table(1, 4)
    assert [p.name for p in a] == ["M0", "M1", "M2", "M3"]
    assert a == b


def test_synthetic_affinity_range():
    for p in generate_synthetic_cost_table(5, 6, affinity_spread=2.0):
        ratio = p.latency.max(axis=1) / p.latency.min(axis=1)
        assert np.all(ratio >= 1.0) and np.all(ratio <= 2.0 + 1e-9)


def test_synthetic_pairs_can_oversubscribe():
    profiles = generate_synthetic_cost_table(1, 4)
    bw = np.concatenate([p.bandwidth.max(axis=1) for p in profiles])
    top2 = np.sort(bw)[-2:]
    assert top2.sum() > 16.0


def test_synthetic_bad_args():
    with pytest.raises(ValueError):
        generate_synthetic_cost_table(0, 0)
    with pytest.raises(ValueError):
        generate_synthetic_cost_table(0, 2, affinity_spread=1.0)


# -- latency / deadlines -------------------------------------------------------

def test_isolated_latency_examples():
    assert isolated_latency(chain([[5, 7]])) == 5
    assert isolated_latency(chain([[5, 7], [9, 4], [6, 6]])) == 15
    assert isolated_latency(chain([[10, 10]] * 6)) == 60


def test_request_deadline_examples():
    assert request_deadline(0, 100.0, QosLevel.MEDIUM, 2.0) == 200
    assert request_deadline(0, 100.0, QosLevel.HIGH, 2.0) == 160
    assert request_deadline(0, 100.0, QosLevel.LOW, 2.0) == 240
    with pytest.raises(ValueError):
        request_deadline(0, 100.0, QosLevel.LOW, 0.5)


@given(st.integers(0, 10**6), st.floats(1.0, 1e5), st.floats(1.0, 4.0))
def test_deadline_monotone_in_qos(arrival, iso, factor):
    hi = request_deadline(arrival, iso, QosLevel.HIGH, factor)
    med = request_deadline(arrival, iso, QosLevel.MEDIUM, factor)
    lo = request_deadline(arrival, iso, QosLevel.LOW, factor)
    assert arrival < hi <= med <= lo


# -- sampling -------------------------------------------------------------------

def test_pareto_inverse_cdf_points():
    assert pareto_from_uniform(1.0, 2.5, 3.0) == 3.0
    assert pareto_from_uniform(0.25, 2.0, 1.0) == pytest.approx(2.0)


def test_pareto_mean_monte_carlo():
    x = sample_pareto(np.random.default_rng(0), 3.0, 1.0, size=10**6)
    assert abs(x.mean() - 1.5) / 1.5 < 0.01


def test_pareto_ks():
    x = sample_pareto(np.random.default_rng(1), 2.5, 4.0, size=10**5)
    res = stats.kstest(x, lambda v: pareto_cdf(v, 2.5, 4.0))
    assert res.pvalue > 0.01


def test_pareto_rejects_heavy_tail():
    with pytest.raises(ValueError):
        sample_pareto(np.random.default_rng(0), 1.0, 1.0)


def test_zipf_probabilities_and_frequencies():
    assert np.allclose(zipf_probabilities(3, 1.0), [6 / 11, 3 / 11, 2 / 11])
    r = sample_zipf_rank(np.random.default_rng(0), 3, 1.0, size=10**6)
    freq = np.bincount(r, minlength=4)[1:] / r.size
    assert np.all(np.abs(freq - [6 / 11, 3 / 11, 2 / 11]) < 0.01)


def test_zipf_degenerate_and_steep():
    rng = np.random.default_rng(0)
    assert set(sample_zipf_rank(rng, 1, 1.0, size=100).tolist()) == {1}
    r = sample_zipf_rank(rng, 3, 20.0, size=10**4)
    assert np.mean(r == 1) > 0.999


# -- traces and tenants -----------------------------------------------------------

def _setup(n_tenants=5):
    profiles = generate_synthetic_cost_table(2, 3)
    return profiles, make_tenants(n_tenants, len(profiles))


def test_trace_deterministic():
    profiles, tenants = _setup()
    a = generate_trace(11, tenants, profiles, 50_000, (2.5, 300.0))
    b = generate_trace(11, tenants, profiles, 50_000, (2.5, 300.0))
    assert trace_csv(a) == trace_csv(b)
    assert len(a) > 0
    assert all(x.arrival <= y.arrival for x, y in zip(a.requests, a.requests[1:]))
    assert all(r.deadline > r.arrival and r.arrival < 50_000 for r in a.requests)


def test_trace_empty_horizon():
    profiles, tenants = _setup()
    assert len(generate_trace(0, tenants, profiles, 0)) == 0


def test_trace_tenant_balance():
    profiles, _ = _setup()
    tenants = make_tenants(100, len(profiles))
    tr = generate_trace(4, tenants, profiles, 3_000_000, (2.5, 300.0))
    counts = np.bincount([r.tenant_id for r in tr.requests], minlength=100)
    expect = len(tr) / 100
    assert counts.min() > expect / 5 and counts.max() < expect * 5


def test_trace_unknown_model():
    profiles, _ = _setup()
    with pytest.raises(ValueError):
        generate_trace(0, [TenantSpec(0, 99)], profiles, 1000)


def test_trace_qos_respects_weights():
    profiles, _ = _setup()
    tenants = [TenantSpec(0, 0, qos_level_weights=(0.0, 0.0, 1.0))]
    tr = generate_trace(1, tenants, profiles, 20_000, (2.5, 300.0))
    assert {r.qos_level for r in tr.requests} == {QosLevel.HIGH}


def test_trace_csv_round_trip(tmp_path):
    profiles, tenants = _setup()
    tr = generate_trace(3, tenants, profiles, 20_000, (2.5, 300.0))
    p = tmp_path / "t.csv"
    write_trace(tr, p)
    back = load_trace(p, seed=3, horizon=tr.horizon)
    assert back == tr


def test_trace_unsorted_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("req_id,tenant_id,model_id,arrival,qos_level,deadline\n0,0,0,10,med,20\n1,0,0,5,med,20\n")
    with pytest.raises(ParseError):
        load_trace(p)


def test_tenants_round_trip(tmp_path):
    tenants = make_tenants(4, 2, 0.8, mk=(5, 2))
    p = tmp_path / "ten.csv"
    write_tenants(tenants, p)
    assert load_tenants(p) == tenants
    assert "tenant_id,model_id,target_sli,m,k" in tenants_csv(tenants)


@pytest.mark.parametrize("kwargs", [dict(target_sli=1.5), dict(mk=(3, 3)), dict(qos_level_weights=(0.5, 0.5, 0.5))])
def test_tenant_validation(kwargs):
    with pytest.raises(ValueError):
        TenantSpec(0, 0, **kwargs)


def test_zipf_targets():
    tenants = make_tenants(20_000, 1)
    out = assign_targets_zipf(0, tenants, [0.7, 0.8, 0.9])
    tg = np.array([t.target_sli for t in out])
    frac = [np.mean(tg == v) for v in (0.7, 0.8, 0.9)]
    assert np.allclose(frac, [6 / 11, 3 / 11, 2 / 11], atol=0.01)
    assert {t.target_sli for t in assign_targets_zipf(1, tenants[:10], [0.8])} == {0.8}
    assert assign_targets_zipf(5, tenants[:50], [0.7, 0.9]) == assign_targets_zipf(5, tenants[:50], [0.7, 0.9])


def test_mas_config():
    mas = MasConfig.from_kinds(["ws", "rs", "ws"])
    assert mas.n_sas == 3 and mas.total_bandwidth == 16.0
    assert list(mas.kind_index) == [SaKind.WS, SaKind.RS, SaKind.WS]
    with pytest.raises(ValueError):
        MasConfig.from_kinds([])
    with pytest.raises(ValueError):
        MasConfig.from_kinds(["ws"], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_trace_pure_function_of_seed(seed):
    profiles, tenants = _setup(3)
    a = generate_trace(seed, tenants, profiles, 5_000, (2.5, 200.0))
    b = generate_trace(seed, tenants, profiles, 5_000, (2.5, 200.0))
    assert a == b and isinstance(a, RequestTrace)
    assert math.isfinite(sum(r.deadline for r in a.requests))
