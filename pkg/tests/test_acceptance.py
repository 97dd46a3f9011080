"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""
import time

import numpy as np
import pytest

import toyenv
from gradcheck import check_actor, check_critic
from invariants import check_all, run_instance
from masfs.cli import EXIT_OK, main
from masfs.config import ExperimentConfig
from masfs.experiment import build_workload, run_once
from masfs.rl.encode import FeatureSpec, PolicyMode
from masfs.rl.nets import Actor, policy_mac_count
from masfs.schedulers import EdfH, OracleJob, brute_force_oracle, make_scheduler
from masfs.simcore import SimConfig, run_simulation
from masfs.sla import SlaState, current_sli, mk_firm_ok, record_outcome
from masfs.workload import MasConfig, ModelProfile, QosLevel, Request, RequestTrace, SaKind


def test_c1_simulator_invariants(verdict):
    t = time.time()
    bad = [seed for seed in range(1000) if not check_all(*run_instance(seed))]
    dt = time.time() - t
    verdict(1, not bad and dt < 300, f"1000 random traces, violations {len(bad)}, {dt:.0f}s (limit 300s)")


def _oracle_instance(rng):
    """Up to eight single-layer jobs on one SA, all released at time 0."""
    lats = rng.integers(1, 21, size=int(rng.integers(1, 9))).astype(float)
    total = float(lats.sum())
    jobs, profiles, reqs = [], [], []
    for j, lat in enumerate(lats):
        deadline = float(rng.integers(int(lat), int(1.2 * total) + 1))
        table = np.array([[lat, lat]])
        profiles.append(ModelProfile(j, f"m{j}", table, table.copy(), np.ones_like(table), ((),)))
        reqs.append(Request(j, j, j, 0, QosLevel.MEDIUM, deadline))
        jobs.append(OracleJob(((float(lat),),), ((),), deadline))
    return jobs, profiles, RequestTrace(tuple(reqs), 0, 1)


def test_c2_edf_matches_oracle(verdict):
    t = time.time()
    rng = np.random.default_rng(2024)
    mas = MasConfig.from_kinds([SaKind.WS], 16.0)
    feasible = matched = 0
    above = []
    for k in range(200):
        jobs, profiles, trace = _oracle_instance(rng)
        best = brute_force_oracle(jobs, 1)
        hits = run_simulation(SimConfig(1.0, mas), trace, profiles, EdfH()).totals["hits"]
        if hits > best.hits:
            above.append(k)
        if best.all_feasible:
            feasible += 1
            matched += hits == best.hits
    dt = time.time() - t
    ok = feasible > 0 and matched == feasible and not above and dt < 60
    verdict(2, ok, f"edf optimal on {matched}/{feasible} all-feasible instances of 200, "
                   f"never above oracle: {not above}, {dt:.1f}s (limit 60s)")


def _brute_sli(bits, w, prior):
    tail = bits[-w:]
    return sum(tail) / len(tail) if tail else prior


def test_c3_sla_bookkeeping(verdict):
    t = time.time()
    rng = np.random.default_rng(3)
    mismatches = checks = 0
    for _ in range(10_000):
        w = int(rng.integers(1, 20))
        m = int(rng.integers(1, 12))
        k = int(rng.integers(0, m + 1))
        prior = float(rng.random())
        st = SlaState(0, 0, 0.8, window_size=w, mk=(m, k), prior=prior)
        bits = []
        mismatches += current_sli(st) != prior
        for b in (rng.random(int(rng.integers(0, 60))) < rng.random()).tolist():
            record_outcome(st, b)
            bits.append(int(b))
            mk_brute = m - sum(bits[-m:]) if len(bits) >= m else len(bits) - sum(bits)
            mismatches += current_sli(st) != _brute_sli(bits, w, prior)
            mismatches += mk_firm_ok(st) != (mk_brute <= k)
            checks += 2
    dt = time.time() - t
    verdict(3, mismatches == 0 and dt < 10, f"{checks} exact checks over 10^4 sequences, "
                                            f"mismatches {mismatches}, {dt:.1f}s (limit 10s)")


def test_c4_gradients(verdict):
    t = time.time()
    worst = max(max(check_actor(seed), check_critic(seed)) for seed in range(50))
    dt = time.time() - t
    verdict(4, worst < 1e-4 and dt < 60, f"max relative error {worst:.2e} over 50 nets (limit 1e-4), "
                                         f"{dt:.1f}s (limit 60s)")


def test_c5_toy_preference(verdict):
    t = time.time()
    win_sla, n_sla, rates_sla = toyenv.pair_preference(toyenv.train_pair("sla"))
    win_base, _, _ = toyenv.pair_preference(toyenv.train_pair("baseline"))
    dt = time.time() - t
    ok = win_sla >= 0.9 and rates_sla[0] >= 0.85 and 0.4 <= win_base <= 0.6 and dt < 900
    verdict(5, ok, f"sla win rate {win_sla:.3f} over {n_sla} contested epochs, strict tenant rate "
                   f"{rates_sla[0]:.3f}; baseline win rate {win_base:.3f}; {dt:.0f}s (limit 900s)")


@pytest.fixture(scope="module")
def slot_policies():
    t = time.time()
    pols = {mode: toyenv.train_slots(mode) for mode in ("sla", "baseline")}
    return pols, time.time() - t


def test_c6_fairness(verdict, slot_policies):
    pols, train_time = slot_policies
    t = time.time()
    be, _ = toyenv.slot_envs(400)
    sla = toyenv.tenant_outcomes(be, pols["sla"], toyenv.EVAL_SEEDS).mean(0)
    base = toyenv.tenant_outcomes(be, pols["baseline"], toyenv.EVAL_SEEDS).mean(0)
    dt = train_time + time.time() - t
    ok = sla[1] <= 0.7 * base[1] and abs(sla[0] - base[0]) <= 0.05 and dt < 3600
    verdict(6, ok, f"tenant std {sla[1]:.3f} vs baseline {base[1]:.3f} (ratio {sla[1] / base[1]:.2f}, "
                   f"limit 0.70); hit rate {sla[0]:.3f} vs {base[0]:.3f}; {dt:.0f}s (limit 3600s)")


def test_c7_firm_targets(verdict, slot_policies):
    pols, train_time = slot_policies
    t = time.time()
    _, zipf = toyenv.slot_envs(400)
    met = {name: toyenv.tenant_outcomes(zipf, sch, toyenv.EVAL_SEEDS)[:, 2]
           for name, sch in (("sla", pols["sla"]), ("baseline", pols["baseline"]), ("edf", EdfH()))}
    dt = train_time + time.time() - t
    ok = bool(np.all(met["sla"] >= met["baseline"]) and np.all(met["baseline"] >= met["edf"])) and dt < 3600
    per_seed = ", ".join(f"{a:.2f}/{b:.2f}/{c:.2f}" for a, b, c in zip(met["sla"], met["baseline"], met["edf"]))
    verdict(7, ok, f"share of tenants at target sla/baseline/edf per seed: {per_seed}; {dt:.0f}s (limit 3600s)")


SMALL = """\
costs.synthetic.seed = 4
costs.synthetic.n_models = 2
tenants.count = 6
tenants.zipf_targets = 0.7, 0.8, 0.9
trace.utilization = 0.5
trace.requests = 80
scheduler = edf-h
"""


def test_c8_overhead_accounting(verdict):
    t = time.time()
    spec = FeatureSpec(3, 2, 100.0, 32.0, PolicyMode.SLA_AWARE)
    n_h = 192
    sla = Actor(spec.n_in, spec.n_sys, 2, n_h, np.random.default_rng(0))
    base = Actor(spec.with_mode("baseline").n_in, spec.n_sys, 2, n_h, np.random.default_rng(0))
    diff = policy_mac_count(sla, [1]) - policy_mac_count(base, [1])
    work = build_workload(ExperimentConfig.from_text(SMALL))
    overheads, defer = [], []
    for name in ("fcfs-h", "edf-h", "herald", "prema-h"):
        run = run_once(work, make_scheduler(name), 0)
        overheads.append(run.energy.overhead)
        defer.append(run.energy.mean_defer_factor)
    dt = time.time() - t
    ok = diff == 3 * 2 * n_h and all(o == 0 for o in overheads) and min(defer) >= 1.0 and dt < 1
    verdict(8, ok, f"mac difference {diff} (expected {3 * 2 * n_h}), heuristic overheads {overheads}, "
                   f"min defer factor {min(defer):.3f}, {dt:.2f}s (limit 1s)")


def test_c9_compare_deterministic(verdict, tmp_path):
    t = time.time()
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL + "replications = 2\ntrain.episodes = 2\ntrain.hidden = 4\n")
    assert main(["train", str(cfg), "--out", str(tmp_path / "t"), "--quiet"]) == EXIT_OK
    ck = tmp_path / "t" / "policy.bin"
    outs = []
    for k in range(2):
        out = tmp_path / f"c{k}"
        code = main(["compare", str(cfg), "--schedulers", "fcfs-h,edf-h,herald,prema-h,rl-sla",
                     "--checkpoint", f"rl-sla={ck}", "--seed", "11", "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same = names and all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    dt = time.time() - t
    verdict(9, bool(same) and dt < 300, f"{', '.join(names)} byte-identical across two runs: {bool(same)}, "
                                        f"{dt:.1f}s (limit 300s)")
