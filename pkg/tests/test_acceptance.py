"""Acceptance suite: one test per acceptance criterion.

Each test records a PASS/FAIL line (shown live and again in the terminal
summary). Run standalone with

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import json
import time

import numpy as np
import pytest

from fixtures import approach_sequences, train_category_banks
from latentcbf.barrier import (
    BarrierBank,
    HalfSpace,
    MLPBarrier,
    Sphere,
    TrainConfig,
    classify,
    evaluate,
    input_gradient,
    save_bank,
    train,
)
from latentcbf.cli import main
from latentcbf.core import DataContractError, SteeringConfig
from latentcbf.dataio import SafetyDataset, SyntheticSpec, decode_dump, generate_synthetic, read_dump, split, write_dump
from latentcbf.dynamics import FamilySpec, SuiteSpec, alpha_sweep, run_suite
from latentcbf.steering import ConstraintSet, compose_lse, steer_qp, steer_top2
from oracles import best_random_hyperplane, central_difference, enumeration_qp


def test_criterion_01_top2_matches_qp_oracle(criterion):
    rng = np.random.default_rng(101)
    worst, t0 = 0.0, time.perf_counter()
    for d in (2, 8, 64):
        for _ in range(1000):
            grads = rng.normal(size=(2, d)) * rng.uniform(0.1, 3.0, size=(2, 1))
            values = rng.normal(size=2)
            u = rng.normal(size=d) * rng.uniform(0.1, 3.0)
            alpha = rng.uniform(0.05, 2.0)
            cons = ConstraintSet(grads, values)
            out = steer_top2(np.zeros(d), u, cons, SteeringConfig(alpha=alpha))
            ref = enumeration_qp(grads, values, u, alpha)
            worst = max(worst, float(np.max(np.abs(out.u_star - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    criterion(1, "Top-2 closed form equals the enumeration QP oracle (K=2, d in {2,8,64}, 3000 instances)",
              ok, f"max |diff| {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_qp_matches_oracle(criterion):
    rng = np.random.default_rng(102)
    worst, infeasible_ok, infeasible = 0.0, True, 0
    for _ in range(500):
        K, d = int(rng.integers(1, 5)), int(rng.integers(1, 17))
        grads, values = rng.normal(size=(K, d)), rng.normal(size=K)
        u, alpha = rng.normal(size=d) * 2, rng.uniform(0.05, 2.0)
        out = steer_qp(np.zeros(d), u, ConstraintSet(grads, values), SteeringConfig(alpha=alpha))
        ref = enumeration_qp(grads, values, u, alpha)
        if ref is None:
            infeasible += 1
            infeasible_ok &= out.infeasible
        else:
            worst = max(worst, float(np.max(np.abs(out.u_star - ref))))
    ok = worst <= 1e-6 and infeasible_ok
    criterion(2, "QP mode equals the enumeration oracle (500 instances, K<=4, d<=16)", ok,
              f"max |diff| {worst:.1e}; {infeasible} infeasible instances all flagged: {infeasible_ok}")
    assert ok


def _random_bank(rng, d):
    kind = rng.integers(0, 3)
    if kind == 0:
        return BarrierBank([HalfSpace(rng.normal(size=d), rng.normal()) for _ in range(int(rng.integers(1, 6)))])
    if kind == 1:
        return BarrierBank([Sphere(rng.normal(size=d), rng.uniform(0.5, 2.0), inside=bool(rng.integers(2)))
                            for _ in range(int(rng.integers(1, 6)))])
    return BarrierBank([MLPBarrier(d, (8, 4), int(rng.integers(1, 6)), seed=int(rng.integers(1 << 30)))])


def test_criterion_03_lse_soundness(criterion):
    rng = np.random.default_rng(103)
    counterexamples, bound_breaks, total = 0, 0, 0
    for b in range(100):
        d = int(rng.integers(1, 9))
        bank = _random_bank(rng, d)
        V = bank.values(rng.normal(size=(1000, d)) * 2)
        delta = float(rng.normal() * 0.2)
        for kappa in (10.0, 50.0):
            B = compose_lse(V, delta, kappa)
            counterexamples += int(np.count_nonzero((B >= 0) & (V.min(axis=1) < delta)))
            gap = (V.min(axis=1) - delta) - B
            bound_breaks += int(np.count_nonzero((gap < -1e-12) | (gap > np.log(V.shape[1]) / kappa + 1e-12)))
        total += V.shape[0]
    ok = counterexamples == 0 and bound_breaks == 0 and total >= 100_000
    criterion(3, "LSE soundness and ln(K)/kappa gap", ok,
              f"{total} states x kappa in {{10,50}}: {counterexamples} counterexamples, {bound_breaks} gap breaks")
    assert ok


def test_criterion_04_forward_invariance(criterion):
    t0 = time.perf_counter()
    details, ok = [], True
    for mode in ("lse", "qp"):
        cfg = SteeringConfig(dt=0.01, alpha=0.3, mode=mode)
        rep = run_suite(SuiteSpec("safe_start", 10_000, (2, 8), 500, seed=0), cfg)
        ok &= rep.invariance_violations == 0 and rep.scenarios == 10_000
        details.append(f"{mode}: {rep.invariance_violations} violations, worst margin {rep.worst_margin:.1e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    criterion(4, "forward invariance, 10^4 safe-start rollouts x 500 steps, tol 10 dt^2", ok,
              "; ".join(details) + f"; {elapsed:.0f} s")
    assert ok


@pytest.mark.xfail(strict=True, reason="default family contains concave corners; see decisions ledger")
def test_criterion_05_exponential_stabilization(criterion):
    cfg = SteeringConfig(dt=0.01, alpha=1.0, mode="lse")
    rep = run_suite(SuiteSpec("unsafe_start", 10_000, (2, 8), 500, seed=0), cfg, stop_at="safe_set")
    failing = rep.extra["failing_scenarios"]
    groups = {k: g["bound_failures"] for k, g in rep.extra["groups"].items()}
    convex = run_suite(SuiteSpec("unsafe_start", 10_000, (2, 8), 500, seed=0, family=FamilySpec(0, 0, 2)),
                       cfg, stop_at="safe_set")
    ok = bool(rep.stabilization_bound_holds)
    criterion(5, "exponential stabilization V_t <= 1.05 V_0 exp(-alpha t dt) until reaching C", ok,
              f"default family: {failing}/10000 scenarios exceed the envelope {groups}, worst ratio "
              f"{rep.worst_ratio:.2f}; obstacle-only family: {convex.extra['failing_scenarios']} failures")
    assert ok


def test_criterion_06_gradient_correctness(criterion):
    rng = np.random.default_rng(106)
    worst = 0.0
    archs = [(64, 32, 16), (16, 8), (32,), (8, 8, 8, 8)]
    for i in range(1000):
        d = int(rng.integers(1, 33))
        if i % 10 == 0:
            barrier = HalfSpace(rng.normal(size=d), rng.normal())
        elif i % 10 == 1:
            barrier = Sphere(rng.normal(size=d), rng.uniform(0.5, 2), inside=bool(i % 20 == 1))
        else:
            barrier = MLPBarrier(d, archs[i % 4], 1, seed=i)
        h = rng.normal(size=d) * rng.choice([0.1, 1.0, 3.0])
        g = input_gradient(barrier, h)
        num = central_difference(lambda x: evaluate(barrier, x), h, 1e-3)
        worst = max(worst, float(np.linalg.norm(g - num) / np.linalg.norm(g)))
    ok = worst < 1e-7
    criterion(6, "input gradient vs central differences, 1000 (barrier, point) pairs", ok,
              f"max relative error {worst:.1e}")
    assert ok


def test_criterion_07_learning(criterion):
    ds = generate_synthetic(SyntheticSpec("two_moons", 1000, 0.1, 2, seed=7))
    train_set, test_set = split(ds, 0.8, seed=0)
    bank = BarrierBank([MLPBarrier(2, (64, 32, 16), 4, seed=0)])
    res = train(bank, train_set, TrainConfig(epochs=300, seed=0))
    acc_train = float(np.mean(classify(res.bank, train_set.states) == train_set.labels))
    acc_test = float(np.mean(classify(res.bank, test_set.states) == test_set.labels))
    linear = best_random_hyperplane(ds.states, ds.labels, 1000, seed=0)
    ok = acc_train >= 0.95 and acc_test >= 0.90 and linear < 0.90
    criterion(7, "two-moons learning, K=4, 300 epochs", ok,
              f"train {acc_train:.3f}, held-out {acc_test:.3f}, best linear {linear:.3f}")
    assert ok


def test_criterion_08_composition(criterion, tmp_path):
    banks = train_category_banks(epochs=60, seed=0)
    paths = []
    for k, bank in enumerate(banks):
        paths.append(tmp_path / f"category{k}.cbfb")
        save_bank(bank, paths[-1])
    seqs = approach_sequences(n_per_pattern=25, steps=40, seed=0)
    X = np.concatenate(list(seqs.values()))
    ids = [sid for sid, S in seqs.items() for _ in range(len(S))]
    # sequences are stored at float32 precision like any activation dump
    write_dump(SafetyDataset(X.astype(np.float32), np.ones(len(X)), ids), tmp_path / "test.cbfa")
    out = tmp_path / "compose.json"
    code = main(["compose", "--models", *map(str, paths), "--data", str(tmp_path / "test.cbfa"),
                 "--modes", "qp,lse,top2", "--alpha", "0.3", "--kappa", "10", "--out", str(out)])
    rep = json.loads(out.read_text())
    n = {k: v["composed_count"] for k, v in rep["rates"].items()}
    ok = code == 0 and n["qp"] == n["lse"] < n["top2"] < n["original"]
    criterion(8, "composition ordering QP = LSE < Top-2 < Original", ok,
              f"violating steps out of {rep['rates']['original']['steps']}: " +
              ", ".join(f"{k} {v}" for k, v in n.items()))
    assert ok


def test_criterion_09_latency(criterion, tmp_path):
    out = tmp_path / "bench.json"
    code = main(["bench", "--K", "14", "--d-h", "1536", "--trials", "1000", "--reference-trials", "100",
                 "--out", str(out)])
    rep = json.loads(out.read_text())
    m = {k: v["mean_ms"] for k, v in rep["modes"].items()}
    speedup = rep["speedup_vs_reference"]["lse"]
    ok = code == 0 and speedup >= 5.0 and m["lse"] <= m["top2"] <= m["qp"] and rep["trials"] >= 1000
    criterion(9, "latency at K=14, d_h=1536, 1000 trials", ok,
              f"lse {m['lse']:.2f} ms, top2 {m['top2']:.2f} ms, qp {m['qp']:.2f} ms, "
              f"reference {rep['reference']['mean_ms']:.1f} ms, LSE speedup {speedup:.0f}x")
    assert ok


def test_criterion_10_alpha_monotonicity(criterion):
    masses = alpha_sweep(SuiteSpec(n_scenarios=10_000, steps=500, seed=0), SteeringConfig(dt=0.01),
                         alphas=(0.01, 0.1, 0.3, 1.0))
    vals = [masses[a] for a in (0.01, 0.1, 0.3, 1.0)]
    ok = all(x >= y for x, y in zip(vals, vals[1:]))
    criterion(10, "violation mass non-increasing in alpha", ok,
              ", ".join(f"alpha={a}: {masses[a]:.1f}" for a in (0.01, 0.1, 0.3, 1.0)))
    assert ok


def test_criterion_11_data_contract(criterion, tmp_path):
    rng = np.random.default_rng(111)
    lossless, crashes, corrupt_cases = 0, 0, 0
    alphabet = list("abcXYZ_-019éλ中 ")
    for i in range(1000):
        n, d = int(rng.integers(0, 30)), int(rng.integers(1, 24))
        X = (rng.normal(size=(n, d)) * rng.choice([1e-3, 1.0, 1e5])).astype(np.float32)
        ids = ["".join(rng.choice(alphabet, size=int(rng.integers(0, 10)))) for _ in range(n)]
        ds = SafetyDataset(X.astype(np.float64).reshape(n, d), rng.choice([-1, 1], size=n), ids,
                           int(rng.integers(0, 100)))
        path = tmp_path / "d.cbfa"
        write_dump(ds, path)
        lossless += read_dump(path).same_as(ds)
        data = bytearray(path.read_bytes())
        for _ in range(3):
            blob = bytearray(data)
            kind = rng.integers(0, 3)
            if kind == 0:
                blob = blob[:int(rng.integers(0, len(blob)))]
            elif kind == 1:
                for _ in range(int(rng.integers(1, 5))):
                    blob[int(rng.integers(0, len(blob)))] = int(rng.integers(0, 256))
            else:
                blob += bytes(rng.integers(0, 256, size=int(rng.integers(1, 9)), dtype=np.uint8))
            if bytes(blob) == bytes(data):
                continue
            corrupt_cases += 1
            try:
                decode_dump(bytes(blob))
            except DataContractError:
                pass
            except Exception:  # anything else is a crash
                crashes += 1
    ok = lossless == 1000 and crashes == 0
    criterion(11, "CBFA round-trip fuzz and corruption handling", ok,
              f"{lossless}/1000 lossless, {corrupt_cases} corrupted files, {crashes} crashes")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
