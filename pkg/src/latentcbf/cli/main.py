"""bsteer: train barrier banks, steer recorded trajectories, verify, compose, bench.

Exit codes: 0 success, 1 I/O or argument errors, 2 data-contract errors,
3 verification failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from latentcbf import __version__
from latentcbf.barrier import BarrierBank, MLPBarrier, classify, load_bank, save_bank, train
from latentcbf.cli.config import ConfigError, load_config, parse_assignment
from latentcbf.core import DataContractError, Mode
from latentcbf.dataio import (
    SyntheticKind,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    split,
    write_dump,
    write_jsonl,
)
from latentcbf.dynamics import (
    FamilySpec,
    NominalDynamics,
    SharedBank,
    SuiteKind,
    SuiteSpec,
    read_trajectory_jsonl,
    rollout_batch,
    run_suite,
)
from latentcbf.steering import SteeringSession, compose_lse, iterative_projection

log = logging.getLogger("bsteer")

EXIT_OK, EXIT_IO, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class VerificationFailed(Exception):
    pass


def _emit(report: dict, out) -> None:
    text = json.dumps(report, indent=2, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _report(cfg, command: str, **body) -> dict:
    return {"command": command, "version": __version__, "config": cfg.to_dict(), **body}


def _steer_overrides(args):
    return [("steer", "mode", args.mode), ("steer", "alpha", args.alpha),
            ("steer", "delta", args.delta), ("steer", "kappa", args.kappa)]


def _config(args, extra=()):
    overrides = list(extra)
    overrides += [parse_assignment(s) for s in (args.set or [])]
    return load_config(args.config, overrides=overrides)


# -- gen-synth ----------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(SyntheticKind(args.kind), args.n_per_class, args.noise, args.d_h, args.seed)
    ds = generate_synthetic(spec)
    if args.format == "jsonl":
        write_jsonl(ds, args.out)
    else:
        write_dump(ds, args.out)
    print(f"wrote {len(ds)} records (d_h={ds.dim}) to {args.out}", file=sys.stderr)
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args, [("train", "seed", args.seed), ("train", "epochs", args.epochs),
                         ("train", "n_heads", args.heads), ("train", "learning_rate", args.lr),
                         ("paths", "data", args.data), ("paths", "out", args.out)])
    tcfg = cfg.training()
    t = cfg["train"]
    data_path = cfg["paths"]["data"]
    out = cfg["paths"]["out"]
    if not data_path or not out:
        raise ConfigError("train needs --data and --out (or paths.data / paths.out)")
    ds = load_dataset(data_path)
    if len(set(ds.source_ids)) >= 2:
        train_set, test_set = split(ds, t["train_fraction"], t["split_seed"])
    else:
        train_set, test_set = ds, None
    bank = BarrierBank([MLPBarrier(ds.dim, t["hidden_dims"], t["n_heads"], seed=tcfg.seed)])
    result = train(bank, train_set, tcfg)
    save_bank(result.bank, out, tcfg, {"hidden_dims": t["hidden_dims"]})

    loss_csv = args.loss_csv or f"{out}.loss.csv"
    with open(loss_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        writer.writerow([0, f"{result.initial_loss:.10g}"])
        for i, loss in enumerate(result.history, 1):
            writer.writerow([i, f"{loss:.10g}"])

    def accuracy(d):
        if d is None or len(d) == 0:
            return None
        return float(np.mean(classify(result.bank, d.states, cfg["steer"]["delta"]) == d.labels))

    _emit(_report(cfg, "train", model=str(out), loss_csv=str(loss_csv),
                  records={"train": len(train_set), "test": 0 if test_set is None else len(test_set),
                           "rejected": ds.rejected},
                  initial_loss=result.initial_loss, final_loss=result.history[-1],
                  train_accuracy=accuracy(train_set), test_accuracy=accuracy(test_set)),
          args.report)
    return EXIT_OK


# -- steer ------------------------------------------------------------------------

def _load_sequences(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:1] == b"{" and b'"state"' in head:
        return {"trajectory": read_trajectory_jsonl(path)}
    return load_dataset(path).sequences()


def steer_sequences(bank, sequences: dict, config) -> dict:
    """Closed-loop replay of recorded state sequences through the filter.

    The nominal control at step t is the recorded velocity
    (s_{t+1} - s_t) / dt; the steered state follows h_{t+1} = h_t + u* dt.
    Sequences of equal length are advanced together.
    """
    by_len: dict[int, list[str]] = {}
    for sid, states in sequences.items():
        by_len.setdefault(len(states), []).append(sid)
    shared = SharedBank(bank)
    out = {}
    for length, ids in by_len.items():
        S = np.stack([sequences[i] for i in ids])              # (N, T+1, d)
        if length < 2:
            for i in ids:
                out[i] = {"states": sequences[i].copy(), "controls": np.zeros((0, S.shape[2])),
                          "nominal": np.zeros((0, S.shape[2]))}
            continue
        nominal = NominalDynamics.from_states(S, config.dt)
        res = rollout_batch(S[:, 0], nominal, shared, config, length - 1, keep_states=True)
        for j, sid in enumerate(ids):
            out[sid] = {"states": res.states[:, j], "controls": res.controls[:, j],
                        "nominal": nominal.params["controls"][j]}
    return out


def cmd_steer(args) -> int:
    cfg = _config(args, _steer_overrides(args) + [("steer", "dt", args.dt),
                                                  ("paths", "model", args.model),
                                                  ("paths", "data", args.input),
                                                  ("paths", "out", args.out)])
    scfg = cfg.steering()
    paths = cfg["paths"]
    if not paths["model"] or not paths["data"] or not paths["out"]:
        raise ConfigError("steer needs --model, --input and --out")
    bank = load_bank(paths["model"])
    sequences = _load_sequences(paths["data"])
    dims = {s.shape[1] for s in sequences.values()}
    if dims != {bank.input_dim}:
        raise DataContractError(f"states have dimension {sorted(dims)}, model expects {bank.input_dim}")
    steered = steer_sequences(bank, sequences, scfg)
    unsafe_before = unsafe_after = total = 0
    with open(paths["out"], "w") as fh:
        for sid, rec in steered.items():
            values = bank.values(rec["states"])
            B = compose_lse(values, scfg.delta, scfg.kappa)
            before = bank.values(sequences[sid]).min(axis=1) < scfg.delta
            after = values.min(axis=1) < scfg.delta
            unsafe_before += int(before[1:].sum())
            unsafe_after += int(after[1:].sum())
            total += len(values) - 1
            for t in range(len(values)):
                fh.write(json.dumps({
                    "source_id": sid, "t": t,
                    "state": rec["states"][t].tolist(),
                    "original_state": sequences[sid][t].tolist(),
                    "control": rec["controls"][t].tolist() if t < len(rec["controls"]) else None,
                    "nominal_control": rec["nominal"][t].tolist() if t < len(rec["nominal"]) else None,
                    "barrier_values": values[t].tolist(),
                    "B": float(np.atleast_1d(B)[t]),
                }) + "\n")
    _emit(_report(cfg, "steer", sequences=len(steered), steps=total,
                  unsafe_steps_before=unsafe_before, unsafe_steps_after=unsafe_after,
                  records=str(paths["out"])), args.report)
    return EXIT_OK


# -- verify ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    cfg = _config(args, _steer_overrides(args) + [
        ("verify", "suite", args.suite), ("verify", "n_scenarios", args.scenarios),
        ("verify", "steps", args.steps), ("verify", "dt", args.dt), ("verify", "seed", args.seed),
        ("verify", "stop_at", args.stop_at), ("paths", "model", args.model),
        ("paths", "out", args.out)])
    v = cfg["verify"]
    scfg = cfg.steering(dt=v["dt"])
    try:
        kind = SuiteKind(v["suite"])
    except ValueError:
        raise ConfigError(f"unknown suite {v['suite']!r}") from None
    spec = SuiteSpec(kind, v["n_scenarios"], tuple(v["dims"]), v["steps"], v["seed"],
                     FamilySpec(v["halfspaces"], v["inside_balls"], v["obstacles"]))
    bank = load_bank(cfg["paths"]["model"]) if cfg["paths"]["model"] else None
    if kind is SuiteKind.NEGATIVE_CONTROL:
        tol = 0.0 if v["tol"] is None else v["tol"]
    else:
        tol = v["tol"]
    report = run_suite(spec, scfg, tol=tol, stab_tol=v["stab_tol"], stop_at=v["stop_at"], bank=bank,
                       box=v["model_box"])
    body = report.to_dict()
    if kind is SuiteKind.NEGATIVE_CONTROL:
        # the harness must detect the crossings that unfiltered rollouts make
        body["passed"] = report.invariance_violations > 0
    _emit(_report(cfg, "verify", report=body), cfg["paths"]["out"])
    if not body["passed"]:
        raise VerificationFailed(f"{kind.value} suite failed")
    return EXIT_OK


# -- compose -------------------------------------------------------------------

def _category_name(path, bank, i):
    if bank.category_names and len(bank.category_names) == bank.n_heads:
        return bank.category_names
    stem = Path(path).stem
    return [stem] if bank.n_heads == 1 else [f"{stem}[{k}]" for k in range(bank.n_heads)]


def violation_rates(bank, states_by_seq: dict, delta: float, tol: float) -> dict:
    """Fraction of post-initial states below delta - tol, per head and for the minimum."""
    V = np.concatenate([bank.values(s)[1:] for s in states_by_seq.values() if len(s) > 1])
    bad = V < delta - tol
    return {"per_category": bad.mean(axis=0).tolist(), "per_category_counts": bad.sum(axis=0).tolist(),
            "composed": float(bad.any(axis=1).mean()), "composed_count": int(bad.any(axis=1).sum()),
            "steps": int(V.shape[0])}


def cmd_compose(args) -> int:
    modes = [Mode(m) for m in (args.modes.split(",") if args.modes else [args.mode or "lse"])]
    cfg = _config(args, _steer_overrides(args) + [("steer", "dt", args.dt), ("paths", "data", args.data),
                                                  ("paths", "out", args.out)])
    if not args.models:
        raise ConfigError("compose needs at least one --models path")
    banks = [load_bank(p) for p in args.models]
    names = []
    for i, (p, b) in enumerate(zip(args.models, banks)):
        names.extend(_category_name(p, b, i))
    merged = BarrierBank([c for b in banks for c in b.components], names)
    if not cfg["paths"]["data"]:
        raise ConfigError("compose needs --data (a shared test dump)")
    sequences = _load_sequences(cfg["paths"]["data"])
    if not any(len(s) > 1 for s in sequences.values()):
        raise DataContractError("compose needs sequences with at least two states per source id")
    tol = args.violation_tol
    delta = cfg["steer"]["delta"]
    results = {"original": violation_rates(merged, sequences, delta, tol)}
    decisions = {}
    for mode in modes:
        scfg = cfg.steering(mode=mode.value)
        steered = steer_sequences(merged, sequences, scfg)
        states = {k: v["states"] for k, v in steered.items()}
        results[mode.value] = violation_rates(merged, states, delta, tol)
        decisions[mode.value] = np.concatenate(
            [merged.values(s)[1:].min(axis=1) >= delta - tol for s in states.values() if len(s) > 1])
    agreement = {}
    for a in decisions:
        for b in decisions:
            if a < b:
                agreement[f"{a}_vs_{b}"] = float(np.mean(decisions[a] == decisions[b]))
    if args.save_merged:
        save_bank(merged, args.save_merged, extra={"composed_from": [str(p) for p in args.models]})
    _emit(_report(cfg, "compose", categories=names, K=merged.n_heads, violation_tol=tol,
                  sequences=len(sequences), rates=results, membership_agreement=agreement),
          cfg["paths"]["out"])
    return EXIT_OK


# -- bench -----------------------------------------------------------------------

def _time_call(fn, *a):
    t0 = time.perf_counter()
    fn(*a)
    return (time.perf_counter() - t0) * 1e3


def cmd_bench(args) -> int:
    cfg = _config(args, _steer_overrides(args) + [
        ("bench", "K", args.K), ("bench", "d_h", args.d_h), ("bench", "trials", args.trials),
        ("bench", "reference_trials", args.reference_trials), ("bench", "seed", args.seed),
        ("paths", "model", args.model), ("paths", "out", args.out)])
    b = cfg["bench"]
    warns = []
    if b["trials"] < 100:
        msg = f"only {b['trials']} trials requested; timings below 100 trials are noisy"
        warnings.warn(msg)
        warns.append(msg)
    if b["trials"] < 1 or b["reference_trials"] < 1:
        raise ConfigError("trials must be positive")
    if cfg["paths"]["model"]:
        bank = load_bank(cfg["paths"]["model"])
    else:
        bank = BarrierBank([MLPBarrier(b["d_h"], b["hidden_dims"], b["K"], seed=b["seed"])])
    K, d = bank.n_heads, bank.input_dim
    rng = np.random.default_rng(b["seed"])
    base = cfg.steering()
    # place the threshold at the median head value so constraints are live
    probe = bank.values(rng.normal(size=(256, d)))
    delta = float(np.median(probe)) if "steer.delta" not in cfg.sources else base.delta
    sessions = {m: SteeringSession(bank, base.replace(mode=m, delta=delta)) for m in Mode}
    order = [Mode.LSE, Mode.TOP2, Mode.QP]
    times = {m.value: [] for m in order}
    active = {m.value: 0 for m in order}
    for m in order:  # warm-up
        sessions[m].control(rng.normal(size=d), rng.normal(size=d))
    for trial in range(b["trials"]):
        h, u = rng.normal(size=d), rng.normal(size=d)
        for m in (order if trial % 2 == 0 else order[::-1]):
            t0 = time.perf_counter()
            u_star = sessions[m].control(h, u)
            times[m.value].append((time.perf_counter() - t0) * 1e3)
            active[m.value] += not np.array_equal(u_star, u)
    ref = []
    for _ in range(b["reference_trials"]):
        h = rng.normal(size=d)
        ref.append(_time_call(iterative_projection, bank, h, delta, b["iterations"], b["learning_rate"]))
    stats = {m: {"mean_ms": float(np.mean(v)), "std_ms": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                 "trials": len(v), "filter_active_fraction": active[m] / len(v)} for m, v in times.items()}
    ref_mean = float(np.mean(ref))
    report = _report(
        cfg, "bench", K=K, d_h=d, delta=delta, trials=b["trials"], modes=stats,
        reference={"mean_ms": ref_mean, "std_ms": float(np.std(ref, ddof=1)) if len(ref) > 1 else 0.0,
                   "trials": len(ref), "iterations": b["iterations"], "learning_rate": b["learning_rate"]},
        speedup_vs_reference={m: ref_mean / s["mean_ms"] for m, s in stats.items()},
        hardware={"platform": platform.platform(), "processor": platform.processor() or None,
                  "cpu_count": os.cpu_count(), "python": platform.python_version(),
                  "numpy": np.__version__},
        warnings=warns)
    _emit(report, cfg["paths"]["out"])
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _add_common(p, steer=True):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config entry (repeatable)")
    if steer:
        p.add_argument("--mode", choices=[m.value for m in Mode])
        p.add_argument("--alpha", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--kappa", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsteer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic labeled dump")
    p.add_argument("--kind", default="two_moons", choices=[k.value for k in SyntheticKind])
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--d-h", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["cbfa", "jsonl"], default="cbfa")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a barrier bank on a labeled dump")
    _add_common(p, steer=False)
    p.add_argument("--data")
    p.add_argument("--out", help="model path (CBFB)")
    p.add_argument("--heads", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-csv")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("steer", help="steer recorded trajectories or dump sequences")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--input", help="CBFA/JSONL dump (grouped by source id) or trajectory records")
    p.add_argument("--dt", type=float)
    p.add_argument("--out", help="steered trajectory records (JSON lines)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("verify", help="run a randomized invariance/stabilization suite")
    _add_common(p)
    p.add_argument("--model", help="use a trained bank instead of analytic barriers")
    p.add_argument("--suite", choices=[k.value for k in SuiteKind])
    p.add_argument("--scenarios", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stop-at", choices=["composed", "safe_set"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compose", help="merge independently trained banks and compare modes")
    _add_common(p)
    p.add_argument("--models", nargs="+")
    p.add_argument("--modes", help="comma-separated modes to compare (default: --mode)")
    p.add_argument("--data", help="shared test dump or trajectory records")
    p.add_argument("--dt", type=float)
    p.add_argument("--violation-tol", type=float, default=1e-3)
    p.add_argument("--save-merged", help="also write the merged bank here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("bench", help="per-call steering latency against the iterative reference")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--K", type=int)
    p.add_argument("--d-h", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--reference-trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap to the I/O/argument code
        return EXIT_OK if exc.code == 0 else EXIT_IO
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VerificationFailed as exc:
        print(f"bsteer: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DataContractError as exc:
        print(f"bsteer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, OSError) as exc:
        print(f"bsteer: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
