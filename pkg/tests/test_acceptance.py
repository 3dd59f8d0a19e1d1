"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import csv
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fedquit.cli import main as cli_main
from fedquit.data import (FederationData, PartitionSpec, forget_retain_split, generate_blobs,
                          partition)
from fedquit.evaluation import accuracy, fit_mia_song, fit_mia_yeom, mia_rate, model_metrics
from fedquit.experiment import COMPARE_COLUMNS, compare, parse_config, run_pipeline
from fedquit.federation import (FederationConfig, aggregate, client_stream, local_train,
                                run_fedavg, unlearning_round)
from fedquit.nn import MLPArchitecture, ParameterSet, backprop, init_params, one_hot, softmax
from fedquit.unlearning import TeacherVariant, UnlearnConfig, centralized_fedquit, teacher_targets

ROOT = Path(__file__).resolve().parent.parent
DESK = ROOT / "configs" / "desk.cfg"
UNIT_SUITE = ["test_nn.py", "test_data.py", "test_federation.py", "test_unlearning.py",
              "test_evaluation.py", "test_experiment.py", "test_cli.py"]
VARIANTS = [("fedquit-logits", "0"), ("fedquit-logits", "min"), ("fedquit-softmax", "1/C"),
            ("fedquit-softmax", "0")]


@pytest.fixture
def verdict(capsys):
    def say(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return say


# ---------------------------------------------------------------- 1

def test_criterion_1_unit_suite(verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(ROOT / "tests" / f) for f in UNIT_SUITE]],
                          capture_output=True, text=True, cwd=ROOT)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr
    ok = proc.returncode == 0 and elapsed < 30
    assert verdict(1, ok, f"{summary} ({elapsed:.1f}s, limit 30s)"), proc.stdout[-3000:]


# ---------------------------------------------------------------- 2

def _fd_grad(params, x, targets, loss, h=1e-5):
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        fu = backprop(ParameterSet.from_flat(params.arch, up), x, targets, loss)[1]
        fdn = backprop(ParameterSet.from_flat(params.arch, dn), x, targets, loss)[1]
        out[i] = (fu - fdn) / (2 * h)
    return out


def test_criterion_2_gradients(verdict):
    start = time.perf_counter()
    worst, cases = 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        depth = int(rng.integers(0, 2))
        sizes = [int(rng.integers(1, 11))] + ([int(rng.integers(1, 9))] if depth else []) \
            + [int(rng.integers(2, 6))]
        act = "tanh" if seed % 2 else "relu"
        arch = MLPArchitecture(tuple(sizes), act)
        params = init_params(arch, rng)
        x = rng.normal(size=(int(rng.integers(1, 5)), sizes[0]))
        for loss in ("cross_entropy", "kl"):
            if loss == "kl":
                targets = softmax(rng.normal(size=(len(x), sizes[-1])))
            else:
                targets = one_hot(rng.integers(0, sizes[-1], len(x)), sizes[-1])
            g = backprop(params, x, targets, loss)[0].flat()
            fd = _fd_grad(params, x, targets, loss)
            err = np.linalg.norm(g - fd) / max(np.linalg.norm(g) + np.linalg.norm(fd), 1e-12)
            worst = max(worst, err)
            cases += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and cases >= 200 and elapsed < 60
    assert verdict(2, ok, f"{cases} cases, worst relative error {worst:.2e} ({elapsed:.1f}s)")


# ---------------------------------------------------------------- 3

def test_criterion_3_teacher_validity(verdict):
    rng = np.random.default_rng(2024)
    n_cases, failures = 10_000, []
    for i in range(n_cases):
        c = int(rng.integers(2, 11))
        z = rng.normal(scale=rng.choice([0.1, 1.0, 5.0, 20.0]), size=c)
        y = int(rng.integers(0, c))
        g = softmax(z)
        variants = [TeacherVariant.logits_fixed(rng.uniform(-10, 10)),
                    TeacherVariant.logits_min(),
                    TeacherVariant.softmax_fixed(rng.uniform(0, 0.999)),
                    TeacherVariant.incompetent()]
        others = np.array([k for k in range(c) if k != y])
        for var in variants:
            t = teacher_targets(var, z[None], [y])[0]
            if np.any(t < 0) or np.any(t > 1) or abs(t.sum() - 1) > 1e-12:
                failures.append((i, var.label, "not a distribution"))
                continue
            if var.kind in ("logits", "logits_min"):
                zz = z.copy()
                zz[y] = var.v if var.kind == "logits" else z.min()
                e = np.exp(zz - zz.max())
                if not np.allclose(t, e / e.sum(), rtol=1e-12, atol=1e-300):
                    failures.append((i, var.label, "logit substitution"))
            elif var.kind == "softmax":
                raw = g + (g[y] - var.v) / (c - 1)
                raw[y] = var.v
                if np.all(raw >= 0) and not (t[y] == var.v and
                                             np.all(np.abs(t - raw) <= 1e-15)):
                    failures.append((i, var.label, "softmax substitution"))
            else:
                if not np.all(t == 1.0 / c):
                    failures.append((i, var.label, "not uniform"))
            # order among the non-true classes is kept
            go, to = g[others], t[others]
            order = np.argsort(go, kind="stable")
            if np.any(np.diff(to[order]) < -1e-15):
                failures.append((i, var.label, "order"))
    ok = not failures
    assert verdict(3, ok, f"{n_cases} cases x 4 variants, {len(failures)} failures"), failures[:5]


# ---------------------------------------------------------------- 4

def test_criterion_4_federation_identities(verdict):
    checks = {}
    arch = MLPArchitecture((2, 8, 3))
    rng = np.random.default_rng(0)
    ups = [(init_params(arch, np.random.default_rng(i)), int(rng.integers(1, 100)))
           for i in range(6)]
    checks["permutation"] = all(aggregate(ups).equals(aggregate([ups[j] for j in perm]))
                                for perm in (rng.permutation(6) for _ in range(20)))
    p = init_params(arch, rng)
    checks["idempotence"] = aggregate([(p, 3), (p.copy(), 5), (p.copy(), 11)]).equals(p)

    d = generate_blobs(3, 30, 2, 0.5, seed=1)
    fed = FederationData([d], generate_blobs(3, 5, 2, 0.5, seed=2))
    cfg = FederationConfig(rounds=8, local_epochs=2, lr=0.1, lr_decay=0.95, batch_size=8, seed=5)
    state, _ = run_fedavg(fed, cfg, p)
    central = p
    for t in range(cfg.rounds):
        central = local_train(central, d, cfg.local_epochs, cfg.lr_at(t), cfg.batch_size,
                              client_stream(cfg.seed, 0, t))
    checks["K=1 bitwise"] = state.params.equals(central)

    train = generate_blobs(3, 40, 2, 0.5, seed=3)
    fed = FederationData(partition(train, PartitionSpec("dirichlet", 5, 0.3, 3)),
                         generate_blobs(3, 5, 2, 0.5, seed=4))
    run_fedavg(fed, FederationConfig(rounds=6), p, exclude={3})
    checks["excluded untouched"] = fed.access_counts[3] == 0
    ok = all(checks.values())
    assert verdict(4, ok, ", ".join(f"{k}={v}" for k, v in checks.items()))


# ---------------------------------------------------------------- 5

def test_criterion_5_byte_cost(verdict):
    arch = MLPArchitecture((2, 16, 3))
    train = generate_blobs(3, 40, 2, 0.5, seed=0)
    fed = FederationData(partition(train, PartitionSpec("dirichlet", 5, 0.3, 0)),
                         generate_blobs(3, 5, 2, 0.5, seed=1))
    p = init_params(arch, np.random.default_rng(0))
    state, _ = run_fedavg(fed, FederationConfig(rounds=3), p)
    one, _ = run_fedavg(fed, FederationConfig(rounds=1), p, exclude={0, 1, 3, 4})
    after = unlearning_round(state, p, 2)
    ok = after.last_round_bytes == one.last_round_bytes and \
        after.bytes_total - state.bytes_total == one.bytes_total
    assert verdict(5, ok, f"unlearning round {after.last_round_bytes} B, "
                          f"one-participant round {one.last_round_bytes} B")


# ---------------------------------------------------------------- 6 and 8

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cache = str(root / "cache")
    start = time.perf_counter()
    runs = {}
    for method, v in [("fedquit-logits", "0"), ("incompetent", "0")]:
        cfg = parse_config(DESK, {"unlearn.method": method, "unlearn.v": v,
                                  "experiment.cache": cache})
        runs[method] = run_pipeline(cfg, root / cfg.method_tag())
    return root, runs, time.perf_counter() - start


def test_criterion_6_desk_reproduction(desk_runs, verdict):
    _, runs, elapsed = desk_runs
    fq, inc = runs["fedquit-logits"].reports, runs["incompetent"].reports
    seeds = sorted({r.seed for r in fq})
    gap_ok = rounds_ok = 0
    lines = []
    for s in seeds:
        rs = [r for r in fq if r.seed == s]
        gap = np.mean([r.delta_forget_acc for r in rs])
        base = np.mean([abs(r.original["forget_acc"] - r.retrained["forget_acc"]) for r in rs])
        rounds = [r.recovery_rounds for r in rs]
        conv = all(x is not None for x in rounds)
        gap_ok += gap < base
        rounds_ok += conv and np.mean(rounds) < 60
        lines.append(f"seed {s}: gap {gap:.3f} vs {base:.3f}, rounds "
                     f"{np.mean(rounds) if conv else 'n/c'}")
    drop_fq = np.mean([r.test_acc_drop for r in fq])
    drop_inc = np.mean([r.test_acc_drop for r in inc])
    bullets = [gap_ok >= 4, rounds_ok >= 4, drop_fq < drop_inc, elapsed < 300]
    detail = (f"forget gap {gap_ok}/5, rounds<T {rounds_ok}/5, test drop {drop_fq:.4f} "
              f"vs incompetent {drop_inc:.4f}, {elapsed:.0f}s; " + "; ".join(lines))
    assert verdict(6, all(bullets), detail)


def test_criterion_7_mia_sanity(verdict):
    passes, bals = 0, []
    for seed in range(20):
        # few noisy points in 10 dimensions, memorized by a wide network
        train = generate_blobs(3, 10, 10, 1.5, seed=seed)
        held = generate_blobs(3, 50, 10, 1.5, seed=seed + 1000)
        p = init_params(MLPArchitecture((10, 64, 3)), np.random.default_rng(seed))
        p = local_train(p, train, 200, 0.1, 4, np.random.default_rng(seed))
        yeom = fit_mia_yeom(p, train)
        song = fit_mia_song(p, train, held, seed)
        bals.append(song.balanced_accuracy)
        passes += mia_rate(yeom, p, train) > mia_rate(yeom, p, held) \
            and song.balanced_accuracy > 0.6
    assert verdict(7, passes >= 18, f"{passes}/20 seeds, Song balanced accuracy "
                                    f"min {min(bals):.3f} mean {np.mean(bals):.3f}")


def test_criterion_8_sensitivity(desk_runs, tmp_path, verdict):
    root, _, _ = desk_runs
    cache = str(root / "cache")
    codes, reports = {}, []
    for method, v in VARIANTS:
        out = tmp_path / f"{method}_{v.replace('/', '-')}"
        codes[f"{method} v={v}"] = cli_main(["pipeline", "--config", str(DESK), "--out", str(out),
                                             "--method", method, "--v", v,
                                             "--set", f"experiment.cache={cache}"])
        reports.append(out / "report.json")
    rows = compare(reports, tmp_path / "table")
    with open(tmp_path / "table" / "comparison.csv") as fh:
        header = tuple(next(csv.reader(fh)))
    table = "; ".join(f"{r['method']}: rounds {r['rounds_mean']}, dF {r['delta_forget_acc_mean']:.3f}"
                      for r in rows)
    ok = all(c == 0 for c in codes.values()) and header == COMPARE_COLUMNS and len(rows) == 4
    assert verdict(8, ok, f"exit codes {codes}; {table}")


# ---------------------------------------------------------------- 9

def test_criterion_9_centralized_robustness(verdict):
    arch = MLPArchitecture((2, 16, 3))
    passes, lines = 0, []
    for seed in range(5):
        data = generate_blobs(3, 300, 2, 0.8, seed=seed)
        test = generate_blobs(3, 100, 2, 0.8, seed=seed + 100)
        fed = FederationData(partition(data, PartitionSpec("dirichlet", 5, 0.3, seed)), test)
        forget, retain = forget_retain_split(fed, 0)
        init = init_params(arch, np.random.default_rng(seed))
        original = local_train(init, data, 30, 0.05, 32, np.random.default_rng(seed))
        retrained = local_train(init, retain, 30, 0.05, 32, np.random.default_rng(seed))
        models = centralized_fedquit(original, forget, retain,
                                     UnlearnConfig(lr=1e-2, seed=seed), 3)
        target = accuracy(retrained, forget)
        table = [model_metrics(m, forget, retain, test, seed) for m in models]
        deltas = [abs(m.forget_acc - target) for m in table]
        passes += deltas[3] - deltas[1] <= 0.15
        lines.append(f"seed {seed}: " + " ".join(
            f"e{e}(F {m.forget_acc:.2f} R {m.retain_acc:.2f} S {m.mia_song:.2f} "
            f"Y {m.mia_yeom:.2f})" for e, m in enumerate(table)))
    assert verdict(9, passes >= 4, f"{passes}/5 seeds with delta growth <= 0.15; "
                   + "; ".join(lines))
