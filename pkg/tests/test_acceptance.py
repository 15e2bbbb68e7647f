"""Acceptance criteria 1-10; each test records a PASS/FAIL/WARN line shown after the run."""

import math
import subprocess
import sys
import time
import warnings

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from conftest import VERDICTS
from cwdae.autodiff import Tape
from cwdae.cramer_wold import (MixtureMeasureConfig, cw_distance_sq, marginal_cw_sq, mix_cw_distance_sq,
                               phi_D, psi_d, silverman_gamma)
from cwdae.data import Column, TabularSchema, encode
from cwdae.heads import AnnealSchedule, SplineParams, gumbel_max_sample, quantile, temperature
from cwdae.metrics import attribute_disclosure, dcr, ks_statistic, log_cluster, pcd, w1_distance
from cwdae.model import Streams, TrainConfig, init_model, loss, train
from cwdae.synthesis import SynthesisRequest, generate
from oracles import block_rel_err, mc_slicing_cw, numeric_grad, psi_reference
from test_model import MIXED, mixed_frame


def verdict(n, checks, elapsed=None, limit=None):
    """Record one line per criterion, then assert every check."""
    if limit is not None:
        checks = [*checks, (elapsed < limit, f"runtime {elapsed:.1f}s < {limit:.0f}s")]
    ok = all(c for c, _ in checks)
    text = "; ".join(t for _, t in checks)
    VERDICTS.append((n, "PASS" if ok else "FAIL", text))
    for c, t in checks:
        assert c, t


def test_criterion_1_closed_form_vs_mc_slicing():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(16, 25)), rng.normal(0.4, 1.1, size=(16, 25))
    g = silverman_gamma(16)
    joint, mc = cw_distance_sq(X, Y).item(), mc_slicing_cw(X, Y, g, 100_000, seed=2)
    Xl, Yl = rng.normal(size=(16, 2)), rng.normal(0.4, 1.1, size=(16, 2))
    lat, mcl = cw_distance_sq(Xl, Yl, dim_kind="latent").item(), mc_slicing_cw(Xl, Yl, g, 100_000, seed=3)
    e1, e2 = abs(joint - mc) / mc, abs(lat - mcl) / mcl
    verdict(1, [(e1 <= 0.05, f"D=25 rel err {e1:.4f} <= 0.05"), (e2 <= 0.01, f"d=2 rel err {e2:.4f} <= 0.01")],
            time.perf_counter() - t0, 60)


def test_criterion_2_mixture_decomposition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, exact = 0.0, True
    for _ in range(100):
        n, D = int(rng.integers(2, 20)), int(rng.integers(2, 8))
        X, Y = rng.normal(size=(n, D)), rng.normal(size=(n, D)) * rng.uniform(0.5, 2)
        pi = float(rng.uniform())
        g = silverman_gamma(n)
        joint, marg = cw_distance_sq(X, Y, g).item(), marginal_cw_sq(X, Y, gamma=g).item()
        mix = mix_cw_distance_sq(X, Y, MixtureMeasureConfig(pi)).item()
        worst = max(worst, abs(mix - (pi * marg + (1 - pi) * joint)))
        exact &= mix_cw_distance_sq(X, Y, MixtureMeasureConfig(0.0)).item() == joint
        exact &= mix_cw_distance_sq(X, Y, MixtureMeasureConfig(1.0)).item() == marg
    verdict(2, [(worst <= 1e-12, f"max decomposition error {worst:.2e} <= 1e-12"),
                (exact, "pi=0 and pi=1 collapse exactly")], time.perf_counter() - t0, 5)


def test_criterion_3_special_functions():
    t0 = time.perf_counter()
    s = np.linspace(0.0, 100.0, 1001)
    ref = np.array([psi_reference(v) for v in s])
    err = float(np.max(np.abs(psi_d(s) - ref) / ref))
    grid = np.linspace(0.0, 100.0, 1000)
    phi = phi_D(grid, 25)
    verdict(3, [(err <= 2e-7, f"psi max rel err {err:.2e} <= 2e-7 on [0, 100]"),
                (phi_D(0.0, 25) == 1.0, "phi_D(0, 25) = 1"),
                (bool(np.all(np.diff(phi) < 0)), "phi_D strictly decreasing on a 1000-point grid")],
            time.perf_counter() - t0, 5)


def test_criterion_4_gradient_integrity():
    t0 = time.perf_counter()
    ds = encode(mixed_frame(4, seed=5), MIXED)
    cfg = TrainConfig(pi=0.3)
    m = init_model(MIXED, cfg)
    names = list(m.params)
    with Tape() as tape:
        total, _ = loss(m, ds.matrix, cfg, 0.8, Streams(11), hard=False)
    grads = tape.gradient(total, [m.params[k] for k in names])
    errs = {}
    for k, g in zip(names, grads):
        num = numeric_grad(lambda: loss(m, ds.matrix, cfg, 0.8, Streams(11), hard=False)[1].total,
                           m.params[k].data, h=1e-5)
        errs[k] = block_rel_err(g, num)
    worst = max(errs, key=errs.get)
    verdict(4, [(errs[worst] <= 1e-4, f"{len(names)} parameter blocks, worst {worst} rel err {errs[worst]:.2e} <= 1e-4")],
            time.perf_counter() - t0, 120)


def test_criterion_5_quantile_head():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    monotone, anchored = True, True
    for _ in range(10_000):
        sp = SplineParams(float(rng.normal() * 3), rng.normal(size=11) * 4)
        a1, a2 = np.sort(rng.uniform(size=2))
        monotone &= quantile(sp, a1) <= quantile(sp, a2)
        anchored &= quantile(sp, 0.0) == sp.intercept
    verdict(5, [(bool(monotone), "Q(a1) <= Q(a2) for 10^4 draws"), (bool(anchored), "Q(0) = intercept exactly")],
            time.perf_counter() - t0, 5)


def test_criterion_6_sampling_exactness():
    rng = np.random.default_rng(6)
    pvals = []
    for _ in range(20):
        p = rng.dirichlet(np.full(int(rng.integers(2, 7)), 2.0))
        idx = gumbel_max_sample(np.tile(p, (100_000, 1)), rng)
        pvals.append(stats.chisquare(np.bincount(idx, minlength=p.size), p * 100_000).pvalue)
    s = AnnealSchedule(0.2)
    temps = [temperature(s, e) for e in (0, 92, 200)]
    want = [max(10.0 * math.exp(-0.025 * e), 0.2) for e in (0, 92, 200)]
    verdict(6, [(min(pvals) > 0.01, f"min chi-square p-value {min(pvals):.3f} > 0.01 over 20 simplices"),
                (temps == want and temps[0] == 10.0 and temps[2] == 0.2,
                 f"temperatures at epochs 0, 92, 200 = {[round(t, 4) for t in temps]}")])


def test_criterion_7_metric_oracles():
    t0 = time.perf_counter()
    checks = []
    checks.append((ks_statistic([1, 2, 3], [1, 2, 3]) == 0 and ks_statistic([0, 0], [1, 1]) == 1.0
                   and ks_statistic([1, 2], [1, 3]) == 0.5, "KS fixtures"))
    checks.append((w1_distance([1, 2, 3], [3, 1, 2]) == 0 and abs(w1_distance([0, 1], [1, 2]) - 1) < 1e-15
                   and abs(w1_distance([0], [0, 2]) - 1) < 1e-15, "W1 fixtures"))
    real = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    rng = np.random.default_rng(7)
    R, S = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    checks.append((pcd(real, real) == 0 and abs(pcd(real, real[:, [0, 0]]) - math.sqrt(2)) < 1e-14
                   and abs(pcd(R, S[rng.permutation(30)]) - pcd(R, S)) < 1e-14, "PCD fixtures"))
    grid = np.arange(10.0) * 10.0
    G = np.column_stack([np.repeat(grid, 10), np.tile(grid, 10)])
    dup = np.vstack([G[:5], G[:5]])
    checks.append((dcr(G, G)[0] == 0 and abs(dcr(G, G + [0.6, 0.8])[0] - 1.0) < 1e-12 and dcr(G, dup)[1] == 0,
                   "DCR fixtures"))
    X = rng.normal(size=(200, 3))
    a, b = rng.normal(size=(120, 2)), rng.normal(0.5, 1.0, size=(120, 2))
    checks.append((log_cluster(X, X.copy()) == math.log(1e-12)
                   and abs(log_cluster(a[:100], a[:100] + 1000.0) - math.log(0.25)) < 1e-12
                   and abs(log_cluster(a, b) - log_cluster(b, a)) < 1e-12, "log-cluster fixtures"))
    cont = rng.normal(size=(2000, 2))
    codes = rng.integers(0, 2, size=(2000, 1))
    shuffled = attribute_disclosure(cont, codes, cont, rng.permutation(codes), [2], 1)
    checks.append((attribute_disclosure(cont, codes, cont, codes, [2], 1) == 1.0 and abs(shuffled - 0.5) <= 0.05,
                   "attribute-disclosure fixtures"))
    verdict(7, checks, time.perf_counter() - t0, 30)


# ---- shared pi sweep for criteria 8 and 10 ----

SWEEP_PIS = (0.05, 0.9)
SWEEP_SEEDS = range(5)
TOY = TabularSchema((Column("x1", "continuous"), Column("x2", "continuous"), Column("b", "discrete", ("no", "yes"))))


def toy_frame(n=5000, rho=0.7, seed=2024):
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=n)
    b = np.where(x[:, 0] + 0.5 * rng.standard_normal(n) > 0, "yes", "no")
    return pd.DataFrame({"x1": x[:, 0], "x2": x[:, 1], "b": b})


def toy_metrics(ds, synth):
    enc = ds.encoder
    R, S = ds.matrix, enc.transform(synth)
    rcodes = (ds.frame["b"] == "yes").to_numpy(dtype=int)[:, None]
    scodes = (synth["b"] == "yes").to_numpy(dtype=int)[:, None]
    return {"ks": np.mean([ks_statistic(ds.frame[c], synth[c]) for c in ("x1", "x2")]),
            "w1": np.mean([w1_distance(R[:, j], S[:, j]) for j in range(2)]),
            "pcd": pcd(R, S),
            "dcr": dcr(R[:, :2], S[:, :2])[0],
            "ad": attribute_disclosure(R[:, :2], rcodes, S[:, :2], scodes, [2], 1)}


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    ds = encode(toy_frame(), TOY)
    runs = []
    for pi in SWEEP_PIS:
        for seed in SWEEP_SEEDS:
            cfg = TrainConfig(epochs=100, pi=pi, seed=seed)
            model, _ = train(ds, cfg)
            fresh = init_model(TOY, cfg, ds.encoder.mean_, ds.encoder.scale_, len(ds))
            runs.append({"pi": pi, "seed": seed,
                         "synth": toy_metrics(ds, generate(model, SynthesisRequest(len(ds), seed))),
                         "base": toy_metrics(ds, generate(fresh, SynthesisRequest(len(ds), seed)))})
    return runs, time.perf_counter() - t0


def mean_of(runs, pi, key):
    return float(np.mean([r["synth"][key] for r in runs if r["pi"] == pi]))


@pytest.mark.slow
def test_criterion_8_trend_reproduction(sweep):
    runs, elapsed = sweep
    lo, hi = SWEEP_PIS
    w_lo, w_hi = mean_of(runs, lo, "w1"), mean_of(runs, hi, "w1")
    p_lo, p_hi = mean_of(runs, lo, "pcd"), mean_of(runs, hi, "pcd")
    beat = [r["synth"]["ks"] < r["base"]["ks"] and r["synth"]["pcd"] < r["base"]["pcd"] for r in runs]
    verdict(8, [(w_hi <= w_lo, f"(a) mean W1 pi=0.9 {w_hi:.4f} <= pi=0.05 {w_lo:.4f}"),
                (p_hi >= p_lo, f"(b) mean PCD pi=0.9 {p_hi:.4f} >= pi=0.05 {p_lo:.4f}"),
                (all(beat), f"(c) KS and PCD beat the untrained baseline in {sum(beat)}/{len(beat)} runs")],
            elapsed, 15 * 60)


@pytest.mark.slow
def test_criterion_10_privacy_direction(sweep):
    runs, _ = sweep
    lo, hi = SWEEP_PIS
    d_lo, d_hi = mean_of(runs, lo, "dcr"), mean_of(runs, hi, "dcr")
    a_lo, a_hi = mean_of(runs, lo, "ad"), mean_of(runs, hi, "ad")
    text = (f"mean DCR(R,S) {d_lo:.5f} -> {d_hi:.5f} (expect increase); "
            f"mean AD(F1,1) {a_lo:.4f} -> {a_hi:.4f} (expect decrease)")
    if d_hi > d_lo and a_hi < a_lo:
        VERDICTS.append((10, "PASS", text))
    else:
        # a wrong direction on the toy data is reported, not failed
        VERDICTS.append((10, "WARN", text))
        warnings.warn(f"privacy knob direction not observed on the toy data: {text}")


def test_criterion_9_determinism(tmp_path):
    data = toy_frame(n=400, seed=9)
    data.to_csv(tmp_path / "data.csv", index=False)
    (tmp_path / "toy.schema").write_text(TOY.to_text())

    def cli(*args):
        out = subprocess.run([sys.executable, "-m", "cwdae.cli", *args], capture_output=True, text=True)
        assert out.returncode == 0, out.stderr

    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        cli("train", "--data", str(tmp_path / "data.csv"), "--schema", str(tmp_path / "toy.schema"),
            "--out", str(d / "train"), "--epochs", "3", "--batch-size", "128", "--train-fraction", "0.8",
            "--seed", "4")
        cli("generate", "--checkpoint", str(d / "train" / "model.ckpt"), "--seed", "5", "--out", str(d / "gen"))
        cli("evaluate", "--real-train", str(d / "train" / "train.csv"), "--real-test", str(d / "train" / "test.csv"),
            "--synth", str(d / "gen" / "synthetic.csv"), "--schema", str(tmp_path / "toy.schema"),
            "--out", str(d / "eval"))
        outputs.append({name: (d / name).read_bytes() for name in (
            "train/model.ckpt", "train/loss_history.csv", "gen/synthetic.csv", "eval/report.csv",
            "eval/report_columns.csv")})
    same = [k for k in outputs[0] if outputs[0][k] == outputs[1][k]]
    verdict(9, [(len(same) == len(outputs[0]), f"byte-identical across two invocations: {', '.join(same)}")])
