"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line; the lines are echoed at the end
of the pytest run. Runtime budgets are asserted alongside the criteria.
"""

import csv
import math
import time

import numpy as np
import pytest

from vqjscc import autodiff as ad
from vqjscc import channel as ch
from vqjscc import modem
from vqjscc.autodiff import Tensor
from vqjscc.checkpoint import save_checkpoint
from vqjscc.cli import parameter_counts, run_command
from vqjscc.codec import CodecConfig, JSCCModel, forward_awgn, forward_fading, transmit_awgn, transmit_fading
from vqjscc.config import RunConfig
from vqjscc.data import synthetic_images
from vqjscc.gradcheck import TOLERANCE, run_suite
from vqjscc.layers import Conv1d, Conv2d, dense_head_size, lora_head_size
from vqjscc.metrics import psnr
from vqjscc.training import TrainConfig, train
from vqjscc.vq import LossWeights, dequantize

LINES = []


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# shared toy training run (criteria 4 and 8)
# ---------------------------------------------------------------------------

TOY_PHASE1_STEPS = 2000
TOY_PHASE2_STEPS = 1000
# Phase 1 uses a larger step than the full-scale schedule so that 2000 steps
# on 64 patches are enough to see a channel-quality response.
TOY_PHASE1 = TrainConfig(lr=1e-3, patience=1000, seed=0)
TOY_PHASE2 = TrainConfig(lr=1e-4, patience=1000, seed=0, T_min=8, T_max=16)


@pytest.fixture(scope="module")
def toy():
    t0 = time.perf_counter()
    train_set = synthetic_images(64, 3, 16, 16, np.random.default_rng(0))
    val_set = synthetic_images(16, 3, 16, 16, np.random.default_rng(1))
    model = JSCCModel(CodecConfig(seed=0))
    r1 = train(model, train_set, TOY_PHASE1, 1, TOY_PHASE1_STEPS, val_set=val_set, val_every=200)
    psnr_by_eta = {}
    for eta in (0.0, 26.0):
        vals = []
        for i, X in enumerate(val_set):
            X_hat, _ = transmit_awgn(X, eta, model, np.random.default_rng([3, i]))
            vals.append(psnr(X, X_hat))
        psnr_by_eta[eta] = float(np.mean(vals))
    phase1_state = {n: p.data.copy() for n, p in model.named_parameters()}
    nonzero = {}

    def watch(step):
        for name, v in step.group_grad_norms.items():
            nonzero[name] = nonzero.get(name, 0) + (v > 0)

    r2 = train(model, train_set, TOY_PHASE2, 2, TOY_PHASE2_STEPS, val_set=val_set, val_every=100, on_step=watch, restore_best=False)
    return {
        "model": model, "phase1": r1, "phase2": r2, "psnr": psnr_by_eta, "nonzero": nonzero,
        "phase1_state": phase1_state, "seconds": time.perf_counter() - t0, "val_set": val_set,
    }


# ---------------------------------------------------------------------------
# 1. modem oracle
# ---------------------------------------------------------------------------

def test_criterion_1_modem_oracle():
    t0 = time.perf_counter()
    n = 1_000_000
    worst, fails = 0.0, []
    for k in range(1, 6):
        for gi, eta in enumerate((0.0, 5.0, 12.0, 20.0, 26.0)):
            p = modem.analytic_ser(k, eta)
            emp = modem.empirical_ser(k, eta, n, np.random.default_rng([1, k, gi]))
            sd = math.sqrt(p * (1 - p) / n)
            z = abs(emp - p) / sd if sd > 0 else (0.0 if emp == 0 else math.inf)
            worst = max(worst, z)
            if z > 3:
                fails.append((k, eta, emp, p))
    p16 = modem.analytic_ser(3, 12.0)
    seconds = time.perf_counter() - t0
    ok = not fails and abs(p16 - 0.109) < 1e-3 and seconds < 60
    record(1, ok, f"worst |emp-analytic| = {worst:.2f} sd over 25 points, 16QAM@12dB SER {p16:.4f}, {seconds:.0f}s")
    assert not fails, fails
    assert abs(p16 - 0.109) < 1e-3
    assert seconds < 60


# ---------------------------------------------------------------------------
# 2. gradient suite
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    res = run_suite(seeds=range(10))
    seconds = time.perf_counter() - t0
    worst_name = max(res, key=res.get)
    ok = all(v < TOLERANCE for v in res.values()) and seconds < 300
    record(2, ok, f"{len(res)} families x 10 seeds, worst {worst_name} {res[worst_name]:.2e} (< {TOLERANCE:g}), {seconds:.0f}s")
    assert all(v < TOLERANCE for v in res.values()), res
    assert seconds < 300


# ---------------------------------------------------------------------------
# 3. structural invariants
# ---------------------------------------------------------------------------

ETA_FOR_K = {1: 0.0, 2: 8.0, 3: 16.0, 4: 23.0, 5: 30.0}


def _structural_checks():
    rng = np.random.default_rng(0)
    model = JSCCModel(CodecConfig(seed=0))
    cfg = model.cfg
    X = rng.uniform(size=(2, 3, 16, 16))
    checks = {}

    x = Tensor(rng.standard_normal((2, 8, 4, 4)))
    conv = Conv2d(8, 32, 5, 1, 2, rng)
    conv1 = Conv1d(8, 32, 5, 1, 2, rng)
    x1 = Tensor(rng.standard_normal((2, 8, 6)))
    checks["slimmable slice"] = all(
        np.array_equal(conv(x, d).data, ad.conv2d(x, Tensor(conv.weight.data[:d]), Tensor(conv.bias.data[:d]), 1, 2).data)
        and np.array_equal(conv1(x1, d).data, ad.conv1d(x1, Tensor(conv1.weight.data[:d]), Tensor(conv1.bias.data[:d]), 1, 2).data)
        for d in cfg.D
    )
    checks["codebook tx/rx"] = all(
        np.array_equal(model.dcg.generate(e, k).data, model.dcg.generate(e, k).data)
        for k in range(1, 6) for e in (-5.0, 7.3, 35.0)
    )

    ok = True
    with ad.no_grad():
        for k, eta in ETA_FOR_K.items():
            real = ch.ChannelRealization(h=np.ones(1, dtype=complex), sigma2=0.0, P=1.0, block_lengths=(cfg.N,), eta_a_db=eta)
            p = forward_fading(model, X, real, rng)
            b = p.blocks[0]
            Yq = dequantize(b.z_tx, model.dcg.generate(eta, k)).reshape(2, cfg.N, cfg.width(k))
            ok &= b.symbol_errors == 0 and np.array_equal(p.X_hat.data, model.outer_decode(Yq, eta).data)
    checks["noiseless round trip"] = bool(ok)

    cases = [((1024, 256), [256] * 4), ((1000, 300), [300, 300, 300, 100]), ((100, 1024), [100]), ((16, 12), [12, 4])]
    checks["block partition"] = all(ch.partition(*a) == b for a, b in cases)

    ok = True
    for eta in (-3.0, 5.0, 12.0, 19.9, 26.0, 33.0):
        a, ta = transmit_awgn(X, eta, model, np.random.default_rng(5))
        b, tb = transmit_fading(X, ch.awgn_realization(cfg.N, eta), model, np.random.default_rng(5))
        ok &= np.array_equal(a, b) and ta == tb
    checks["single-block fading == awgn"] = bool(ok)

    checks["power"] = all(
        abs(np.mean(np.abs(modem.modulate(np.arange(m), modem.build_constellation(k), P)) ** 2) - P) < 1e-9
        for k, m in enumerate(modem.ORDERS, 1) for P in (0.5, 1.0, 2.0)
    )

    ok = True
    for ka in range(1, 6):
        for ki in range(1, 6):
            for T in (1, 7):
                Y = Tensor(rng.standard_normal((2, T, cfg.width(ka))))
                Yi = model.inner_encode(Y, ETA_FOR_K[ka], ETA_FOR_K[ki])
                back = model.inner_decode(Yi, ETA_FOR_K[ki], ETA_FOR_K[ka])
                ok &= Yi.shape == (2, T, cfg.width(ki)) and back.shape == (2, T, cfg.width(ka))
    checks["25 order pairs"] = bool(ok)
    return checks


def test_criterion_3_structural_invariants():
    t0 = time.perf_counter()
    checks = _structural_checks()
    seconds = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    record(3, not bad and seconds < 120, f"{len(checks) - len(bad)}/{len(checks)} invariants hold, {seconds:.0f}s" + (f", failing: {bad}" if bad else ""))
    assert not bad
    assert seconds < 120


# ---------------------------------------------------------------------------
# 4. toy end-to-end training
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_toy_training(toy):
    r1, r2 = toy["phase1"], toy["phase2"]
    first, last = r1.steps[0].total, r1.steps[-1].total
    gain = toy["psnr"][26.0] - toy["psnr"][0.0]
    increase = r2.final_metric / r2.baseline - 1
    groups_ok = all(toy["nonzero"].get(g, 0) == len(r2.steps) for g in ("outer_encoder", "outer_decoder", "dcg", "inner_encoder", "inner_decoder"))
    checks = [
        len(r1.steps) <= TOY_PHASE1_STEPS and last < 0.5 * first,
        gain >= 1.0,
        len(r2.steps) <= TOY_PHASE2_STEPS and increase <= 0.10,
        groups_ok,
        toy["seconds"] < 1800,
    ]
    record(
        4, all(checks),
        f"loss {first:.3f} -> {last:.3f}; PSNR {toy['psnr'][0.0]:.2f} dB @0 vs {toy['psnr'][26.0]:.2f} dB @26; "
        f"phase-2 val {r2.baseline:.4f} -> {r2.final_metric:.4f} ({100 * increase:+.1f}%); "
        f"nonzero grads every step: {groups_ok}; {toy['seconds']:.0f}s",
    )
    assert last < 0.5 * first
    assert gain >= 1.0
    assert increase <= 0.10
    assert groups_ok
    assert toy["seconds"] < 1800


# ---------------------------------------------------------------------------
# 5. gradient masks
# ---------------------------------------------------------------------------

def _all_zero(params):
    return all(p.grad is None or not np.any(p.grad) for _, p in params)


def _any_nonzero(params):
    return any(p.grad is not None and np.any(p.grad) for _, p in params)


def test_criterion_5_gradient_masks():
    rng = np.random.default_rng(4)
    model = JSCCModel(CodecConfig(seed=1))
    X = rng.uniform(size=(2, 3, 16, 16))
    w = LossWeights()
    g = model.groups

    # Phase 1: the full objective never touches the inner codec
    model.inner_enabled = False
    model.zero_grad()
    forward_awgn(model, X, 14.0, rng).loss(X, w).total.backward()
    phase1_ok = _all_zero(g()["inner_encoder"] + g()["inner_decoder"]) and _any_nonzero(g()["dcg"])

    # codebook term reaches only the codebook generator, commitment only the encoder
    model.inner_enabled = True
    real = ch.ChannelRealization(h=np.array([1.0, 0.7j]), sigma2=0.02, P=1.0, block_lengths=(10, 6))
    model.zero_grad()
    forward_fading(model, X, real, rng).loss(X, w).codebook.backward()
    cb_ok = _any_nonzero(g()["dcg"]) and _all_zero(g()["outer_encoder"] + g()["inner_encoder"] + g()["outer_decoder"] + g()["inner_decoder"])
    model.zero_grad()
    forward_fading(model, X, real, rng).loss(X, w).commitment.backward()
    cm_ok = (
        _any_nonzero(g()["outer_encoder"]) and _any_nonzero(g()["inner_encoder"])
        and _all_zero(g()["dcg"] + g()["outer_decoder"] + g()["inner_decoder"])
    )
    record(5, phase1_ok and cb_ok and cm_ok, f"phase-1 inner grads exactly zero: {phase1_ok}; codebook term -> generator only: {cb_ok}; commitment term -> encoders only: {cm_ok}")
    assert phase1_ok and cb_ok and cm_ok


# ---------------------------------------------------------------------------
# 6. low-rank head size
# ---------------------------------------------------------------------------

def test_criterion_6_lora_head_size(capsys):
    lora, dense = lora_head_size(32, 4), dense_head_size(32)
    rc = run_command(["info"])
    out = capsys.readouterr().out
    rows = dict(line.split(",") for line in out.strip().splitlines()[1:])
    ratio = float(rows["hypernetwork_dense_to_lora_ratio"])
    counts = dict(parameter_counts(JSCCModel()))
    ok = (
        rc == 0 and lora == 288 and dense == 1056 and round(dense / lora, 2) == 3.67
        and counts["hypernetworks"] < counts["hypernetworks_dense_equivalent"] and ratio > 3.0
    )
    record(6, ok, f"head {lora} vs {dense} ({dense / lora:.2f}x); info: hypernetworks {counts['hypernetworks']} vs dense {counts['hypernetworks_dense_equivalent']} ({ratio:.2f}x)")
    assert ok


# ---------------------------------------------------------------------------
# 7. evaluation protocol
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_evaluation_protocol(tmp_path):
    t0 = time.perf_counter()
    ckpt = tmp_path / "phase2.ckpt"
    save_checkpoint(JSCCModel(CodecConfig(seed=0)), ckpt, 2)
    outs = []
    for name in ("a", "b"):
        assert run_command(["eval-fading", "--checkpoint", str(ckpt), "--out", str(tmp_path / name)]) == 0
        outs.append([(tmp_path / name / f).read_bytes() for f in ("eval_fading_summary.csv", "eval_fading_blocks.csv")])
    seconds = (time.perf_counter() - t0) / 2
    with open(tmp_path / "a" / "eval_fading_blocks.csv") as f:
        blocks = list(csv.DictReader(f))
    with open(tmp_path / "a" / "eval_fading_summary.csv") as f:
        summary = list(csv.DictReader(f))
    per_image = {}
    for r in blocks:
        per_image.setdefault((r["eta_a_db"], r["T"], r["image"]), set()).add(r["realization"])
    default_ok = RunConfig().eval.realizations == 50 and all(r["realizations"] == "50" for r in summary)
    counts_ok = all(len(v) == 50 for v in per_image.values())
    min_eta = min(float(r["eta_i_db"]) for r in blocks)
    repro = outs[0] == outs[1]
    ok = default_ok and counts_ok and min_eta >= -5.0 and repro and seconds < 300
    record(7, ok, f"{len(per_image)} (snr, T, image) cells x 50 realizations; min block SNR {min_eta:.2f} dB; reproducible: {repro}; {seconds:.0f}s per run")
    assert default_ok and counts_ok
    assert min_eta >= -5.0
    assert repro
    assert seconds < 300


# ---------------------------------------------------------------------------
# 8. codebook dispersion (reported, not gated)
# ---------------------------------------------------------------------------

def _mean_pairwise(C):
    d = np.sqrt(((C[:, None, :] - C[None, :, :]) ** 2).sum(-1))
    m = len(C)
    return d.sum() / (m * (m - 1))


@pytest.mark.slow
def test_criterion_8_codebook_dispersion(toy):
    model = toy["model"]
    edges = (-5.0,) + model.cfg.boundaries + (35.0,)
    rows, wins = [], 0
    with ad.no_grad():
        for k in range(1, 6):
            lo, hi = edges[k - 1], edges[k]
            bottom = _mean_pairwise(model.dcg.generate(lo, k).data)
            top = _mean_pairwise(model.dcg.generate(hi - 1e-6, k).data)
            wins += top >= bottom
            rows.append(f"k={k} {bottom:.3f}->{top:.3f}")
    distinct = np.linalg.norm(model.dcg.generate(13.0, 3).data - model.dcg.generate(18.0, 3).data) > 0
    record(8, wins >= 4, f"(reported only) top >= bottom for {wins}/5 orders [{'; '.join(rows)}]; 13 vs 18 dB codebooks distinct: {distinct}")
    assert distinct
