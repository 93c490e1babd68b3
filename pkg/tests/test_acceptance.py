"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The benchmark criteria (5-8) train 5 seeds x 200 epochs per configuration;
runs are cached for the session so shared configurations train once. The
full file takes several minutes on one core.
"""
import math
import statistics
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ial.cli import main, read_metric_csv
from ial.gradcheck import TOLERANCE, run_gradcheck
from ial.harness import RunConfig, run
from ial.ial import IalConfig, decoder_stage, encoder_stage, f_weight, normalize_aux_grad, train_step
from ial.metrics import delta_mtl
from ial.net import TaskSpec, forward, init_net

from test_ial import _oracle_step, small_batch, small_net

FIXTURES = Path(__file__).parent / "fixtures"
SEEDS = (0, 1, 2, 3, 4)


# -- shared benchmark runs ---------------------------------------------------------


@pytest.fixture(scope="session")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")

    @lru_cache(maxsize=None)
    def get(scenario, strategy, params=(), freeze=None):
        label = f"{scenario}-{strategy}-" + "-".join(f"{k}={v}" for k, v in params) + f"-freeze={freeze}"
        cfg = RunConfig(
            scenario=scenario,
            strategy=strategy,
            strategy_params=dict(params),
            freeze=freeze,
            seeds=SEEDS,
            out=str(root),
            label=label,
        )
        return run(cfg).summary

    return get


def primary_metrics(summary):
    return [summary["per_seed"][str(s)]["metrics"]["primary"] for s in SEEDS]


def fmt(values):
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


# -- 1. published relative improvements -------------------------------------------


def test_criterion_1_delta_mtl_reproduction(report_criterion, capsys):
    got = {}
    for name, expected in (("nyuv2", -0.44), ("cityscapes", 8.22)):
        multi = read_metric_csv(FIXTURES / f"{name}_multi.csv")
        single = read_metric_csv(FIXTURES / f"{name}_single.csv")
        code = main(["dmtl", "--multi", str(FIXTURES / f"{name}_multi.csv"), "--single", str(FIXTURES / f"{name}_single.csv")])
        printed = float(capsys.readouterr().out.strip())
        got[name] = (delta_mtl(multi, single), printed, expected, code)
    ok = all(code == 0 and abs(v - e) <= 0.01 and abs(p - e) <= 0.01 for v, p, e, code in got.values())
    report_criterion(1, ok, ", ".join(f"{k} {v:+.4f}% (expected {e:+.2f}%)" for k, (v, _, e, _) in got.items()))
    assert ok


# -- 2. gradient suite -------------------------------------------------------------


def test_criterion_2_gradcheck(report_criterion):
    start = time.process_time()
    errors = run_gradcheck(n_cases=100, seed=0)
    cpu = time.process_time() - start
    worst = max(errors.values())
    ok = worst < TOLERANCE and cpu < 10.0 and len(errors) >= 9
    report_criterion(2, ok, f"max rel err {worst:.2e} over {len(errors)} checks x 100 cases, {cpu:.1f}s CPU")
    assert ok


# -- 3. structural invariants --------------------------------------------------------


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, 8, elements=finite), arrays(np.float64, 8, elements=finite))
def _norm_property(g_aux, g_pri):
    out = normalize_aux_grad(g_aux, g_pri)
    n_pri, n_aux = np.linalg.norm(g_pri), np.linalg.norm(g_aux)
    if n_aux > 0 and n_pri > 0:
        assert abs(np.linalg.norm(out) - n_pri) <= 1e-12 * n_pri


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-8, 1e4), st.sampled_from(["clamp", "softplus"]))
def _f_property(sig, g_map):
    assert 0.0 <= f_weight(sig, IalConfig(g_map=g_map)) <= 1.0


def _impartial(seed):
    net = small_net(seed)
    net.eta["aux"] = 2 * math.log(0.5)
    x, y = small_batch(seed)
    base = decoder_stage(forward(net, x, y), net)
    pert = decoder_stage(forward(net, x, dict(y, aux=(y["aux"] + 1) % 3)), net)
    same = all(np.array_equal(a, b) for a, b in zip(base.decoder["pri"], pert.decoder["pri"]))
    return same and base.eta["pri"] == pert.eta["pri"]


def _collapse(seed):
    net = small_net(seed)
    net.eta["aux"] = 2 * math.log(2.0)  # f = 0
    x, y = small_batch(seed)
    single = init_net([3, 5, 4], [net.task("pri")], 0)
    single.encoder_params = [p.copy() for p in net.encoder_params]
    single.decoder_params = {"pri": [p.copy() for p in net.decoder_params["pri"]]}
    for _ in range(5):
        rep = train_step(net, (x, y))
        train_step(single, (x, {"pri": y["pri"]}))
        assert rep.encoder_weights["pri"] == 1.0
    return all(np.array_equal(a, b) for a, b in zip(net.encoder_params, single.encoder_params))


def test_criterion_3_structural_invariants(report_criterion):
    start = time.perf_counter()
    checks = {}
    for name, fn in (("norm equality", _norm_property), ("f range", _f_property)):
        try:
            fn()
            checks[name] = True
        except AssertionError:
            checks[name] = False
    checks["impartiality"] = all(_impartial(s) for s in range(5))
    checks["single-task collapse"] = all(_collapse(s) for s in range(5))
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 30
    report_criterion(3, ok, ", ".join(f"{k} {'ok' if v else 'broken'}" for k, v in checks.items()) + f" ({elapsed:.1f}s)")
    assert ok


# -- 4. straight-line oracle ---------------------------------------------------------


def test_criterion_4_oracle(report_criterion):
    start = time.perf_counter()
    net = small_net(21)
    net.eta["aux"] = 2 * math.log(0.6)
    enc = [p.copy() for p in net.encoder_params]
    decs = {t: [p.copy() for p in v] for t, v in net.decoder_params.items()}
    etas = dict(net.eta)
    for step in range(10):
        x, y = small_batch(200 + step)
        train_step(net, (x, y))
        enc, decs, etas = _oracle_step(enc, decs, etas, x, y, {"pri": "mse", "aux": "softmax_ce"})
    diffs = [np.max(np.abs(a - b)) for a, b in zip(net.encoder_params, enc)]
    for t in decs:
        diffs += [np.max(np.abs(a - b)) for a, b in zip(net.decoder_params[t], decs[t])]
        diffs.append(abs(net.eta[t] - etas[t]))
    worst = float(max(diffs))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    report_criterion(4, ok, f"max |param diff| after 10 steps {worst:.2e} ({elapsed:.2f}s)")
    assert ok


# -- 5-8. benchmark comparisons ----------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_standard_superiority(bench, report_criterion):
    ial = primary_metrics(bench("standard", "ial"))
    uni = primary_metrics(bench("standard", "uniform"))
    fix = primary_metrics(bench("standard", "fixed", (("aux_weight", 0.1),)))
    wins = sum(a <= b for a, b in zip(ial, uni))  # primary is MSE: lower is better
    m_ial, m_uni, m_fix = map(statistics.fmean, (ial, uni, fix))
    ok = wins >= 4 and m_ial < m_uni and m_ial < m_fix
    report_criterion(
        5,
        ok,
        f"IAL <= uniform on {wins}/5 seeds; mean MSE IAL {m_ial:.4f}, uniform {m_uni:.4f}, fixed(0.1) {m_fix:.4f}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_6_pseudo_robustness(bench, report_criterion):
    d_ial = statistics.fmean(primary_metrics(bench("pseudo_noisy", "ial"))) - statistics.fmean(primary_metrics(bench("standard", "ial")))
    d_uni = statistics.fmean(primary_metrics(bench("pseudo_noisy", "uniform"))) - statistics.fmean(
        primary_metrics(bench("standard", "uniform"))
    )
    ok = d_ial < d_uni
    report_criterion(6, ok, f"primary MSE change with pseudo tasks: IAL {d_ial:+.4f}, uniform {d_uni:+.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_broken_decoder(bench, report_criterion):
    frozen = bench("broken_decoder", "ial")
    free = bench("broken_decoder", "ial", freeze=())
    task = "aux_reg"
    sig_frozen = statistics.fmean(frozen["per_seed"][str(s)]["sigma"][task] for s in SEEDS)
    sig_free = statistics.fmean(free["per_seed"][str(s)]["sigma"][task] for s in SEEDS)
    f_frozen = statistics.fmean(frozen["per_seed"][str(s)]["f_sigma_last_quarter"][task] for s in SEEDS)
    f_free = statistics.fmean(free["per_seed"][str(s)]["f_sigma_last_quarter"][task] for s in SEEDS)
    d_ial = statistics.fmean(primary_metrics(frozen)) - statistics.fmean(primary_metrics(free))
    d_uw = statistics.fmean(primary_metrics(bench("broken_decoder", "uw"))) - statistics.fmean(
        primary_metrics(bench("broken_decoder", "uw", freeze=()))
    )
    parts = {"sigma": sig_frozen > sig_free, "f": f_frozen < f_free, "degradation": d_ial < d_uw}
    ok = all(parts.values())
    report_criterion(
        7,
        ok,
        f"sigma frozen {sig_frozen:.3f} vs trained {sig_free:.3f}; last-quarter f {f_frozen:.3f} vs {f_free:.3f}; "
        f"primary MSE change IAL {d_ial:+.4f} vs UW {d_uw:+.4f}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_encoder_balance_ablation(bench, report_criterion):
    full = statistics.fmean(primary_metrics(bench("standard", "ial")))
    uni = statistics.fmean(primary_metrics(bench("standard", "uniform")))
    grad_only = statistics.fmean(primary_metrics(bench("standard", "ial", (("weight_source", "fixed"),))))
    unc_only = statistics.fmean(primary_metrics(bench("standard", "ial", (("normalize", False),))))
    ok = grad_only < uni and unc_only < uni and full <= min(grad_only, unc_only)
    report_criterion(
        8,
        ok,
        f"mean MSE full {full:.4f}, normalization-only {grad_only:.4f}, uncertainty-only {unc_only:.4f}, uniform {uni:.4f}",
    )
    assert ok


# -- 9. determinism ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path, report_criterion):
    mismatched = []
    for strategy, scenario in (("ial", "standard"), ("dwa", "pseudo_noisy"), ("olaux", "broken_decoder")):
        dirs = []
        for rep in ("a", "b"):
            cfg = RunConfig(scenario=scenario, strategy=strategy, epochs=10, seeds=(0, 1), out=str(tmp_path / rep))
            dirs.append(run(cfg).directory)
        for name in ("seed0.csv", "seed1.csv", "summary.json"):
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mismatched.append(f"{strategy}/{name}")
    ok = not mismatched
    report_criterion(9, ok, "repeated runs byte-identical" if ok else f"differences in {mismatched}")
    assert ok
