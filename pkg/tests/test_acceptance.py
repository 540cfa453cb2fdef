"""Acceptance criteria A1-A10, each run at its stated tolerance.

The case-study criteria use full default settings (4 chains, 5000 warmup,
10000 kept draws, seed 1) and take several minutes.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from borrowbench import cli
from borrowbench.conjugate import BetaParams, beta_binomial_log_marginal
from borrowbench.data import builtin_dataset
from borrowbench.ess import MixtureApprox, elir_ess, fit_mixture_em
from borrowbench.inference import ChainSpec
from borrowbench.methods import DmppConfig, DpConfig, MapConfig, fit_current_only, fit_dmpp, fit_dpm, fit_map, fit_robust_map
from borrowbench.methods.mem import all_patterns, mem_state, pattern_log_prior
from borrowbench.report import emit

from helpers import Criterion, binary_study, ks_to, ks_two

pytestmark = pytest.mark.slow

AS = builtin_dataset("as_binary")
ADCS = builtin_dataset("adcs_continuous")
DEFAULT = ChainSpec()
_CASES = {}


def case_study(name):
    """Default-settings run of every method on a bundled dataset, cached per session."""
    if name not in _CASES:
        start = time.perf_counter()
        analysis = cli.analyze(cli.RunConfig(dataset=name))
        _CASES[name] = (analysis, time.perf_counter() - start)
    return _CASES[name]


def _by_method(analysis):
    return {r.method: r for r in analysis.runs}


def _sources(run, name):
    return dict(zip(run.result.source_labels, run.result.source_summaries[name].values))


def test_a1_beta_binomial_normalization():
    with Criterion("A1") as c:
        start = time.perf_counter()
        worst = 0.0
        for a in (0.5, 1, 2, 5):
            for b in (0.5, 1, 2, 5):
                for n in (1, 6, 23, 107):
                    total = sum(math.exp(beta_binomial_log_marginal(BetaParams(a, b), n, y)) for y in range(n + 1))
                    worst = max(worst, abs(total - 1.0))
        elapsed = time.perf_counter() - start
        c.check(worst <= 1e-10, f"max |sum - 1| = {worst:.1e}")
        c.check(elapsed < 1.0, f"{elapsed:.3f} s")


def test_a2_mem_pattern_normalization():
    with Criterion("A2") as c:
        prior_sum = np.exp(pattern_log_prior(all_patterns(8))).sum()
        c.check(abs(prior_sum - 1.0) <= 1e-12, f"K=8 prior sum error {abs(prior_sum - 1):.1e}")
        s = mem_state(AS)
        c.check(abs(s.pattern_posterior.sum() - 1.0) <= 1e-12, "pattern posterior normalized")
        c.check(np.max(np.abs(s.pattern_posterior - s.pattern_posterior_direct)) <= 1e-12,
                "direct and log-sum-exp posteriors agree")


def test_a3_elir_oracle():
    with Criterion("A3") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        worst = 0.0
        for a in (0.5, 1, 2, 5, 20):
            for b in (0.5, 1, 2, 5, 20):
                x = np.clip(rng.beta(a, b, 100000), 1e-300, 1 - 1e-16)
                approx = MixtureApprox("beta", [1.0], [[a, b]])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    worst = max(worst, abs(elir_ess(approx, x, "binary") / (a + b) - 1))
        c.check(worst < 0.02, f"beta grid max rel. error {worst:.4f}")
        x = rng.normal(1.5, 2.0, 100000)
        ess = elir_ess(MixtureApprox("normal", [1.0], [[1.5, 4.0]]), x, "continuous", sigma_ref=6.3)
        c.check(abs(ess / (6.3**2 / 4) - 1) < 0.02, f"normal ESS {ess:.4f} vs 9.9225")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 30, f"{elapsed:.1f} s")


def test_a4_reduction_oracles():
    with Criterion("A4") as c:
        one = fit_dmpp(AS, DEFAULT, DmppConfig(fixed_gamma=1.0)).theta_cc_draws
        t = stats.beta(129, 392)
        z = abs(one.mean() - t.mean()) / (t.std() / math.sqrt(one.size))
        c.check(z < 3, f"DMPP gamma=1 mean off by {z:.2f} MCSE")
        zero = fit_dmpp(AS, DEFAULT, DmppConfig(fixed_gamma=0.0)).theta_cc_draws
        t = stats.beta(2, 6)
        z = abs(zero.mean() - t.mean()) / (t.std() / math.sqrt(zero.size))
        c.check(z < 3, f"DMPP gamma=0 mean off by {z:.2f} MCSE")
        plain = fit_map(AS, DEFAULT)
        r0 = fit_robust_map(AS, DEFAULT, MapConfig(robust_weight=0.0))
        ks0 = ks_two(r0.theta_cc_draws, plain.theta_cc_draws)
        c.check(ks0 < 0.01, f"w_R=0 vs MAP KS {ks0:.4f}")
        r1 = fit_robust_map(AS, DEFAULT, MapConfig(robust_weight=1.0))
        cur = fit_current_only(AS, DEFAULT)
        ks1 = ks_two(r1.theta_cc_draws, cur.theta_cc_draws)
        c.check(ks1 < 0.01, f"w_R=1 vs current-only KS {ks1:.4f}")
        ks1x = ks_to(r1.theta_cc_draws, stats.beta(2, 6).cdf)
        c.check(ks1x < 0.01, f"w_R=1 vs exact Beta(2,6) KS {ks1x:.4f}")
        c.check(r1.n_draws == 40000, "40000 draws")


def test_a5_binary_case_study():
    analysis, elapsed = case_study("as_binary")
    runs = _by_method(analysis)
    with Criterion("A5") as c:
        means = {m: r.result.effect_draws.mean() for m, r in runs.items()}
        c.check(all(v > 0 for v in means.values()), f"(i) min effect mean {min(means.values()):+.3f}")
        ehss = {m: r.ess.ehss for m, r in runs.items() if r.ess is not None}
        c.check(max(ehss, key=ehss.get) == "mem" and min(ehss, key=ehss.get) == "dpm_map",
                f"(ii) max {max(ehss, key=ehss.get)}, min {min(ehss, key=ehss.get)}")
        c.check(190 <= ehss["mem"] <= 350, f"(iii) EHSS(MEM) {ehss['mem']:.1f}")
        c.check(15 <= ehss["dpm_map"] <= 45, f"(iii) EHSS(DPM-MAP) {ehss['dpm_map']:.1f}")
        for m, q in (("mem", "p_ex"), ("dpm", "sbi"), ("ddpm", "sbi")):
            v = _sources(runs[m], q)
            c.check(min(v, key=v.get) == "H7", f"(iv) {m} {q} minimum at {min(v, key=v.get)}")
        g = runs["dmpp"].result.source_summaries["gamma"].values
        c.check(np.all((g >= 0.35) & (g <= 0.65)), f"(v) gamma means in [{g.min():.3f}, {g.max():.3f}]")
        c.check(elapsed < 300, f"runtime {elapsed:.0f} s")


def test_a6_continuous_case_study():
    analysis, elapsed = case_study("adcs_continuous")
    runs = _by_method(analysis)
    with Criterion("A6") as c:
        for row in analysis.report.rows:
            c.check(row.effect_mean < 0 and row.ci_low <= 0 <= row.ci_high,
                    f"(i) {row.method} {row.effect_mean:+.2f} [{row.ci_low:+.2f}, {row.ci_high:+.2f}]")
        ehss = {m: r.ess.ehss for m, r in runs.items() if r.ess is not None}
        c.check(min(ehss, key=ehss.get) == "map", f"(ii) min EHSS {min(ehss, key=ehss.get)} {min(ehss.values()):.1f}")
        c.check(ehss["dpm"] > 180 and max(ehss, key=ehss.get) == "dpm",
                f"(iii) EHSS(DPM) {ehss['dpm']:.1f}, max {max(ehss, key=ehss.get)}")
        for m in ("dpm", "ddpm"):
            s = _sources(runs[m], "sbi")
            c.check(s["H1"] < 0.1 and s["H2"] < 0.1 and min(s["H3"], s["H4"], s["H5"]) > 0.8,
                    f"(iv) {m} SBI " + " ".join(f"{k}={v:.3f}" for k, v in s.items()))
        g = _sources(runs["dmpp"], "gamma")
        c.check(max(g["H1"], g["H2"]) < min(g["H3"], g["H5"]),
                "(v) gamma " + " ".join(f"{k}={v:.3f}" for k, v in g.items()))
        c.check(elapsed < 300, f"runtime {elapsed:.0f} s")


def test_a7_selective_borrowing():
    analysis, _ = case_study("adcs_continuous")
    dpm = _by_method(analysis)["dpm"]
    with Criterion("A7") as c:
        s = _sources(dpm, "sbi")
        c.check(dpm.ess.ehss > 180 and s["H1"] < 0.1,
                f"EHSS(DPM) {dpm.ess.ehss:.1f} with SBI(H1) {s['H1']:.3f}")


def test_a8_sampler_health_and_determinism(tmp_path):
    with Criterion("A8") as c:
        worst_rhat, worst_ess = 0.0, math.inf
        for name in ("as_binary", "adcs_continuous"):
            analysis, _ = case_study(name)
            for run in analysis.runs:
                for param, d in run.result.diagnostics.items():
                    label = f"{name}/{run.method}/{param}"
                    if math.isfinite(d["rhat"]) and d["rhat"] >= 1.02:
                        c.check(False, f"{label} R-hat {d['rhat']:.4f}")
                    if d["mc_ess"] <= 400:
                        c.check(False, f"{label} MC-ESS {d['mc_ess']:.0f}")
                    if math.isfinite(d["rhat"]):
                        worst_rhat = max(worst_rhat, d["rhat"])
                    worst_ess = min(worst_ess, d["mc_ess"])
            emit(analysis.report, ["json"], tmp_path / f"{name}_1")
            again = cli.analyze(cli.RunConfig(dataset=name))
            emit(again.report, ["json"], tmp_path / f"{name}_2")
            same = (tmp_path / f"{name}_1" / "results.json").read_bytes() == \
                (tmp_path / f"{name}_2" / "results.json").read_bytes()
            c.check(same, f"{name} results.json byte-identical on rerun")
        c.check(worst_rhat < 1.02, f"max R-hat {worst_rhat:.4f}")
        c.check(worst_ess > 400, f"min MC-ESS {worst_ess:.0f}")


def test_a9_dp_limits():
    with Criterion("A9") as c:
        same = binary_study([(40, 10), (40, 10), (40, 10)], cc=(40, 10))
        s = fit_dpm(same, ChainSpec(n_chains=2, n_warmup=500, n_keep=5000), DpConfig(concentration=1e-6))
        sbi = s.source_summaries["sbi"].values
        c.check(np.all(sbi > 0.99), f"M=1e-6 min SBI {sbi.min():.4f}")
        flat = binary_study([(10, 3), (10, 4), (10, 2)], cc=(10, 3))
        s = fit_dpm(flat, ChainSpec(n_chains=2, n_warmup=500, n_keep=5000), DpConfig(concentration=1e6))
        sbi = s.source_summaries["sbi"].values
        c.check(np.all(sbi < 0.05), f"M=1e6 max SBI {sbi.max():.4f}")


def _monotone(trace):
    trace = np.asarray(trace)
    return bool(np.all(np.diff(trace) >= -1e-9 * np.maximum(1.0, np.abs(trace[1:]))))


def test_a10_em_health():
    with Criterion("A10") as c:
        n_traces = 0
        for name in ("as_binary", "adcs_continuous"):
            analysis, _ = case_study(name)
            for run in analysis.runs:
                mixtures = [run.mixture] if run.mixture is not None else []
                state = run.result.state
                if hasattr(state, "prior_mixture"):
                    mixtures.append(state.prior_mixture)
                for mix in mixtures:
                    c.check(len(mix.em_traces) > 0, f"{name}/{run.method} has EM traces")
                    for tr in mix.em_traces:
                        n_traces += 1
                        if not _monotone(tr):
                            c.check(False, f"{name}/{run.method} EM log-likelihood decreased")
        c.notes = [f"{n_traces} EM traces nondecreasing"]
        rng = np.random.default_rng(4)
        fit = fit_mixture_em(rng.beta(4, 8, 50000), "beta", k=1, restarts=3)
        a, b = fit.params[0]
        c.check(abs(a / 4 - 1) < 0.1 and abs(b / 8 - 1) < 0.1, f"Beta(4,8) recovered as ({a:.2f}, {b:.2f})")
        x = np.concatenate([rng.normal(-3, 1, 25000), rng.normal(3, 1, 25000)])
        means = np.sort(fit_mixture_em(x, "normal", k=2, restarts=5).params[:, 0])
        c.check(bool(np.all(np.abs(means - [-3, 3]) < 0.1)), f"normal means {means.round(3).tolist()}")
