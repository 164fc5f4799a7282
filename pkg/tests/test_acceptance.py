"""Acceptance suite: one test per release criterion.

Each test prints a single ``[ACCEPTANCE] criterion NN ...: PASS/FAIL`` line
(run pytest with ``-s`` or ``-rA`` to see them) and enforces the stated
tolerances and time budgets.
"""

import json
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import kstest

from ndflow.baselines import apply_piecewise, build_piecewise, extract_landmarks
from ndflow.cli import main as cli_main
from ndflow.dpgmm import DpgmmConfig, GaussianMixture, fit_dpgmm
from ndflow.evalmetrics import brown_forsythe, histogram_discrepancy
from ndflow.flow import (ParameterPath, apply_transform, integrate_flow,
                         invert_transform)
from ndflow.histogram import (affine_match, apply_affine, compute_moments,
                              histogram_from_values, save_histogram, save_values,
                              weighted_quantile)
from ndflow.l2match import l2_divergence, l2_gradients
from ndflow.pipeline import match_and_flow
from ndflow.synthcohort import (CohortArtifacts, Distortion, default_cohort_spec,
                                generate_cohort, run_normalisation_experiment)
from conftest import random_mixture

from ndflow.baselines import LANDMARK_LEVELS


def report(num, name, ok, detail=""):
    print(f"\n[ACCEPTANCE] criterion {num:02d} {name}: "
          f"{'PASS' if ok else 'FAIL'} ({detail})", flush=True)
    assert ok, f"criterion {num} {name}: {detail}"


def test_criterion_01_gradient_fidelity():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        q = random_mixture(rng, kmax=8)
        p = random_mixture(rng, kmax=8)
        amu, alam = l2_gradients(q, p)
        step = 1e-5
        fmu = np.zeros(len(q))
        flam = np.zeros(len(q))
        for k in range(len(q)):
            for arr, out in ((q.means, fmu), (q.precisions, flam)):
                is_mean = arr is q.means
                base = arr[k]

                def div_at(v, k=k, is_mean=is_mean):
                    mu = q.means.copy()
                    lam = q.precisions.copy()
                    (mu if is_mean else lam)[k] = v
                    return l2_divergence(GaussianMixture(q.weights, mu, lam), p)

                out[k] = (div_at(base + step) - div_at(base - step)) / (2 * step)
        a = np.concatenate([amu, alam])
        f = np.concatenate([fmu, flam])
        worst = max(worst, np.max(np.abs(a - f)) / max(np.max(np.abs(f)), 1e-12))
    elapsed = time.perf_counter() - start
    report(1, "gradient fidelity", worst < 1e-5 and elapsed < 10.0,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_divergence_axioms():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_self = worst_sym = most_negative = 0.0
    for _ in range(1000):
        q = random_mixture(rng, kmax=8)
        p = random_mixture(rng, kmax=8)
        worst_self = max(worst_self, abs(l2_divergence(q, q)))
        d_qp = l2_divergence(q, p)
        worst_sym = max(worst_sym, abs(d_qp - l2_divergence(p, q)))
        most_negative = min(most_negative, d_qp)
    elapsed = time.perf_counter() - start
    ok = worst_self < 1e-12 and worst_sym < 1e-12 and most_negative >= -1e-12
    report(2, "divergence axioms", ok and elapsed < 5.0,
           f"self {worst_self:.1e}, asym {worst_sym:.1e}, "
           f"min {most_negative:.1e}, {elapsed:.1f}s")


def test_criterion_03_closed_form_vs_quadrature():
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        q = random_mixture(rng, kmax=8)
        p = random_mixture(rng, kmax=8)
        sd_q = 1.0 / np.sqrt(np.min(q.precisions))
        sd_p = 1.0 / np.sqrt(np.min(p.precisions))
        lo = min(q.means.min() - 12 * sd_q, p.means.min() - 12 * sd_p)
        hi = max(q.means.max() + 12 * sd_q, p.means.max() + 12 * sd_p)
        oracle, _ = quad(lambda x: (q.pdf(x) - p.pdf(x)) ** 2, lo, hi,
                         limit=500, epsabs=1e-13, epsrel=1e-13)
        worst = max(worst, abs(l2_divergence(q, p) - 0.5 * oracle))
    elapsed = time.perf_counter() - start
    report(3, "closed form vs quadrature", worst < 1e-8 and elapsed < 30.0,
           f"max abs diff {worst:.2e}, {elapsed:.1f}s")


def test_criterion_04_flow_exactness():
    # pure translation: constant velocity makes RK4 exact
    trans = ParameterPath([0.4, 0.6], [-1.0, 1.5], [-0.2, 2.3],
                          [2.0, 3.0], [2.0, 3.0])
    tbl = integrate_flow(trans, -4.0, 4.0, 200, 32)
    err_trans = float(np.max(np.abs(tbl.mapped - (tbl.mesh + 0.8))))

    # single-component precision change: closed-form scaling about the mean
    mu = 0.5
    scaling = ParameterPath([1.0], [mu], [mu], [1.0], [4.0])
    tbl64 = integrate_flow(scaling, mu - 3, mu + 3, 200, 64)
    err_scale = float(np.max(np.abs(
        tbl64.mapped - (mu + (tbl64.mesh - mu) * 0.5))))

    errs = []
    for steps in (8, 16, 32):
        t = integrate_flow(scaling, mu - 3, mu + 3, 200, steps)
        errs.append(np.max(np.abs(t.mapped - (mu + (t.mesh - mu) * 0.5))))
    order = -np.polyfit(np.log([8, 16, 32]), np.log(errs), 1)[0]

    ok = err_trans < 1e-12 and err_scale < 1e-8 and abs(order - 4.0) < 0.5
    report(4, "flow exactness oracles", ok,
           f"translation {err_trans:.1e}, scaling {err_scale:.1e}, order {order:.2f}")


def test_criterion_05_mass_conservation():
    rng = np.random.default_rng(505)
    start_mix = GaussianMixture([0.4, 0.6], [-1.0, 1.5], [2.0, 3.0])
    path = ParameterPath([0.4, 0.6], [-1.0, 1.5], [-0.4, 2.3],
                         [2.0, 3.0], [4.0, 1.5])
    end_mix = path.mixture_at(1.0)
    samples = start_mix.sample(100_000, rng)
    tbl = integrate_flow(path, samples.min() - 1, samples.max() + 1, 400, 64)
    ks = kstest(apply_transform(tbl, samples), end_mix.cdf).statistic

    xs = np.linspace(tbl.mesh[5], tbl.mesh[-6], 50)
    eps = tbl.mesh[1] - tbl.mesh[0]
    fprime = (apply_transform(tbl, xs + eps) - apply_transform(tbl, xs - eps)) / (2 * eps)
    q0 = start_mix.pdf(xs)
    q1 = end_mix.pdf(apply_transform(tbl, xs))
    keep = q0 > 1e-4 * q0.max()
    jac = float(np.max(np.abs(q0[keep] - fprime[keep] * q1[keep]) / q0[keep]))

    report(5, "mass conservation", ks < 0.01 and jac < 0.01,
           f"KS {ks:.4f}, jacobian rel err {jac:.4f}")


def test_criterion_06_diffeomorphism():
    # translation + scaling flow (affine map): table inversion is exact
    path = ParameterPath([1.0], [0.0], [1.2], [1.0], [4.0])
    tbl = integrate_flow(path, -5.0, 5.0, 200, 64)
    monotone = bool(np.all(np.diff(tbl.mapped) > 0))
    inv = invert_transform(tbl)
    xs = np.linspace(-4.5, 4.5, 500)
    roundtrip = float(np.max(np.abs(
        apply_transform(inv, apply_transform(tbl, xs)) - xs)))

    # a genuinely nonlinear two-component flow must also stay monotone
    path2 = ParameterPath([0.4, 0.6], [-1.0, 1.5], [-0.4, 2.3],
                          [2.0, 3.0], [4.0, 1.5])
    tbl2 = integrate_flow(path2, -5.0, 5.0, 200, 32)
    monotone &= bool(np.all(np.diff(tbl2.mapped) > 0))

    report(6, "diffeomorphism properties", monotone and roundtrip < 1e-6,
           f"monotone {monotone}, roundtrip {roundtrip:.2e}")


def _synth_pair(seed, n=400_000):
    """Source/target value pair: common mixture, monotone nonlinear source
    distortion with bounded sigmoid bumps."""
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.array([5.0, 9.0, 7.0]))
    means = np.array([-1.5, 0.0, 1.2]) + rng.uniform(-0.15, 0.15, 3)
    sds = np.array([0.70, 0.72, 0.55]) * rng.uniform(0.9, 1.1, 3)
    base = GaussianMixture(w, means, 1.0 / sds ** 2)
    tgt = base.sample(n, rng)
    src = base.sample(n, rng)
    while True:
        h1 = rng.uniform(0.35, 0.65) * rng.choice([-1, 1])
        h2 = rng.uniform(0.35, 0.65) * rng.choice([-1, 1])
        dist = Distortion(rng.uniform(0.9, 1.2), rng.uniform(-0.3, 0.3),
                          ((h1, rng.uniform(-1.6, -0.2), rng.uniform(0.9, 1.4)),
                           (h2, rng.uniform(0.0, 1.4), rng.uniform(0.9, 1.4))))
        if dist.is_globally_monotone():
            return dist(src), tgt


@pytest.fixture(scope="module")
def pair_results():
    """Twenty matched pairs run through all three methods."""
    start = time.perf_counter()
    cfg = DpgmmConfig()
    rows = []
    for seed in range(20):
        src, tgt = _synth_pair(seed)
        h_src = histogram_from_values(src, bins=256)
        h_tgt = histogram_from_values(tgt, bins=256)
        g_tgt = fit_dpgmm(h_tgt, cfg)
        warm = g_tgt.affine(affine_match(g_tgt.moments(), compute_moments(h_src)))
        g_src = fit_dpgmm(h_src, cfg, init=warm)
        pre = affine_match(g_src.moments(), g_tgt.moments())
        lo, hi = np.quantile(pre(src), [0.005, 0.995])
        res = match_and_flow(g_src, g_tgt, mesh_range=(float(lo), float(hi)))
        nd = histogram_discrepancy(
            histogram_from_values(res.apply(src), bins=256), h_tgt)

        am = affine_match(compute_moments(h_src), compute_moments(h_tgt))
        af_vals = apply_affine(am, src)
        af = histogram_discrepancy(
            histogram_from_values(af_vals, bins=256), h_tgt)

        h_af = histogram_from_values(af_vals, bins=256)
        pl = build_piecewise(extract_landmarks(h_af), extract_landmarks(h_tgt))
        ny = histogram_discrepancy(
            histogram_from_values(apply_piecewise(pl, af_vals), bins=256), h_tgt)

        rows.append({"nd": nd, "af": af, "ny": ny,
                     "table": res.table, "nyul_map": pl})
    return rows, time.perf_counter() - start


def test_criterion_07_matching_quality(pair_results):
    rows, elapsed = pair_results
    beats_affine = sum(r["nd"][0] <= r["af"][0] and r["nd"][1] <= r["af"][1]
                       for r in rows)
    within_nyul = sum(r["nd"][0] <= 1.2 * r["ny"][0]
                      and r["nd"][1] <= 1.2 * r["ny"][1] for r in rows)
    ok = beats_affine >= 18 and within_nyul >= 18 and elapsed < 300.0
    report(7, "histogram matching quality", ok,
           f"<=affine {beats_affine}/20, <=1.2x nyul {within_nyul}/20, {elapsed:.0f}s")


def test_criterion_08_smoothness_contrast(pair_results):
    rows, _ = pair_results
    worst_ratio = 0.0
    kinked = 0
    for r in rows:
        d2 = np.abs(np.diff(r["table"].mapped, 2))
        lo, hi = int(0.05 * d2.size), int(0.95 * d2.size)
        central = d2[lo:hi]
        worst_ratio = max(worst_ratio, float(central.max() / np.median(central)))
        slopes = np.diff(r["nyul_map"].knots_out) / np.diff(r["nyul_map"].knots_in)
        ratios = slopes[1:] / slopes[:-1]
        kinked += bool(np.any((ratios < 0.99) | (ratios > 1.01)))
    ok = worst_ratio <= 10.0 and kinked == 20
    report(8, "smoothness contrast", ok,
           f"max d2 ratio {worst_ratio:.1f}, nyul kinked {kinked}/20")


@pytest.fixture(scope="module")
def default_cohort():
    spec = default_cohort_spec()
    cohort = generate_cohort(spec)
    return spec, cohort


def test_criterion_09_cohort_spread_reduction(default_cohort):
    start = time.perf_counter()
    spec, cohort = default_cohort
    artifacts = CohortArtifacts(cohort)
    rep_aff = run_normalisation_experiment(cohort, "affine", artifacts=artifacts)
    rep_nd = run_normalisation_experiment(cohort, "ndflow_individual",
                                          artifacts=artifacts)
    wm = str(int(np.argmax(spec.base_mixture.means)))
    aff_medians = [r["tissues"][wm]["median"] for r in rep_aff["per_subject"]]
    nd_medians = [r["tissues"][wm]["median"] for r in rep_nd["per_subject"]]
    ratio = np.std(nd_medians) / np.std(aff_medians)
    _, p = brown_forsythe([aff_medians, nd_medians])
    elapsed = time.perf_counter() - start
    ok = ratio <= 0.5 and p < 0.01 and elapsed < 600.0
    report(9, "cohort spread reduction", ok,
           f"std ratio {ratio:.3f} (affine {np.std(aff_medians):.4f} -> "
           f"ndflow {np.std(nd_medians):.4f}), p {p:.2e}, {elapsed:.0f}s")


def test_criterion_10_nyul_quantile_correctness():
    # subjects live as weighted histograms throughout the pipeline, so the
    # transformed data are the mapped (center, weight) pairs; their 11
    # weighted quantiles must land on the reference landmarks
    spec = default_cohort_spec(subjects_per_centre=5, samples_per_subject=50_000)
    cohort = generate_cohort(spec)
    artifacts = CohortArtifacts(cohort)
    from ndflow.baselines import average_landmarks, nyul_normalise
    marks = [extract_landmarks(h) for h in artifacts.hists_std]
    reference = average_landmarks(marks)
    worst = 0.0
    for i, h in enumerate(artifacts.hists_std):
        mapped_centers = nyul_normalise(h, reference, h.bin_centers)
        got = weighted_quantile(mapped_centers, h.weights, LANDMARK_LEVELS)
        half_bin = 0.5 * (h.bin_centers[1] - h.bin_centers[0])
        worst = max(worst, float(np.max(np.abs(got - reference.values)) / half_bin))
    report(10, "nyul quantile correctness", worst < 1.0,
           f"worst error {worst:.3f} of half-bin tolerance")


def test_criterion_11_cli_determinism(tmp_path):
    rng = np.random.default_rng(1111)
    src = rng.normal(2.0, 1.5, 20_000)
    src = src + 0.25 * np.tanh(src - 2.0)
    tgt = rng.normal(0.0, 1.0, 20_000)
    save_histogram(histogram_from_values(src, bins=128), tmp_path / "src.csv")
    save_histogram(histogram_from_values(tgt, bins=128), tmp_path / "tgt.csv")
    save_values(src[:200], tmp_path / "vals.txt")
    spec = default_cohort_spec(subjects_per_centre=1, samples_per_subject=4_000)
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_dict()))

    def run_all(tag):
        d = tmp_path / tag
        d.mkdir()
        cmds = [
            ["fit", "--histogram", tmp_path / "src.csv", "--out", d / "s.json",
             "--seed", "0"],
            ["fit", "--histogram", tmp_path / "tgt.csv", "--out", d / "t.json",
             "--seed", "0"],
            ["match", "--source", d / "s.json", "--target", d / "t.json",
             "--out", d / "match.json"],
            ["transform", "--match", d / "match.json",
             "--values", tmp_path / "vals.txt", "--values-out", d / "out.txt",
             "--table-out", d / "table.csv"],
            ["nyul", "--train", tmp_path / "src.csv", tmp_path / "tgt.csv",
             "--histogram", tmp_path / "src.csv", "--values", tmp_path / "vals.txt",
             "--values-out", d / "ny.txt", "--landmarks-out", d / "lm.json"],
            ["experiment", "--spec", tmp_path / "spec.json", "--out", d / "rep.json",
             "--methods", "affine", "nyul", "--bins", "64"],
        ]
        for cmd in cmds:
            assert cli_main([str(c) for c in cmd]) == 0
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    first = run_all("a")
    second = run_all("b")
    identical = (set(first) == set(second)
                 and all(first[k] == second[k] for k in first))
    report(11, "CLI determinism", identical,
           f"{len(first)} outputs byte-identical" if identical else "outputs differ")
