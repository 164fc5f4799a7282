"""Synthetic multi-centre cohort: which normalisation harmonises best?

Three centres with different monotone intensity distortions, a handful of
subjects each.  Every method standardises the subjects and maps them to the
cohort's average density; the per-tissue quartile spread across subjects
(smaller is better) plays the role of a multi-site harmonisation score.
"""

import time

from ndflow import CohortArtifacts, brown_forsythe, default_cohort_spec, generate_cohort
from ndflow.synthcohort import METHODS, run_normalisation_experiment

spec = default_cohort_spec(subjects_per_centre=8, samples_per_subject=60_000)
print(f"cohort: {spec.n_centres} centres x {spec.subjects_per_centre} subjects, "
      f"{spec.samples_per_subject} samples each, jitter {spec.subject_jitter}")

cohort = generate_cohort(spec)
artifacts = CohortArtifacts(cohort)

tissue_names = {0: "low (CSF-like)", 1: "mid (GM-like)", 2: "high (WM-like)"}
reports = {}
for method in METHODS:
    t0 = time.perf_counter()
    reports[method] = run_normalisation_experiment(cohort, method,
                                                   artifacts=artifacts)
    print(f"  ran {method} in {time.perf_counter() - t0:.1f}s")

print(f"\ncross-subject std of the weighted median (x1000):")
print(f"{'method':<18}" + "".join(f"{tissue_names[t]:>18}" for t in (0, 1, 2))
      + f"{'mean MAE':>12}")
for method in METHODS:
    rep = reports[method]
    row = "".join(f"{1000 * rep['spread'][str(t)]['median']:>18.2f}" for t in (0, 1, 2))
    print(f"{method:<18}{row}{rep['mean_mae']:>12.2e}")

wm_aff = [r["tissues"]["2"]["median"] for r in reports["affine"]["per_subject"]]
wm_nd = [r["tissues"]["2"]["median"] for r in reports["ndflow_individual"]["per_subject"]]
stat, p = brown_forsythe([wm_aff, wm_nd])
print(f"\nhigh-intensity median spread, affine vs individual flow: "
      f"F = {stat:.2f}, one-tailed p = {p:.2e}")
print("individual normalisation squeezes subjects onto the shared target;")
print("centre-mode keeps within-centre differences while aligning the centres.")
