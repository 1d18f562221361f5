"""Score two simulated models with the fairness metric, then compare them.

Model "steady" gives each set almost the same true-label probability for all
four groups. Model "jittery" adds group-dependent noise and a penalty for one
group. The metric, the pairwise median test, the clustered regression and the
misclassification ratio all pick this up.

    python demos/02_fairness_metric_and_tests.py
"""

import numpy as np

from fairperturb.evaluation import FairnessInput, fairness_report, make_prediction, set_standard_deviations
from fairperturb.groups import ALL_GROUPS, DemographicGroup
from fairperturb.stats import compare_models, misclass_ratios, regress_predictions

rng = np.random.default_rng(0)
LABELS = ("chef", "line cook", "waiter")
N_SETS = 400


def simulate(noise, penalty):
    preds = []
    for i in range(N_SETS):
        base = rng.uniform(0.45, 0.95)
        for group in ALL_GROUPS:
            p = base + rng.normal(0, noise) - (penalty if group is DemographicGroup.BLACK else 0.0)
            p = float(np.clip(p, 0.01, 0.98))
            # the wrong-label mass leans towards "line cook"
            probs = [p, (1 - p) * 0.7, (1 - p) * 0.3]
            preds.append(make_prediction(probs, LABELS, "chef", set_id=f"set-{i:04d}", group=group,
                                         occupation="chef"))
    return preds


models = {"steady": simulate(0.01, 0.0), "jittery": simulate(0.08, 0.12)}

print("Fairness metric and accuracy")
for name, preds in models.items():
    r = fairness_report(preds, model=name)
    print(f"  {name:<8} metric {r.fairness_metric:.3f}  accuracy {r.accuracy:.1%}")

stds = {name: set_standard_deviations(FairnessInput.from_predictions(p)) for name, p in models.items()}
comparison = compare_models(stds, alpha=0.01)
for c in comparison.comparisons:
    print(f"\nMood's median test {c.model_a} vs {c.model_b}: chi2 {c.test.chi2:.1f}, "
          f"Bonferroni p {c.adjusted_p:.2g}, fairer: {c.fairer}")

reg = regress_predictions(models["jittery"])
print("\nCorrectness on group for 'jittery' (Caucasian baseline, SEs clustered by set)")
for name, coef, se, p in zip(reg.names, reg.coefficients, reg.std_errors, reg.p_values):
    print(f"  {name:<10} {coef:+.3f}  (se {se:.3f}, p {p:.2g})")

table = misclass_ratios(models["jittery"], "line cook")
print("\nPredicted 'line cook' relative to Caucasian: "
      + ", ".join(f"{g.canonical_name} {rate:+.0f}%" for g, rate in table.relative_rates.items()))
