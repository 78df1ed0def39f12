# %% [markdown]
# # How good can a grid-based estimator be?
#
# Even a perfect classifier can only report segment centres. Two sources in
# the same segment collapse into one, and neighbouring active segments merge
# into a plateau. The closed-form expected success rate captures both.

# %%
import numpy as np

from jointaoa.framework import build_grid, generate_framework, target_index, active_labels
from jointaoa.estimator import assemble_spectrum, detect_peaks
from jointaoa.metrics import InstanceOutcome, expected_success_rate, expected_success_rate_max, success_rate

# %%
for M in (30, 60, 120):
    print(f"M={M:>3}: ceiling for Q=2 is {expected_success_rate_max(2, M).value:.2f}%")

# %% [markdown]
# Below half the segment width the curve rises linearly; beyond it the
# ceiling is reached. A quick Monte-Carlo with an ideal classifier agrees.

# %%
grid = build_grid(-60, 60, 60)
fw = generate_framework(grid, 3, 1, seed=0)
rng = np.random.default_rng(0)
outcomes = []
for _ in range(5000):
    aoas = np.sort(rng.uniform(-60, 60, 2))
    active = active_labels(grid, aoas)
    preds = [np.eye(len(s))[target_index(ls, active, s)] for ls, s in zip(fw.labelsets, fw.subsets)]
    est = detect_peaks(assemble_spectrum(fw, preds), 0.5, grid)
    outcomes.append(InstanceOutcome(2, aoas, est.q_hat, est.aoas_deg))

for t in (0.25, 0.5, 1.0, 2.0):
    print(f"theta~={t:4}: closed form {expected_success_rate(t, 2.0, 2, 60).value:6.2f}%   MC {success_rate(outcomes, t):6.2f}%")
