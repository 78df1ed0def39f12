# %% [markdown]
# # Layered labelsets and the angle spectrum
#
# The field of view [-60, 60) is cut into M segments. Each layer partitions
# the segment labels into random chunks of size k; every chunk gets its own
# multi-class classifier over all 2^k subsets of the chunk.

# %%
import numpy as np

from jointaoa.estimator import assemble_spectrum, detect_peaks, find_peaks
from jointaoa.framework import active_labels, build_grid, generate_framework, target_index

grid = build_grid(-60, 60, 12)
fw = generate_framework(grid, k=3, L=2, seed=7)
for n, layer in enumerate(fw.layers):
    print(f"layer {n}:", layer)

# %% [markdown]
# Two sources at -31 and 14 degrees light up two segments. Each classifier's
# target is the position of the active subset of its own chunk.

# %%
aoas = [-31.0, 14.0]
active = active_labels(grid, aoas)
print("active segments:", sorted(active))
for ls, subsets in zip(fw.labelsets, fw.subsets):
    t = target_index(ls, active, subsets)
    print(f"{ls}: target {t} -> {subsets[t]}")

# %% [markdown]
# Feed the spectrum builder with one-hot "perfect" predictions and the
# spectrum is exactly the indicator of the active segments. Soften them and
# the spectrum becomes a per-segment probability.

# %%
perfect = [np.eye(len(s))[target_index(ls, active, s)] for ls, s in zip(fw.labelsets, fw.subsets)]
print(np.round(assemble_spectrum(fw, perfect), 2))

rng = np.random.default_rng(0)
noisy = [0.7 * p + 0.3 * rng.dirichlet(np.ones(p.size)) for p in perfect]
P = assemble_spectrum(fw, noisy)
print(np.round(P, 2))

# %% [markdown]
# Peaks are strict local maxima (plateaus count once). Only peaks taller
# than the threshold become estimates, so the threshold also decides Q-hat.

# %%
print([(pk.start, pk.stop, round(pk.height, 3)) for pk in find_peaks(P)])
for level in (0.1, 0.5, 0.9):
    est = detect_peaks(P, level, grid)
    print(f"threshold {level}: Q-hat={est.q_hat}, AOAs={est.aoas_deg}")
