# %% [markdown]
# # From snapshots to features
#
# An 8-element half-wavelength ULA sees two uncorrelated narrowband sources
# in white noise. The classifiers never look at raw snapshots; they see the
# sample covariance, flattened into 64 real numbers.

# %%
import numpy as np

from jointaoa.array_signal import (
    ArrayGeometry,
    SourceScene,
    exact_covariance,
    feature_vector,
    matrix_from_features,
    sample_covariance,
    steering_vector,
    synthesize_snapshots,
)

geom = ArrayGeometry(8, 0.5)
scene = SourceScene.from_snr([-20.0, 40.0], snr_db=10.0)
print("noise variance at 10 dB:", scene.noise_variance)

# %% [markdown]
# Steering vectors have unit-modulus entries; at broadside every phase is zero.

# %%
print(np.round(steering_vector(geom, 0.0), 3))
print(np.round(np.angle(steering_vector(geom, 30.0)), 3))

# %% [markdown]
# With T = 100 snapshots the sample covariance is a noisy version of the
# exact one. The gap shrinks like 1/sqrt(T).

# %%
R = exact_covariance(geom, scene)
for T in (10, 100, 1000, 10000):
    gaps = [
        np.linalg.norm(sample_covariance(synthesize_snapshots(geom, scene, T, seed=s)).matrix - R)
        for s in range(20)
    ]
    print(f"T={T:>5}: mean ||R_hat - R||_F / ||R||_F = {np.mean(gaps) / np.linalg.norm(R):.4f}")

# %% [markdown]
# The feature vector keeps the real diagonal, then the real and imaginary
# parts of each upper-triangle entry. It is lossless for Hermitian matrices.

# %%
R_hat = sample_covariance(synthesize_snapshots(geom, scene, 100, seed=1)).matrix
f = feature_vector(R_hat)
print("feature length:", f.size)
print("round trip exact:", np.allclose(matrix_from_features(f), R_hat, rtol=0, atol=0))
