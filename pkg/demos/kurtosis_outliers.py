"""Kurtosis per matrix and the trimmed z-score rule on a 16-layer synthetic model."""
import numpy as np

from layerquant import DetectParams, detect_outliers, model_kurtosis, synth_model
from layerquant.tensor_io import group_by_module

bundle = synth_model(16, planted={(1, "o_proj"), (14, "o_proj")}, seed=0)
rows = model_kurtosis(bundle)

for module, mrows in group_by_module(rows).items():
    print(f"{module:7s}", " ".join(f"{r.value:5.2f}" for r in mrows))

S = np.array([r.value for r in group_by_module(rows)["o_proj"]])
for sigma in ("sample", "sqrt_ss"):
    res = detect_outliers(S, DetectParams("divide", m=2, sigma=sigma))
    print(f"\nsigma={sigma}: mu={res.mu:.3f} sigma={res.sigma:.3f} flagged layers {list(res.layer_indices)}")
    print("  largest z:", np.round(np.sort(res.zscores)[-3:], 2))

# With 15 jumps nothing is trimmed, and the sample z-scores satisfy
# sum(z**2) = 14, so two spikes can never both clear z > 3.
res = detect_outliers(S, DetectParams("divide", sigma="sample"))
print("\nsum of squared sample z-scores:", round(float(np.sum(res.zscores ** 2)), 6))

# A longer model leaves room for trimming and the two spikes stand out.
big = synth_model(64, modules=("o_proj",), rows=128, cols=128, planted={(10, "o_proj"), (50, "o_proj")}, seed=0)
S = np.array([r.value for r in model_kurtosis(big)])
print("64 layers, divide mode:", list(detect_outliers(S, DetectParams("divide", m=2)).layer_indices))
