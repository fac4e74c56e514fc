"""Round-to-nearest vs. the half-quadratic zero-point solver on a heavy-tailed matrix."""
import numpy as np

from layerquant import QuantConfig, dequantize, hqq_quantize, lp_objective, quantize_rtn

rng = np.random.default_rng(0)
W = rng.standard_normal((256, 256))
spikes = rng.choice(W.size, size=W.size // 100, replace=False)
W.flat[spikes] *= 50          # 1% of the weights are 50x larger

cfg = QuantConfig(3, 64)
rtn = quantize_rtn(W, cfg)
res = hqq_quantize(W, cfg, return_trace=True)

print(f"config {cfg}: {cfg.levels} levels, {rtn.num_groups} groups")
print(f"L0.7 error  RTN {lp_objective(W, rtn):12.1f}")
print(f"L0.7 error  HQQ {lp_objective(W, res.quantized):12.1f}  after {res.iterations} rounds")
print("trace:", " ".join(f"{t:.0f}" for t in res.trace))

# the sparse objective trades a few large misses for many small ones,
# so the largest miss can grow while the typical one shrinks
for name, q in (("RTN", rtn), ("HQQ", res.quantized)):
    err = np.abs(W - dequantize(q))
    print(f"{name}: median |err| {np.median(err):.4f}, max |err| {err.max():.3f}")
