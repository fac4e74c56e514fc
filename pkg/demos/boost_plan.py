"""Boost the layers a metric flags by a few menu stops and see what it costs."""
from layerquant import MENU, DetectParams, model_kurtosis, plan_boost, plan_uniform, synth_model

bundle = synth_model(32, planted={(7, "v_proj"), (23, "q_proj")}, rows=128, cols=128, seed=1)
base_stop, stops = 6, 2
print(f"base {MENU[base_stop].config} ({MENU[base_stop].bits_per_param:.4f} bits/param), "
      f"boosted {MENU[base_stop + stops].config} ({MENU[base_stop + stops].bits_per_param:.4f})")

uniform = plan_uniform(bundle, base_stop)
plan = plan_boost(bundle, model_kurtosis(bundle), base_stop, stops, m=1, params=DetectParams("divide"))

print("boosted entries:", sorted(plan.boosted))
print(f"bits/param {uniform.achieved_bits_per_param:.5f} -> {plan.achieved_bits_per_param:.5f}")
print(f"memory delta {plan.memory_delta_pct:.4f}%")

for module, res in plan.detections.items():
    print(f"  {module}: mu={res.mu:.4f} sigma={res.sigma:.4f} max z={res.zscores.max():.1f}")

# near the top of the menu a boost saturates at the last stop
from layerquant import boost_stop
print("stop 10 + 2 ->", boost_stop(10, 2), MENU[boost_stop(10, 2)].config)
