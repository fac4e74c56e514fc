"""Exact per-matrix config choice under a memory budget, compared with a uniform plan."""
import numpy as np

from layerquant import build_cost_table, menu_index, solve_mxq, synth_model

bundle = synth_model(8, planted={(3, "k_proj")}, rows=128, cols=128, seed=2)
table = build_cost_table(bundle, method="rtn")
n = sum(table.counts)

for bpp in (2.5, 3.25, 4.25):
    budget_mb = bpp * n / (8 * 2 ** 20)
    plan = solve_mxq(table, budget_mb, base_stop=6)
    stops = [menu_index(c) for c in plan.assignments.values()]
    # the best uniform stop that fits the same budget
    fit = [s for s in range(12) if table.bits[:, s].sum() <= budget_mb * 8 * 2 ** 20]
    uni = table.errors[:, fit[-1]].sum() if fit else float("nan")
    print(f"{bpp:4.2f} bits/param: error {plan.objective:8.3f} vs uniform {uni:8.3f}, "
          f"stops used {np.bincount(stops, minlength=12).tolist()}")

planted = table.keys.index((3, "k_proj"))
plan = solve_mxq(table, 3.25 * n / (8 * 2 ** 20))
print("planted matrix gets", plan.assignments[(3, "k_proj")], "; typical matrix gets", plan.assignments[(0, "q_proj")])
print("its error per stop:", np.round(table.errors[planted], 2))
