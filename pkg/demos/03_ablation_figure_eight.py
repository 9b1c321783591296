"""Controller ablation on a fast figure-eight with a heavier payload.

Four controller stacks fly the same 4 m/s figure-eight.  At t = 3 s the
payload gains 200 g, and a small constant CoM-offset torque acts
throughout.  Plain NMPC sees neither; force compensation feeds the
estimated forces into the prediction model; INDI rejects the torque in
the rate loop.  Takes under a minute.
"""

from slungload.bench import ablate, figure_eight, standard_rows

eight = figure_eight(v_max=4.0)
print(f"figure-eight: {eight.M} pieces, {eight.total_duration:.1f} s")
res = ablate(eight, standard_rows()["+200g"])

print(f"{'variant':<13}{'quad RMSE':>10}{'quad MAX':>10}{'load RMSE':>11}{'load MAX':>10}   (cm)")
for name, m in res.items():
    print(f"{name:<13}{m['rmse_Q']:>10.1f}{m['max_Q']:>10.1f}{m['rmse_L']:>11.1f}{m['max_L']:>10.1f}")
ratio = res["+force+indi"]["rmse_L"] / res["plain"]["rmse_L"]
print(f"full stack keeps {100 * ratio:.0f}% of the plain payload error ({100 * (1 - ratio):.0f}% reduction)")
