"""Runtime programming volume and energy for bilinear vs trilinear attention.

BERT-base shape: 12 layers, 12 heads, d_k = 64, 8-bit operands on 2-bit cells.
Costs come from the analytic trace, which matches the functional run event for event.
"""

import numpy as np

from trilinear_cim.attention import AttentionJob
from trilinear_cim.cost import cost_for_job, write_energy_fraction, write_volume

print(f"{'N':>5} {'closed form':>12} {'bilinear':>12} {'trilinear':>10} {'write share':>12} {'score cycles':>13}")
for n in (64, 128, 256, 512):
    job = AttentionJob(n, 768, 64, 12, n_layers=12, x_input=np.zeros((n, 768)))
    bil = cost_for_job(job, mode="cim-bilinear")
    tri = cost_for_job(job, mode="cim-trilinear")
    print(f"{n:5d} {write_volume(n, 64, 12, 12, 8, 2):12,d} {bil.writes_cells:12,d} {tri.writes_cells:10,d} "
          f"{write_energy_fraction(bil):12.4f} {tri.stages['score'].cycles:13,d}")

print("\nper-stage energy at N=128 (fJ):")
job = AttentionJob(128, 768, 64, 12, n_layers=12, x_input=np.zeros((128, 768)))
for mode in ("cim-bilinear", "cim-trilinear"):
    rep = cost_for_job(job, mode=mode)
    print(f"  {mode}: total {rep.total_energy:.4g}, latency {rep.total_latency:.4g} ns")
    for name, e in rep.stages.items():
        print(f"    {name:13s} {e.total_energy:12.4g}")
