"""Turning a signed distance field into rendering weights.

Walks a single ray through a wall at depth 1 m and compares the three weight
constructions: the density proxy (sigma = beta * sigmoid(-beta * s)), direct
SDF windowing, and occupancy products. The density path produces the smoothest
weight profile, which is what makes its gradients pleasant to optimize.
Run with:  python demos/02_sdf_proxy_rendering.py
"""

import numpy as np

from monomap import Tape, densities_to_weights, sdf_to_density
from monomap.renderer import occupancy_weights, sdf_direct_weights

n = 48
z = np.linspace(0.0, 2.0, n)[None]          # sample depths along the ray
sdf = 1.0 - z                               # wall at z = 1
deltas = np.full_like(z, z[0, 1] - z[0, 0])

tape = Tape()
for beta in (5.0, 10.0, 30.0):
    sigma = sdf_to_density(tape, tape.constant(sdf), beta)
    w = densities_to_weights(tape, sigma, deltas).value[0]
    peak = z[0, np.argmax(w)]
    depth = float((w * z[0]).sum())
    print(f"beta={beta:5.1f}: peak weight at z={peak:.3f}, "
          f"rendered depth={depth:.3f}, total opacity={w.sum():.3f}")

print("\nweight profile curvature (max second difference, lower = smoother):")
sigma = sdf_to_density(tape, tape.constant(sdf), 10.0)
w_density = densities_to_weights(tape, sigma, deltas).value[0]
w_direct = sdf_direct_weights(tape, tape.constant(sdf), 0.05).value[0]
occ = 1.0 / (1.0 + np.exp(sdf / 0.1))
w_occ = occupancy_weights(tape, tape.constant(occ * (1 - 1e-7))).value[0]
for name, w in (("sdf_density", w_density), ("sdf_direct", w_direct),
                ("occupancy", w_occ)):
    curvature = np.abs(np.diff(w, 2)).max()
    print(f"  {name:12s} curvature={curvature:.5f}  sum={w.sum():.3f}")

print("\nascii weight profiles along the ray (wall at z=1):")
for name, w in (("density", w_density), ("direct", w_direct), ("occup.", w_occ)):
    bar = "".join(" .:-=+*#%@"[min(9, int(v / w.max() * 9))] for v in w)
    print(f"  {name:8s} |{bar}|")
