"""Pathwise and Malliavin Ito formulas for f(x) = x^2.

For alpha > 0 the left-point Young sums of 2 Y dY converge to
``Y_T^2 - Y_0^2``; the gap is the realised quadratic variation and it
decays like ``dt^(2 alpha)``.  For the pure Volterra process the trace
term is deterministic and the remaining Skorohod part has mean zero.

    python3 demos/ito_demo.py
"""

import numpy as np

from bsslab import Constant, Gamma, KernelSpec, certified_grid, drive, simulate_bss
from bsslab.ito import SmoothFn, ito_young_verify, skorohod_via_residual, trace_term
from bsslab.noise_sim import SimGrid, simulate_b_tilde

spec = KernelSpec(0.25, Gamma(1.0))
grid = certified_grid(2 ** -11, 1.0, kernels=[spec])
Y = simulate_bss(spec, None, grid, noise=drive(grid, Constant(1.0), seed=3, n_paths=20))
levels = range(5, 12)
res = ito_young_verify(SmoothFn.square(), Y, levels, alpha=spec.alpha).mean(axis=1)
print(f"level {levels[0]:2d}: mean residual {res[0]:.4f}")
for l, r, q in zip(levels[1:], res[1:], res[:-1] / res[1:]):
    print(f"level {l:2d}: mean residual {r:.4f}   decay {q:.3f}")

a = 0.3
g = SimGrid.uniform(2 ** -9, 1.0, 0.0)
B = simulate_b_tilde(a, Constant(1.0), g, seed=5, n_paths=4000)
sq = SmoothFn.square()
print(f"trace term {trace_term(sq, B[:1], a, 1.0)[0]:.8f}  vs  1/(2a+1) = {1 / (2 * a + 1):.8f}")
s = skorohod_via_residual(sq, B, a, 1.0)
print(f"Skorohod part: mean {s.mean():+.4f}  se {s.std(ddof=1) / np.sqrt(s.size):.4f}")
