"""Transmittance distributions of the reference channels.

For each channel length the beam statistics come from the weak-turbulence
closed forms, the log-normal law of S is fixed by its first two moments,
and the resulting total PDT is tabulated for an aperture equal to the
long-term beam radius.
"""

import numpy as np

from turbulux.analytic import beam_stats_analytic
from turbulux.channel import derive_channel, reference_channel
from turbulux.matching import calibrate
from turbulux.pdt import pdt_moment, total_cdf, total_pdt

for length in (500.0, 1000.0, 2000.0):
    channel = reference_channel(length)
    stats = beam_stats_analytic(channel)
    model = calibrate("s-moments", stats.w_lt, beam_stats=stats.beam_stats())
    print(f"L = {length:g} m  sigma_R^2 = {derive_channel(channel).rytov:.3f}  "
          f"W_LT = {stats.w_lt * 1e3:.1f} mm")
    print(f"  <eta> = {pdt_moment(1, model, 'marcum'):.4f}  <eta^2> = {pdt_moment(2, model, 'marcum'):.4f}")

    eta = np.linspace(0.05, 0.95, 10)
    for e, p, F in zip(eta, total_pdt(eta, model), total_cdf(eta, model)):
        print(f"    eta = {e:.2f}   pdf = {p:9.4f}   cdf = {F:.4f}")
