"""Calibrating the PDT against a small phase-screen ensemble.

A few hundred realizations are enough to see the point: matching the
transmittance moments reproduces the simulated distribution better than
matching the beam-shape moments, as measured by the KS distance.
Takes a minute or two on one core.
"""

from turbulux.channel import reference_channel
from turbulux.matching import calibrate
from turbulux.simulator import GridSpec, run_ensemble
from turbulux.stats import ks_lognormal, ks_pdt, summarize

A = 0.012
channel = reference_channel(1000.0)
grid = GridSpec.for_channel(channel, 256)
samples = run_ensemble(channel, grid, 300, seed=7, apertures=(A,))

summary = summarize(samples)
print(f"n = {summary.n}  <eta> = {summary.mean_eta:.4f}  sigma_bw^2 = {summary.sigma_bw2:.3e} m^2  "
      f"<S> = {summary.mean_s:.3e} m^2  corr(S, x0^2) = {summary.corr_s_x02:+.3f}")

d_s, params = ks_lognormal(samples.S)
print(f"log-normal fit of S: mu = {params.mu:.3f}, sigma^2 = {params.sigma2:.4f}, D_N = {d_s:.3f}")

for method in ("s-moments", "eta-moments"):
    model = calibrate(method, A, beam_stats=summary.beam_stats(), targets=summary.eta_moments())
    print(f"{method:12s} mu = {model.lognormal.mu:8.4f}  sigma^2 = {model.lognormal.sigma2:.4f}  "
          f"KS = {ks_pdt(samples.eta, model):.4f}")
