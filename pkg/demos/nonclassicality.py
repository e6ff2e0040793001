"""How much nonclassicality survives the channel, versus aperture radius.

A squeezed coherent state is sent through the L = 2000 m channel with an
extra constant efficiency of 0.48.  For each aperture the PDT is built from
the closed-form beam statistics and the output Mandel parameter, the
click-counting parameter for seven detectors, and the squeezing of a weaker
input are printed.  Negative Q and positive squeezing mean nonclassical.
"""

from turbulux.analytic import beam_stats_analytic
from turbulux.channel import reference_channel
from turbulux.matching import calibrate
from turbulux.quantum import (
    ClickDetector,
    EtaAverager,
    GaussianInputState,
    click_statistics,
    input_gaussian_moments,
    mandel_q_out,
    squeezing_db_to_chi,
    squeezing_out,
)

stats = beam_stats_analytic(reference_channel(2000.0)).beam_stats()
bright = GaussianInputState(6.0, 0.4)
dim = GaussianInputState(4.0, squeezing_db_to_chi(-3.0))
inp = input_gaussian_moments(bright)

print(" a/mm     Q_out      Q_7    1/2 - <dx^2>")
for a_mm in (6, 10, 14, 18, 22, 26, 30):
    model = calibrate("s-moments", a_mm * 1e-3, beam_stats=stats)
    av = EtaAverager.from_model(model, eta_c=0.48)
    q = mandel_q_out(inp.q, inp.mean_n, av)
    q7 = click_statistics(bright, ClickDetector(7), av).q_n
    sq = 0.5 - squeezing_out(dim, av)
    print(f"{a_mm:5d} {q:9.4f} {q7:9.4f} {sq:12.5f}")
