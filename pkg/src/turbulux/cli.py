"""Command-line pipelines: derive, simulate, calibrate, tabulate, validate, apply.

Every run writes its outputs plus ``manifest.json`` under ``--out``.  Exit
codes: 0 success, 1 computation error, 2 usage error, 3 invalid
configuration or input value.
"""

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .channel import config_to_dict, db_to_efficiency, derive_channel, load_config
from .errors import ConfigError, GridError, TurbuluxError
from .pdt import CONVENTIONS, GAUSSIAN

__all__ = ["main", "build_parser", "parse_and_plan", "execute", "RunManifest"]

MANIFEST_SCHEMA = "v1"
COMMANDS = ("params", "simulate", "calibrate", "pdt", "validate", "quantum", "replay")
WITNESSES = ("mandel", "binomial", "squeezing")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


class InputError(Exception):
    """Invalid value supplied on the command line (exit code 3)."""


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    version: str
    inputs: list
    outputs: list
    steps: list
    out_dir: str
    wall_clock_s: float = 0.0
    status: str = "planned"
    schema: str = MANIFEST_SCHEMA

    def to_dict(self):
        return dataclasses.asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _radii(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty aperture list")
    return vals


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="channel config (JSON or key = value)")
    common.add_argument("--seed", type=_u64, default=0, help="master seed (unsigned 64-bit)")
    common.add_argument("--samples", type=int, default=None, metavar="N", help="realizations to simulate")
    common.add_argument("--grid", type=int, default=256, metavar="N", help="grid points per side")
    common.add_argument("--aperture-mm", type=_radii, default=None, metavar="LIST",
                        help="comma-separated aperture radii in mm (default: from config)")
    common.add_argument("--method", choices=("s-moments", "eta-moments"), default="eta-moments")
    common.add_argument("--source", choices=("analytic", "sample"), default="analytic",
                        help="where calibration moments come from")
    common.add_argument("--variant", choices=CONVENTIONS, default=GAUSSIAN,
                        help="transmittance-moment and conditional-law convention")
    common.add_argument("--loss-db", type=float, default=0.0, metavar="X", help="extra constant loss in dB")
    common.add_argument("--out", metavar="DIR", default="turbulux-out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    common.add_argument("--workers", type=int, default=None, help="worker processes (env TURBULUX_WORKERS)")
    common.add_argument("--sample-file", metavar="PATH", help="existing SampleSet CSV instead of simulating")
    common.add_argument("--moments", metavar="PATH",
                        help="JSON with sigma_bw2, mean_s, mean_s2 and optionally mean_eta, mean_eta2")
    common.add_argument("--dry-run", action="store_true", help="print the plan and exit")

    parser = argparse.ArgumentParser(prog="turbulux", description="Fading-channel transmittance toolkit.")
    parser.add_argument("--version", action="version", version=f"turbulux {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("params", parents=[common], help="derived and closed-form channel parameters")
    sub.add_parser("simulate", parents=[common], help="phase-screen ensemble to a SampleSet")
    sub.add_parser("calibrate", parents=[common], help="fit the circular-beam model")
    p = sub.add_parser("pdt", parents=[common], help="tabulate the calibrated density and CDF")
    p.add_argument("--points", type=int, default=400, help="tabulation points")
    sub.add_parser("validate", parents=[common], help="KS distances against a SampleSet")
    q = sub.add_parser("quantum", parents=[common], help="nonclassicality sweeps over aperture radius")
    q.add_argument("--witness", choices=WITNESSES, default="mandel")
    q.add_argument("--alpha0", type=float, default=6.0)
    q.add_argument("--chi", type=float, default=None, help="squeezing parameter")
    q.add_argument("--squeezing-db", type=float, default=None, help="input squeezing in dB (negative)")
    q.add_argument("--detectors", type=int, default=7)
    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest", metavar="MANIFEST")
    r.add_argument("--out", metavar="DIR", required=True)
    r.add_argument("--dry-run", action="store_true")
    return parser


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("TURBULUX_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"TURBULUX_WORKERS={env!r} is not an integer") from None
    return 1


def _steps(args):
    cmd = args.command
    need_samples = cmd in ("simulate", "validate") or (
        cmd in ("calibrate", "pdt", "quantum") and args.source == "sample")
    steps = ["derive"]
    if need_samples:
        steps.append("load-samples" if args.sample_file else "simulate")
    if cmd == "params":
        steps.append("analytic")
    if cmd in ("calibrate", "pdt", "quantum"):
        steps.append(f"calibrate:{args.method}:{args.source}")
    if cmd == "validate":
        steps += ["calibrate:s-moments:sample", "calibrate:eta-moments:sample", "ks"]
    if cmd == "pdt":
        steps.append("tabulate")
    if cmd == "quantum":
        steps.append(f"sweep:{args.witness}")
    return steps


def _check_args(args):
    if args.samples is not None and args.samples < 1:
        raise InputError("--samples must be at least 1")
    if args.grid < 128 or args.grid & (args.grid - 1):
        raise InputError("--grid must be a power of two >= 128")
    if args.aperture_mm is not None and any(not (a > 0 and math.isfinite(a)) for a in args.aperture_mm):
        raise InputError("aperture radii must be positive")
    if not (math.isfinite(args.loss_db) and args.loss_db >= 0):
        raise InputError("--loss-db must be a finite value >= 0")
    if args.workers is not None and args.workers < 1:
        raise InputError("--workers must be at least 1")
    if args.config is None:
        raise InputError("--config is required")
    if args.command == "quantum":
        if args.chi is not None and args.squeezing_db is not None:
            raise InputError("give --chi or --squeezing-db, not both")
        if args.detectors < 1:
            raise InputError("--detectors must be at least 1")
        if not args.alpha0 >= 0:
            raise InputError("--alpha0 must be >= 0")


def _outputs(args, radii):
    ext = args.format
    cmd = args.command
    outs = []
    if "simulate" in _steps(args):
        outs += ["samples.csv", "samples.json"]
    if cmd == "params":
        outs.append(f"params.{ext}")
    elif cmd == "simulate":
        outs.append(f"summary.{ext}")
    elif cmd == "calibrate":
        outs.append("models.json")
    elif cmd == "pdt":
        outs += ["models.json"] + [f"pdt_a{_mm(a)}.{ext}" for a in radii]
    elif cmd == "validate":
        outs += ["models.json", f"ks.{ext}"]
    elif cmd == "quantum":
        outs += ["models.json", f"{args.witness}.{ext}"]
    return outs + ["manifest.json"]


def _mm(a):
    return f"{a * 1e3:g}mm"


def parse_and_plan(argv):
    """Parse ``argv`` into a manifest and the parsed namespace (nothing written)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        doc = json.loads(Path(args.manifest).read_text())
        if doc.get("schema") != MANIFEST_SCHEMA:
            raise InputError(f"unsupported manifest schema {doc.get('schema')!r}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(doc["config"], indent=2, sort_keys=True) + "\n")
        replay_argv = _rewrite_for_replay(doc["argv"], out)
        manifest, inner = parse_and_plan(replay_argv)
        if args.dry_run:
            inner.dry_run = True
        return manifest, inner
    _check_args(args)
    config = load_config(args.config)
    radii = [a * 1e-3 for a in args.aperture_mm] if args.aperture_mm else [config.aperture]
    inputs = [str(args.config)] + [p for p in (args.sample_file, args.moments) if p]
    manifest = RunManifest(
        command=args.command,
        argv=list(argv),
        config=config_to_dict(config),
        seed=int(args.seed),
        version=__version__,
        inputs=inputs,
        outputs=_outputs(args, radii),
        steps=_steps(args),
        out_dir=str(args.out),
    )
    args.radii = radii
    args.channel = config
    return manifest, args


def _rewrite_for_replay(argv, out):
    res, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        res.append(tok)
    config_copy = out / "config.json"
    res = _replace_opt(res, "--config", str(config_copy))
    return res + ["--out", str(out)]


def _replace_opt(argv, opt, value):
    res, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == opt:
            skip = True
            continue
        if tok.startswith(opt + "="):
            continue
        res.append(tok)
    return res + [opt, value]


# ----------------------------------------------------------------------------
# execution

def _write_table(path, header, rows, fmt):
    path = Path(path)
    if fmt == "json":
        recs = [{h: _jsonable(v) for h, v in zip(header, row)} for row in rows]
        path.write_text(json.dumps(recs, indent=2) + "\n")
    else:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_cell(v) for v in row))
        path.write_text("\n".join(lines) + "\n")


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class _Run:
    def __init__(self, args, manifest):
        self.args = args
        self.manifest = manifest
        self.out = Path(args.out)
        self.config = args.channel
        self.eta_c = self.config.eta_c * db_to_efficiency(args.loss_db)
        self._samples = None
        self.models = {}

    def samples(self):
        if self._samples is None:
            from .simulator import GridSpec, load_samples, run_ensemble

            a = self.args
            if a.sample_file:
                s = load_samples(a.sample_file)
                missing = [r for r in a.radii if not any(math.isclose(r, x, rel_tol=1e-9) for x in s.apertures)]
                if missing:
                    raise InputError(f"sample file lacks apertures {missing}")
            else:
                n = a.samples if a.samples is not None else 1000
                grid = GridSpec.for_channel(self.config, a.grid)
                s = run_ensemble(self.config, grid, n, a.seed, _workers(a), apertures=a.radii,
                                 path=self.out / "samples.csv")
            self._samples = s
        return self._samples

    def beam_and_targets(self, a):
        """Beam statistics and transmittance targets for aperture ``a``."""
        from .analytic import beam_stats_analytic, eta_moments_analytic
        from .matching import BeamStats, EtaMoments
        from .stats import summarize

        args = self.args
        if args.moments:
            doc = json.loads(Path(args.moments).read_text())
            stats = BeamStats(float(doc["sigma_bw2"]), float(doc["mean_s"]), float(doc["mean_s2"]))
            targets = None
            if "mean_eta" in doc:
                targets = EtaMoments(float(doc["mean_eta"]), float(doc["mean_eta2"]))
            return stats, targets
        if args.source == "sample":
            summ = summarize(self.samples(), a)
            return summ.beam_stats(), EtaMoments(summ.mean_eta, summ.mean_eta2)
        stats = beam_stats_analytic(self.config).beam_stats()
        em = eta_moments_analytic(self.config, a, args.variant)
        return stats, (em.eta_moments() if args.method == "eta-moments" else None)

    def calibrate(self, a, method=None):
        from .matching import calibrate

        method = method or self.args.method
        key = (a, method)
        if key not in self.models:
            stats, targets = self.beam_and_targets(a)
            if method == "eta-moments" and targets is None:
                raise InputError("eta-moments calibration needs mean_eta and mean_eta2")
            self.models[key] = calibrate(method, a, beam_stats=stats, targets=targets,
                                         convention=self.args.variant)
        return self.models[key]

    def write_models(self):
        doc = [dict(self.models[k].to_dict(), method=k[1]) for k in sorted(self.models)]
        (self.out / "models.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # commands ---------------------------------------------------------------

    def params(self):
        from .analytic import beam_stats_analytic, beam_wandering_prefactor, eta_moments_analytic

        ch = derive_channel(self.config)
        b = beam_stats_analytic(ch)
        header = ["aperture_m", "k", "fresnel", "rytov", "rho0_m", "sigma_bw2", "mean_s", "mean_s2", "w_lt_m",
                  "mean_eta", "mean_eta2", "valid", "variant", "prefactor"]
        rows = []
        for a in self.args.radii:
            e = eta_moments_analytic(ch, a, self.args.variant)
            rows.append([a, ch.k, ch.fresnel_number, ch.rytov, ch.coherence_radius, b.sigma_bw2, b.mean_s,
                         b.mean_s2, b.w_lt, e.mean, e.second, e.valid, e.variant, beam_wandering_prefactor(ch)])
        _write_table(self.out / f"params.{self.args.format}", header, rows, self.args.format)

    def simulate(self):
        from .stats import summarize

        s = self.samples()
        header = ["aperture_m", "n", "mean_eta", "mean_eta2", "mean_sqrt_eta", "var_eta", "sigma_bw2", "mean_s",
                  "mean_s2", "corr_s_x02"]
        rows = []
        for a in self.args.radii:
            m = summarize(s, a)
            rows.append([a, m.n, m.mean_eta, m.mean_eta2, m.mean_sqrt_eta, m.var_eta, m.sigma_bw2, m.mean_s,
                         m.mean_s2, m.corr_s_x02])
        _write_table(self.out / f"summary.{self.args.format}", header, rows, self.args.format)

    def calibrate_cmd(self):
        for a in self.args.radii:
            self.calibrate(a)
        self.write_models()

    def pdt(self):
        from .matching import apply_constant_loss

        n = self.args.points
        for a in self.args.radii:
            model = apply_constant_loss(self.eta_c, "rescale", self.calibrate(a))
            top = getattr(model, "support_max", 1.0)
            eta = np.linspace(0.0, top, n + 1)[1:]
            rows = zip(eta, model.pdf(eta), model.cdf(eta))
            _write_table(self.out / f"pdt_a{_mm(a)}.{self.args.format}", ["eta", "density", "cdf"], rows,
                         self.args.format)
        self.write_models()

    def validate(self):
        from .stats import ks_lognormal, ks_pdt

        s = self.samples()
        d_s, _ = ks_lognormal(s.S)
        rows = []
        for a in self.args.radii:
            eta = s.eta_for(a)
            for method in ("s-moments", "eta-moments"):
                self.args.source = "sample"
                model = self.calibrate(a, method)
                rows.append([a, method, ks_pdt(eta, model), d_s, s.n])
        _write_table(self.out / f"ks.{self.args.format}", ["aperture_m", "method", "ks_eta", "ks_lognormal_s", "n"],
                     rows, self.args.format)
        self.write_models()

    def quantum(self):
        from . import quantum as qm

        args = self.args
        chi = args.chi
        if args.squeezing_db is not None:
            chi = qm.squeezing_db_to_chi(args.squeezing_db)
        state = qm.GaussianInputState(args.alpha0, chi or 0.0)
        inp = qm.input_gaussian_moments(state)
        direct = args.source == "sample" or args.sample_file
        rows = []
        for a in args.radii:
            avs = [qm.EtaAverager.from_model(self.calibrate(a), self.eta_c)]
            if direct:
                avs.append(qm.EtaAverager.from_samples(self.samples().eta_for(a), self.eta_c))
            vals = []
            for av in avs:
                if args.witness == "mandel":
                    vals.append(qm.mandel_q_out(inp.q, inp.mean_n, av))
                elif args.witness == "binomial":
                    vals.append(qm.click_statistics(state, qm.ClickDetector(args.detectors), av).q_n)
                else:
                    vals.append(qm.squeezing_out(state, av))
            rows.append([a] + vals)
        name = {"mandel": "q_out", "binomial": f"q_{args.detectors}", "squeezing": "var_x_out"}[args.witness]
        header = ["aperture_m", f"{name}_model"] + ([f"{name}_samples"] if direct else [])
        _write_table(self.out / f"{args.witness}.{args.format}", header, rows, args.format)
        self.write_models()

    def execute(self):
        handler = {
            "params": self.params,
            "simulate": self.simulate,
            "calibrate": self.calibrate_cmd,
            "pdt": self.pdt,
            "validate": self.validate,
            "quantum": self.quantum,
        }[self.args.command]
        handler()


def execute(manifest, args):
    """Run a planned command; returns the exit code."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        _Run(args, manifest).execute()
        manifest.status = "ok"
    except (ConfigError, GridError, InputError) as exc:
        manifest.status = f"input error: {exc}"
        _report(exc)
        code = EXIT_CONFIG
    except TurbuluxError as exc:
        manifest.status = f"error [{exc.module}]: {exc}"
        _report(exc)
        code = EXIT_FAIL
    except (ValueError, ArithmeticError, OSError) as exc:
        manifest.status = f"error: {exc}"
        _report(exc)
        code = EXIT_FAIL
    manifest.wall_clock_s = round(time.perf_counter() - start, 3)
    manifest.outputs = [name for name in manifest.outputs if (out / name).exists() or name == "manifest.json"]
    manifest.write(out / "manifest.json")
    return code


def _report(exc):
    module = getattr(exc, "module", None)
    prefix = f"turbulux: error [{module}]" if module else "turbulux: error"
    print(f"{prefix}: {exc}", file=sys.stderr)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        manifest, args = parse_and_plan(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, InputError) as exc:
        _report(exc)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        _report(exc)
        return EXIT_CONFIG
    if args.dry_run:
        print(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    return execute(manifest, args)


if __name__ == "__main__":
    sys.exit(main())
