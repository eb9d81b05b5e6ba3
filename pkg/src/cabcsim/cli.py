"""Command-line interface: simulate / analyze / validate / version.

Configuration comes from an optional YAML file plus flag overrides; the
``paper-vi`` profile pins the reference parameter set (M=4,
alpha=0.2+0.3j, beta_f=1e-7, beta_v=1e-5, QPSK/BPSK, OFDM N=64 N_c=16,
L_f=L_v=8, L_g=1).  Results are written as CSV with a fixed column set so
downstream tooling can rely on the schema.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
import yaml

from . import __version__, analysis
from .channel import OfdmParams, SystemParams, db_to_linear
from .errors import ConfigurationError
from .montecarlo import ANALYTICAL_CHANNELS, PointResult, SweepSpec, \
    point_seed, run_sweep

CSV_HEADER = ("scenario,detector,gamma_d_db,delta_gamma_db,K,M,N,Nc,d,d0,"
              "trials,ber_s,hw_s,ber_c,hw_c,analytical_s,analytical_c,seed")

DEFAULTS = {
    "scenario": "flat",
    "detectors": ["ml"],
    "gamma_d_db": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
    "delta_gamma_db": [-10.0],
    "K": [1],
    "M": 4,
    "alpha": 0.2 + 0.3j,
    "P_s": 1.0,
    "beta_f": 1e-7,
    "beta_v": 1e-5,
    "N": 64,
    "Nc": 16,
    "d": 0,
    "d0": 0,
    "Lf": 8,
    "Lv": 8,
    "Lg": 1,
    "fs": 1.0,
    "min_trials": 1000,
    "max_trials": 100_000,
    "target_errors": 100,
    "seed": 12345,
    "analytical": False,
    "analytical_channels": ANALYTICAL_CHANNELS,
    "n_channels": 10_000,
    "pe_c": 0.0,
    "out": "results.csv",
    "precision": 6,
    "workers": 1,
}

PROFILES = {
    "paper-vi": {
        "M": 4,
        "alpha": 0.2 + 0.3j,
        "P_s": 1.0,
        "beta_f": 1e-7,
        "beta_v": 1e-5,
        "N": 64,
        "Nc": 16,
        "Lf": 8,
        "Lv": 8,
        "Lg": 1,
    },
}


def _parse_alpha(value):
    if isinstance(value, complex):
        return value
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", ""))
        except ValueError:
            raise ConfigurationError(f"alpha: cannot parse {value!r}") from None
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ConfigurationError(f"alpha: cannot parse {value!r}")


def load_config(path: str | None, profile: str | None, overrides: dict) -> dict:
    """Merge defaults <- profile <- file <- flag overrides; reject unknown keys."""
    cfg = dict(DEFAULTS)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigurationError(f"profile: unknown profile {profile!r}")
        cfg.update(PROFILES[profile])
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigurationError(f"config: cannot read {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config: malformed YAML in {path}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigurationError("config: top level must be a mapping")
        for key, value in file_cfg.items():
            if key not in DEFAULTS:
                raise ConfigurationError(f"config: unknown key {key!r}")
            cfg[key] = value
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    cfg["alpha"] = _parse_alpha(cfg["alpha"])
    for key in ("gamma_d_db", "delta_gamma_db", "K", "detectors"):
        if not isinstance(cfg[key], (list, tuple)):
            cfg[key] = [cfg[key]]
    return cfg


def build_spec(cfg: dict) -> SweepSpec:
    ofdm = OfdmParams(N=int(cfg["N"]), N_c=int(cfg["Nc"]), d=int(cfg["d"]),
                      d0=int(cfg["d0"]), L_f=int(cfg["Lf"]),
                      L_v=int(cfg["Lv"]), L_g=int(cfg["Lg"]),
                      f_s=float(cfg["fs"]))
    return SweepSpec(
        scenario=cfg["scenario"],
        detectors=tuple(cfg["detectors"]),
        gamma_d_db=tuple(float(g) for g in cfg["gamma_d_db"]),
        delta_gamma_db=tuple(float(g) for g in cfg["delta_gamma_db"]),
        K=tuple(int(k) for k in cfg["K"]),
        M=int(cfg["M"]),
        alpha=cfg["alpha"],
        P_s=float(cfg["P_s"]),
        beta_f=float(cfg["beta_f"]),
        beta_v=float(cfg["beta_v"]),
        ofdm=ofdm,
        min_trials=int(cfg["min_trials"]),
        max_trials=int(cfg["max_trials"]),
        target_errors=int(cfg["target_errors"]),
        seed=int(cfg["seed"]),
        analytical=bool(cfg["analytical"]),
        analytical_channels=int(cfg["analytical_channels"]),
    )


def _fmt(value, precision: int) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and np.isnan(value):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.{precision}g}"


def rows_to_csv(rows: list[PointResult], precision: int) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        e = r.estimate
        ofdm_cols = ["", "", "", ""] if r.ofdm is None else \
            [str(r.ofdm.N), str(r.ofdm.N_c), str(r.ofdm.d), str(r.ofdm.d0)]
        failed = r.error is not None
        cells = [
            r.scenario, r.detector,
            _fmt(r.gamma_d_db, precision), _fmt(r.delta_gamma_db, precision),
            str(r.K), str(r.M), *ofdm_cols,
            "" if failed else str(e.trials),
            "" if failed else _fmt(e.ber_s, precision),
            "" if failed else _fmt(e.half_width_s, precision),
            "" if failed else _fmt(e.ber_c, precision),
            "" if failed else _fmt(e.half_width_c, precision),
            _fmt(r.analytical_s, precision), _fmt(r.analytical_c, precision),
            str(r.seed),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg: dict) -> int:
    spec = build_spec(cfg)
    rows = run_sweep(spec, workers=int(cfg["workers"]))
    with open(cfg["out"], "w", newline="\n") as fh:
        fh.write(rows_to_csv(rows, int(cfg["precision"])))
    failures = [r for r in rows if r.error]
    for r in failures:
        print(f"point {r.detector} gamma_d={r.gamma_d_db} failed: {r.error}",
              file=sys.stderr)
    return 1 if failures else 0


def cmd_analyze(cfg: dict) -> int:
    """Channel-averaged analytical BER rows (flat formulas; OFDM source BER)."""
    spec = build_spec(cfg)
    precision = int(cfg["precision"])
    n_channels = int(cfg["n_channels"])
    lines = [CSV_HEADER]
    for detector in spec.detectors:
        name = "ml" if detector == "joint-ml" else detector
        if spec.scenario == "flat" and name not in analysis.FLAT_FORMULAS:
            raise ConfigurationError(f"detectors: no closed form for {detector!r}")
        if spec.scenario == "ofdm" and detector not in ("ofdm-ml", "simo-baseline"):
            raise ConfigurationError(f"detectors: no closed form for {detector!r}")
        for gamma in spec.gamma_d_db:
            for delta in spec.delta_gamma_db:
                params = SystemParams.create(
                    M=spec.M, K=1, alpha=spec.alpha, P_s=spec.P_s,
                    beta_f=spec.beta_f, beta_v=spec.beta_v,
                    gamma_d_db=gamma, delta_gamma_db=delta)
                if spec.scenario == "flat" and name == "zf" and spec.M < 2:
                    raise ConfigurationError(
                        "M: the zf formula needs at least two antennas")
                seed = point_seed(spec.seed, spec.scenario + "-analyze",
                                  detector, gamma, delta, 1, spec.M)
                rng = np.random.default_rng(np.random.SeedSequence(seed))
                if spec.scenario == "flat":
                    avg = analysis.average_ber(name, params, n_channels, rng)
                    mean_s, hw_s = avg.pe_s, avg.hw_s
                    mean_c, hw_c = avg.pe_c, avg.hw_c
                    ofdm_cols = ["", "", "", ""]
                else:
                    mean_s, hw_s = _ofdm_average(params, spec.ofdm, detector,
                                                 float(cfg["pe_c"]), n_channels, rng)
                    mean_c, hw_c = float("nan"), float("nan")
                    ofdm_cols = [str(spec.ofdm.N), str(spec.ofdm.N_c),
                                 str(spec.ofdm.d), str(spec.ofdm.d0)]
                cells = [spec.scenario, detector, _fmt(gamma, precision),
                         _fmt(delta, precision), "1", str(spec.M), *ofdm_cols,
                         str(n_channels), "", "", "", "",
                         _fmt(mean_s, precision),
                         "" if np.isnan(mean_c) else _fmt(mean_c, precision),
                         str(seed)]
                # analytical uncertainty travels in the hw columns
                cells[12] = _fmt(hw_s, precision)
                if not np.isnan(mean_c):
                    cells[14] = _fmt(hw_c, precision)
                lines.append(",".join(cells))
    with open(cfg["out"], "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _ofdm_average(params, ofdm, detector, pe_c, n_channels, rng):
    from .channel import draw_selective_channels, subcarrier_responses
    f, v, g = draw_selective_channels(params, ofdm, rng, n_channels)
    h_d, h_b = subcarrier_responses(f, v, g, params, ofdm)
    if detector == "simo-baseline":
        vals = analysis.q_function(
            np.sqrt(np.sum(np.abs(h_d) ** 2, axis=-1)) / params.sigma).mean(axis=-1)
    else:
        a1, a2 = analysis.ofdm_ml_coefficients(h_d, h_b, params.sigma)
        vals = (1.0 - pe_c) * a1 + pe_c * a2
    hw = 1.96 * float(vals.std(ddof=1)) / np.sqrt(vals.size) if vals.size > 1 \
        else float("inf")
    return float(vals.mean()), hw


def cmd_validate(cfg: dict) -> int:
    """Echo the configuration with the derived quantities for audit."""
    spec = build_spec(cfg)
    out = []
    out.append(f"scenario = {spec.scenario}")
    out.append(f"detectors = {','.join(spec.detectors)}")
    out.append(f"M = {spec.M}")
    out.append(f"K = {','.join(str(k) for k in spec.K)}")
    out.append(f"alpha = {spec.alpha}")
    out.append(f"P_s = {spec.P_s:g}")
    out.append(f"beta_f = {spec.beta_f:g}")
    out.append(f"beta_v = {spec.beta_v:g}")
    out.append(f"seed = {spec.seed}")
    for gamma in spec.gamma_d_db:
        for delta in spec.delta_gamma_db:
            p = SystemParams.create(M=spec.M, K=spec.K[0], alpha=spec.alpha,
                                    P_s=spec.P_s, beta_f=spec.beta_f,
                                    beta_v=spec.beta_v, gamma_d_db=gamma,
                                    delta_gamma_db=delta)
            out.append(
                f"gamma_d_db = {gamma:g}, delta_gamma_db = {delta:g} -> "
                f"sigma2 = {p.sigma2:.6g}, beta_g = {p.beta_g:.6g}, "
                f"gamma_b_db = {10*np.log10(p.gamma_b):.6g}")
    o = spec.ofdm
    out.append(f"ofdm: N = {o.N}, Nc = {o.N_c}, d = {o.d}, d0 = {o.d0}, "
               f"Lf = {o.L_f}, Lv = {o.L_v}, Lg = {o.L_g}")
    out.append(f"d_max = {o.d_max}")
    out.append(f"abd_rate = {o.abd_rate:.6g}")
    print("\n".join(out))
    return 0


def cmd_version(cfg: dict) -> int:
    print(f"cabcsim {__version__}")
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--profile", choices=sorted(PROFILES),
                   help="named parameter profile")
    p.add_argument("--scenario", choices=["flat", "ofdm"])
    p.add_argument("--detectors", help="comma-separated detector names")
    p.add_argument("--gamma-d", dest="gamma_d_db",
                   help="comma-separated direct-link SNR grid in dB")
    p.add_argument("--delta-gamma", dest="delta_gamma_db",
                   help="comma-separated relative SNR list in dB")
    p.add_argument("--K", help="comma-separated spreading ratios")
    p.add_argument("--M", type=int, help="receive antenna count")
    p.add_argument("--d", type=int, help="backscatter delay (samples)")
    p.add_argument("--d0", type=int, help="A-BD switching offset (samples)")
    p.add_argument("--seed", type=int, help="master seed (default 12345)")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--precision", type=int,
                   help="significant digits in the CSV (default 6)")
    p.add_argument("--max-trials", dest="max_trials", type=int)
    p.add_argument("--min-trials", dest="min_trials", type=int)
    p.add_argument("--target-errors", dest="target_errors", type=int)
    p.add_argument("--trials", dest="max_trials", type=int,
                   help="alias for --max-trials")
    p.add_argument("--analytical", dest="analytical", action="store_true",
                   default=None, help="attach channel-averaged formula columns")
    p.add_argument("--no-analytical", dest="analytical", action="store_false",
                   default=None)
    p.add_argument("--n-channels", dest="n_channels", type=int,
                   help="channel draws for analytical averaging")
    p.add_argument("--pe-c", dest="pe_c", type=float,
                   help="A-BD error rate fed to the OFDM source formula")


def _overrides(args) -> dict:
    keys = ("scenario", "M", "d", "d0", "seed", "out", "workers", "precision",
            "max_trials", "min_trials", "target_errors", "analytical",
            "n_channels", "pe_c")
    ov = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "detectors", None):
        ov["detectors"] = [s.strip() for s in args.detectors.split(",")]
    for key in ("gamma_d_db", "delta_gamma_db", "K"):
        raw = getattr(args, key, None)
        if raw:
            ov[key] = [float(x) if key != "K" else int(x)
                       for x in str(raw).split(",")]
    return ov


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cabcsim",
        description="Cooperative ambient backscatter BER simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("analyze", cmd_analyze),
                     ("validate", cmd_validate), ("version", cmd_version)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.profile, _overrides(args))
        return args.fn(cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
