"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-check failure (only with ``--check``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import ConfigError
from .effective import NearResonanceError, dimer_shifts, find_resonances, resolvent_scan
from .full import TraceDriftError, dephasing_rate, dimer_benchmark_system
from .io import OutputDir, header_block
from .kernels import (
    KernelSet1,
    build_kernels_single,
    detect_rc,
    inspect_slice,
    load_kernels,
    save_kernels,
)
from .parallel import set_thread_cap, single_threaded_blas
from .propagate import (
    NumericalError,
    dimer_initial_state,
    kinetic_energy,
    propagate_dimer,
    propagate_single,
    pure_state,
)
from .params import dimer_positions, gaussian
from . import scenarios

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

logger = logging.getLogger("dephtrap")

_SCENARIO_PRESET = {
    "single-well": "single-well",
    "gamma-map": "gamma-map-benchmark",
    "calibrate-c3": "dimer-bind",
    "rc-scaling": "rc-scaling",
    "dimer-bind": "dimer-bind",
}


def _load_config(args, default_preset: str):
    cfg = config_mod.load(args.config) if args.config else config_mod.preset(default_preset)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(gas={"seed": args.seed})
    return cfg


def _common(p: argparse.ArgumentParser, out_default: str):
    p.add_argument("--config", type=Path, help="TOML configuration (default: built-in preset)")
    p.add_argument("--seed", type=int, help="override the background gas seed")
    p.add_argument("--out-dir", type=Path, default=Path(out_default))
    p.add_argument("--check", action="store_true", help="exit 4 if any acceptance check fails")


def _report(result, check: bool) -> int:
    print(f"{result.name}: outputs in {result.out_dir}")
    for name, ok in result.checks.items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    if check and not result.passed:
        return EXIT_CHECK
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = _load_config(args, _SCENARIO_PRESET[args.command])
    if args.command == "single-well":
        res = scenarios.run_single_well(cfg, args.out_dir, args.threads)
    elif args.command == "gamma-map":
        res = scenarios.run_gamma_map_benchmark(cfg, args.out_dir, args.threads)
    elif args.command == "calibrate-c3":
        res = scenarios.calibrate_c3(cfg, args.out_dir, args.threads, target=args.target,
                                     bracket=args.bracket, tolerance=args.tolerance)
        print(f"C3 = {res.summary['c3_mhz_um3_over_2pi']:.6g} MHz um^3 / 2pi "
              f"(R_c = {res.summary['rc_um']:.4f} um)")
    elif args.command == "rc-scaling":
        res = scenarios.run_rc_scaling(cfg, args.out_dir, args.threads)
    else:
        res = scenarios.run_dimer_bind(cfg, args.out_dir, args.threads, kernels_path=args.kernels)
    return _report(res, args.check)


def cmd_kernels_build(args) -> int:
    cfg = _load_config(args, args.scenario)
    header = header_block(cfg.data, {"command": "kernels build"})
    if args.scenario == "single-well":
        ks = build_kernels_single(cfg.gas(), cfg.grid(), cfg.eit(), cfg.interactions(),
                                  vext=scenarios._vext_option(cfg),
                                  vext_window=cfg["kernels"]["vext_window_um"])
        ks.check()
    else:
        ks = scenarios.dimer_kernels(cfg, args.threads)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_kernels(args.output, ks, header)
    print(f"wrote {args.output} (+ .json sidecar)")
    return EXIT_OK


def cmd_kernels_inspect(args) -> int:
    ks = load_kernels(args.path)
    info = {"grid": [ks.grid.min, ks.grid.max, ks.grid.n], "meta": ks.meta}
    if isinstance(ks, KernelSet1):
        info["kind"] = "single"
        try:
            ks.check()
            info["identities"] = "ok"
        except AssertionError as exc:
            info["identities"] = str(exc)
        x, g = inspect_slice(ks, args.eps)
        info["gamma_slice_max"] = float(g.max())
        info["gamma_max"] = float(ks.gamma.max())
    else:
        info["kind"] = "dimer"
        info["rc_um"] = detect_rc(ks)
        info["c3_rad_per_us_um3"] = ks.c3
        info["mask"] = None if ks.mask is None else [ks.mask.lo, ks.mask.hi]
        info["component_scale"] = ks.component_scale().tolist()
    print(json.dumps(info, indent=2, sort_keys=True, default=float))
    return EXIT_OK


def cmd_eff_scan(args) -> int:
    cfg = _load_config(args, "dimer-bind")
    eit, inter = cfg.eit(), cfg.interactions()
    r = np.linspace(args.r_min, args.r_max, args.n)
    x1, _ = dimer_positions(r)
    pos = np.array(args.position, float)
    from .effective import dimer_operators_batch

    v1 = np.empty_like(r)
    v2 = np.empty_like(r)
    for i, ri in enumerate(r):
        a, b = dimer_shifts(np.array([ri]), pos[None, :], inter)
        v1[i], v2[i] = a[0, 0], b[0, 0]
    h, ell = dimer_operators_batch(v1, v2, inter.c3_dd / r**3, eit)
    strength = resolvent_scan(r, pos, eit, inter)
    cols = {"r_um": r, "resolvent": strength}
    for n in range(2):
        for m in range(2):
            cols[f"h_{n + 1}{m + 1}_re"] = h[:, n, m].real
            cols[f"l_{n + 1}{m + 1}_re"] = ell[:, n, m].real
            cols[f"l_{n + 1}{m + 1}_im"] = ell[:, n, m].imag
    out = OutputDir(args.out_dir, header_block(cfg.data, {"position_um": args.position}))
    out.csv("eff_scan.csv", cols, {"resonances_um": find_resonances(r, strength)})
    out.write_manifest()
    print(f"resonances near r = {find_resonances(r, strength)} um; wrote {out.root / 'eff_scan.csv'}")
    return EXIT_OK


def cmd_full_vs_eff(args) -> int:
    cfg = _load_config(args, "gamma-map-benchmark")
    eit, inter = cfg.eit(), cfg.interactions()
    g_eff, _ = scenarios.gamma_map_effective([args.r], [args.d], eit, inter, args.t_final)
    full = dephasing_rate(dimer_benchmark_system(args.r, args.d, eit, inter), args.t_final)
    rel = abs(g_eff[0, 0] - full.rate) / full.rate if full.rate > 0 else float("nan")
    print(f"r={args.r} um d={args.d} um: gamma_full={full.rate:.6g}/us (R^2 {full.r2:.3f}) "
          f"gamma_eff={g_eff[0, 0]:.6g}/us rel. diff {rel:.3g}")
    return EXIT_OK


def cmd_propagate(args) -> int:
    cfg = _load_config(args, args.scenario)
    ks = load_kernels(args.kernels)
    grid, wp = ks.grid, cfg.wavepacket()
    hom = cfg.units().hbar_over_mass
    out = OutputDir(args.out_dir, header_block(cfg.data, {"kernels": str(args.kernels)}))
    if args.scenario == "single-well":
        if not isinstance(ks, KernelSet1):
            raise ConfigError("single-well propagation needs single-particle kernels")
        rho0 = pure_state(gaussian(grid, wp.center, wp.sigma))
        tr = propagate_single(rho0, grid, hom, args.t_final, ks.generator(), dt=args.dt,
                              out_every=args.out_every or 10.0)
        out.csv("observables.csv", {"t_us": tr.times, "trace": tr.trace, "peak_density": tr.peak,
                                    "width_um": tr.width, "kinetic_rad_per_us": tr.kinetic})
        for t, d in zip(tr.times, tr.densities):
            out.csv(f"density_t{t:g}.csv", {"x_um": grid.x, "density": d})
    else:
        if isinstance(ks, KernelSet1):
            raise ConfigError("dimer propagation needs dimer kernels")
        tk = kinetic_energy(grid, hom, reduced=True)
        rho0 = dimer_initial_state(grid, wp.center, wp.sigma, wp.surface)
        tr = propagate_dimer(rho0, grid, tk, ks.w, ks.generator(), args.t_final,
                             args.dt or 0.005, out_every=args.out_every or 0.5)
        peak = np.max(tr.n_rep + tr.n_att, axis=1)
        out.csv("observables.csv", {"t_us": tr.times, "trace": tr.trace, "p_rep": tr.p_rep,
                                    "p_att": tr.p_att, "peak_density": peak,
                                    "mean_r_rep_um": tr.mean_r_rep, "absorbed": tr.absorbed})
        for i, t in enumerate(tr.times):
            out.csv(f"density_t{t:g}.csv", {"r_um": grid.x, "n_rep": tr.n_rep[i], "n_att": tr.n_att[i]})
    out.write_manifest()
    print(f"wrote {out.root}")
    return EXIT_OK


def cmd_config_dump(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.preset(args.preset)
    sys.stdout.write(config_mod.serialize(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dephtrap", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("single-well", "single atom in a dephasing well"),
                        ("gamma-map", "dimer dephasing map, exact versus effective"),
                        ("rc-scaling", "R_c over a range of C3")):
        s = sub.add_parser(name, help=help_)
        _common(s, f"runs/{name}")
        s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("calibrate-c3", help="bisection for C3 giving a target R_c")
    _common(s, "runs/calibrate-c3")
    s.add_argument("--target", type=float, help="target R_c in um")
    s.add_argument("--bracket", type=float, nargs=2, metavar=("LO", "HI"),
                   help="C3 bracket in MHz um^3 / 2pi")
    s.add_argument("--tolerance", type=float, help="R_c tolerance in um")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("dimer-bind", help="dimer reflection off the dephasing wall")
    _common(s, "runs/dimer-bind")
    s.add_argument("--kernels", type=Path, help="cached dimer kernels (npz)")
    s.set_defaults(func=cmd_scenario)

    k = sub.add_parser("kernels", help="build or inspect cached kernels")
    ksub = k.add_subparsers(dest="kernels_command", required=True)
    kb = ksub.add_parser("build")
    kb.add_argument("--scenario", choices=["single-well", "dimer-bind"], default="dimer-bind")
    kb.add_argument("--config", type=Path)
    kb.add_argument("--seed", type=int)
    kb.add_argument("--output", type=Path, required=True)
    kb.set_defaults(func=cmd_kernels_build)
    ki = ksub.add_parser("inspect")
    ki.add_argument("path", type=Path)
    ki.add_argument("--eps", type=float, default=0.15, help="offset of the gamma slice (um)")
    ki.set_defaults(func=cmd_kernels_inspect)

    s = sub.add_parser("eff-scan", help="effective operators of one background atom versus r")
    s.add_argument("--config", type=Path)
    s.add_argument("--position", type=float, nargs=3, default=[0.0, 1.7, 0.0],
                   metavar=("X", "Y", "Z"), help="background atom position (um)")
    s.add_argument("--r-min", type=float, default=2.0)
    s.add_argument("--r-max", type=float, default=20.0)
    s.add_argument("--n", type=int, default=1801)
    s.add_argument("--out-dir", type=Path, default=Path("runs/eff-scan"))
    s.set_defaults(func=cmd_eff_scan)

    s = sub.add_parser("full-vs-eff", help="dephasing rate of one (r, d) cell from both engines")
    s.add_argument("--config", type=Path)
    s.add_argument("--r", type=float, required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--t-final", type=float, default=30.0)
    s.set_defaults(func=cmd_full_vs_eff)

    s = sub.add_parser("propagate", help="propagate with cached kernels")
    s.add_argument("--kernels", type=Path, required=True)
    s.add_argument("--scenario", choices=["single-well", "dimer-bind"], required=True)
    s.add_argument("--config", type=Path)
    s.add_argument("--t-final", type=float, required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--out-every", type=float)
    s.add_argument("--out-dir", type=Path, default=Path("runs/propagate"))
    s.set_defaults(func=cmd_propagate)

    c = sub.add_parser("config", help="configuration utilities")
    csub = c.add_subparsers(dest="config_command", required=True)
    cd = csub.add_parser("dump", help="print a preset or file as resolved TOML")
    cd.add_argument("--preset", default="dimer-bind", choices=sorted(config_mod.PRESETS))
    cd.add_argument("--config", type=Path)
    cd.set_defaults(func=cmd_config_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_thread_cap(args.threads)
    try:
        with single_threaded_blas():
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NearResonanceError, TraceDriftError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
