"""Batch entry point for the localization experiments.

One subcommand per experiment family; every run writes a config echo, a
machine-readable report.json, delimited data (CSV and gnuplot columns), and
figures, then prints a human-readable summary.  Exit codes: 0 all asserted
contracts pass, 1 a contract failed, 2 configuration error, 3 inconclusive
(no spectral gap below the s threshold).

Configs are flat key=value files with [section] headers, one section per
subcommand; unknown keys are rejected.  ``--set section.key=value`` applies
overrides.  The env var DIRAC_LOCALIZE_THREADS caps the worker pool used
for independent experiment cells.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import reporting
from .acceptance import CRITERIA, RUNNERS, run_all
from .clifford_kernel import (
    analyze_jet,
    build_witten_module,
    check_concentrating_pair,
    ladder_multiplicity_table,
    witten_morse_jet,
)
from .eigensolve import EigenRequest, gap_split, lowest_eigenpairs
from .localization_lab import (
    ExperimentConfig,
    GapNotFound,
    build_approx_eigensection,
    concentration_profile,
    gap_lemma_check,
    index_experiment,
    random_gap_instance,
    spectral_flow,
    splice_residual_slope,
)
from .model_fiber import FiberGrid, assemble_vertical, oscillator_spectrum, weitzenbock_residual
from .scalar_functions import get_function
from .torus_forms import FormField, TorusGrid, assemble_deformed, find_critical_set

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3


DEFAULTS: dict[str, dict[str, str]] = {
    "verify-clifford": {"n": "2,3"},
    "oscillator": {"s": "4,16,64", "nf": "512", "lam": "1.0", "count": "5"},
    "weitzenbock": {"s": "4.0", "nf1": "256,512", "nf2": "128,256", "half_width": "4.0"},
    "witten-spectrum": {
        "f": "cos_x_plus_cos_y", "grid": "64", "s": "32", "k": "8",
        "tol": "1e-11", "min_ratio": "10", "s_threshold": "8",
    },
    "concentration": {
        "f": "cos_x_plus_cos_y", "grid": "64", "s": "16,32,64", "delta": "0.5", "tol": "1e-12",
    },
    "index": {"f": "bott_mixed", "grid": "64", "s": "48", "k": "8", "tol": "1e-11",
              "s_threshold": "8"},
    "approx-section": {"f": "bott_mixed", "grid": "128", "s": "8,16,32,64", "epsilon": "0.8"},
    "gap-lemma": {"n": "100", "k": "7", "c1": "0.5", "c2": "40.0", "instances": "50"},
    "all-acceptance": {"criteria": ",".join(CRITERIA)},
}


class ConfigError(ValueError):
    pass


# value validators per key; "s" and friends are comma-separated lists
_KEY_KINDS: dict[str, str] = {
    "n": "ints", "s": "floats", "nf": "int", "nf1": "ints", "nf2": "ints",
    "lam": "float", "count": "int", "half_width": "float", "grid": "int",
    "k": "int", "tol": "float", "min_ratio": "float", "s_threshold": "float",
    "delta": "float", "epsilon": "float", "c1": "float", "c2": "float",
    "instances": "int", "f": "str", "criteria": "str",
}


def _validate_value(key: str, value: str) -> None:
    kind = _KEY_KINDS.get(key, "str")
    try:
        if kind == "int":
            int(value)
        elif kind == "float":
            float(value)
        elif kind == "ints":
            [int(v) for v in str(value).split(",")]
        elif kind == "floats":
            [float(v) for v in str(value).split(",")]
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {value!r} as {kind}") from None


def load_config(command: str, path: str | None, overrides: list[str]) -> dict[str, str]:
    cfg = dict(DEFAULTS[command])
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            if section != command:
                continue
            for key, value in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                _validate_value(key, value)
                cfg[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value or section.key=value: {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            if section != command:
                continue
        if key not in DEFAULTS[command]:
            raise ConfigError(f"unknown key {key!r} for command {command!r}")
        _validate_value(key, value.strip())
        cfg[key] = value.strip()
    return cfg


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(","))


def _pool_size() -> int:
    raw = os.environ.get("DIRAC_LOCALIZE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_cells(fn, items):
    """Deterministic map over independent experiment cells."""
    workers = _pool_size()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommand implementations; each returns (exit_code, payload)


def cmd_verify_clifford(cfg, out, seed, figures):
    dims = _ints(cfg["n"])
    results = {}
    worst = 0.0
    all_ok = True
    for n in dims:
        module = build_witten_module(n)
        worst = max(worst, module.clifford_residual(), module.orthogonality_residual())
        ok_hat, v_hat = check_concentrating_pair(module, module.hat_gens[0])
        cases = {}
        for q in range(n + 1):
            hess = np.diag([-1.0] * q + [1.0] * (n - q))
            rep = analyze_jet(witten_morse_jet(module, hess))
            table = ladder_multiplicity_table(rep)
            ok = all(obs == exp for _, obs, exp in table)
            cases[f"q{q}"] = {
                "ladder": [[float(v), int(m), int(e)] for v, m, e in table],
                "ok": ok,
            }
            all_ok = all_ok and ok
        results[f"n{n}"] = {
            "clifford_residual": module.clifford_residual(),
            "hat_concentrating": ok_hat,
            "hat_violation": v_hat,
            "cases": cases,
        }
        all_ok = all_ok and ok_hat
    payload = {"results": results, "max_relation_residual": worst, "passed": all_ok}
    if figures:
        for n in dims:
            module = build_witten_module(n)
            rep = analyze_jet(witten_morse_jet(module, np.eye(n)))
            mults = [m for _, m, _, _ in rep.ladder]
            reporting.figure_spectrum(
                out, f"ladder_n{n}.png", {"multiplicity": np.array(mults, float)},
                f"eigenvalue ladder multiplicities, n={n}", ylabel="multiplicity",
            )
    return (EXIT_OK if all_ok else EXIT_FAIL), payload


def cmd_oscillator(cfg, out, seed, figures):
    s_values = _floats(cfg["s"])
    nf = int(cfg["nf"])
    lam = float(cfg["lam"])
    count = int(cfg["count"])
    module = build_witten_module(1)
    rep = analyze_jet(witten_morse_jet(module, np.array([[lam]])))

    def run_one(s):
        half_width = 8.0 / math.sqrt(s * lam)
        grid = FiberGrid(codim=1, half_width=half_width, points_per_axis=nf)
        if half_width * math.sqrt(s * lam) < 6.0:
            print(f"warning: box too small, L sqrt(s lam) = "
                  f"{half_width * math.sqrt(s * lam):.2f} < 6", file=sys.stderr)
        gram = assemble_vertical(rep, grid, s)
        gram = (gram.T @ gram).tocsr()
        res = lowest_eigenpairs(EigenRequest(gram, k=count, tol=1e-10, max_iter=800, seed=seed))
        analytic = [v for v, mult in oscillator_spectrum(lam, s, 1, 0, count) for _ in range(mult)][:count]
        return s, res, np.array(analytic)

    rows, ok = [], True
    results = {}
    for s, res, analytic in _map_cells(run_one, s_values):
        rel = np.abs(res.eigenvalues - analytic) / np.maximum(analytic, 1e-30)
        zero_ok = abs(res.eigenvalues[0]) <= 1e-3 * 2 * s * lam
        case_ok = bool(zero_ok and np.all(rel[1:] <= 0.01) and res.all_converged())
        ok = ok and case_ok
        results[f"s{s:g}"] = {
            "eigenvalues": [float(v) for v in res.eigenvalues],
            "analytic": [float(v) for v in analytic],
            "ok": case_ok,
        }
        for i, (ev, an) in enumerate(zip(res.eigenvalues, analytic)):
            # relative error of the exact-zero entry uses the level spacing
            scale = an if an > 0 else 2.0 * s * lam
            rows.append((s, i, float(ev), float(an), float(abs(ev - an) / scale)))
    reporting.write_csv(out, "spectra.csv",
                        ["s", "index", "eigenvalue", "analytic_value", "rel_error"], rows)
    if figures:
        series = {f"s={s:g}": np.array(results[f"s{s:g}"]["eigenvalues"]) for s in s_values}
        reporting.figure_spectrum(out, "oscillator_spectrum.png", series,
                                  "vertical operator squared: lowest eigenvalues")
    return (EXIT_OK if ok else EXIT_FAIL), {"results": results, "passed": ok}


def cmd_weitzenbock(cfg, out, seed, figures):
    s = float(cfg["s"])
    pairs = {1: _ints(cfg["nf1"]), 2: _ints(cfg["nf2"])}
    half_width = float(cfg["half_width"])
    ok = True
    results = {}
    gp_cols = {}
    for codim, nfs in pairs.items():
        module = build_witten_module(codim)
        rep = analyze_jet(witten_morse_jet(module, np.eye(codim)))
        residuals = [
            weitzenbock_residual(rep, FiberGrid(codim, half_width, nf), s, seed=seed)
            for nf in nfs
        ]
        ratio = residuals[0] / residuals[1]
        case_ok = 1.7 <= ratio <= 2.3
        ok = ok and case_ok
        results[f"codim{codim}"] = {
            "nf": list(nfs), "residuals": residuals, "ratio": ratio, "ok": case_ok,
        }
        gp_cols[f"codim{codim}"] = (np.array(nfs, float), np.array(residuals))
    reporting.write_gnuplot(
        out, "weitzenbock.gp",
        {"nf": gp_cols["codim1"][0], "residual_codim1": gp_cols["codim1"][1],
         "residual_codim2": gp_cols["codim2"][1]},
        comment="first-order refinement of the operator-identity residual",
    )
    if figures:
        reporting.figure_loglog(
            out, "weitzenbock.png", gp_cols["codim1"][0],
            {"codim 1": gp_cols["codim1"][1], "codim 2": gp_cols["codim2"][1]},
            "operator identity residual vs grid", "points per axis", "residual",
            fit_slope=-1.0,
        )
    return (EXIT_OK if ok else EXIT_FAIL), {"results": results, "passed": ok}


def _flow_payload(flow):
    return {
        "reports": [r.to_json_dict() for r in flow.reports],
        "counts_even": {f"{k:g}": v for k, v in flow.counts_even.items()},
        "counts_odd": {f"{k:g}": v for k, v in flow.counts_odd.items()},
        "inconclusive": list(flow.inconclusive),
        "growth_slope": flow.growth_slope,
        "growth_asserted": flow.growth_asserted,
        "growth_ok": flow.growth_ok,
        "cluster_trend_ok": flow.cluster_trend_ok,
    }


def cmd_witten_spectrum(cfg, out, seed, figures):
    n_grid = int(cfg["grid"])
    n = 1 if cfg["f"] == "cos_theta" else 2
    f = get_function(cfg["f"], n)
    grid = TorusGrid(n=n, sizes=tuple([n_grid] * n))
    s_values = _floats(cfg["s"])
    critical = find_critical_set(grid, f, tol=1e-2)
    config = ExperimentConfig(
        s_list=s_values, k=int(cfg["k"]), tol=float(cfg["tol"]),
        min_gap_ratio=float(cfg["min_ratio"]), s_threshold=float(cfg["s_threshold"]),
        seed=seed,
    )
    flow = spectral_flow(grid, f, config, critical=critical)
    rows = [
        (r.s, r.side, i, float(ev), float(res))
        for r in flow.reports
        for i, (ev, res) in enumerate(zip(r.eigenvalues, r.residuals))
    ]
    reporting.write_csv(out, "spectra.csv", ["s", "side", "index", "eigenvalue", "residual"], rows)
    smax = s_values[-1]
    n0, n1 = flow.counts_even[smax], flow.counts_odd[smax]
    payload = {
        "flow": _flow_payload(flow),
        "N0": n0,
        "N1": n1,
        "topological_index": critical.topological_index(),
    }
    if figures:
        for side in (0, 1):
            series = {
                f"s={r.s:g}": r.eigenvalues
                for r in flow.reports
                if r.side == side
            }
            reporting.figure_spectrum(
                out, f"spectrum_side{side}.png", series,
                f"lowest eigenvalues, {'even' if side == 0 else 'odd'} forms",
            )
    if n0 is None or n1 is None:
        code = EXIT_INCONCLUSIVE if smax < config.s_threshold else EXIT_FAIL
        payload["passed"] = False
        return code, payload
    ok = (n0 - n1) == critical.topological_index()
    if flow.growth_asserted and flow.growth_ok is False:
        ok = False
    payload["passed"] = bool(ok)
    return (EXIT_OK if ok else EXIT_FAIL), payload


def cmd_concentration(cfg, out, seed, figures):
    n_grid = int(cfg["grid"])
    f = get_function(cfg["f"], 2)
    grid = TorusGrid(n=2, sizes=(n_grid, n_grid))
    s_values = _floats(cfg["s"])
    delta = float(cfg["delta"])
    tol = float(cfg["tol"])
    critical = find_critical_set(grid, f, tol=1e-2)

    def run_one(s):
        D = assemble_deformed(grid, f, s)
        res = lowest_eigenpairs(
            EigenRequest((D.T @ D).tocsr(), k=2, tol=tol, max_iter=2500, seed=seed)
        )
        field = FormField.from_parity_vector(grid, 0, res.eigenvectors[:, 0])
        profile = concentration_profile(field, critical, [delta])
        return s, profile[0][1], field

    masses = {}
    dens_field = None
    for s, mass, fld in _map_cells(run_one, s_values):
        masses[s] = mass
        dens_field = fld
    lm = [math.log(masses[s]) for s in s_values]
    slopes = [
        (lm[i + 1] - lm[i]) / (s_values[i + 1] - s_values[i])
        for i in range(len(s_values) - 1)
    ]
    decreasing = all(masses[a] > masses[b] for a, b in zip(s_values, s_values[1:]))
    concave = all(s2 <= s1 + 0.05 * abs(s1) for s1, s2 in zip(slopes, slopes[1:]))
    factor4 = masses[s_values[-1]] <= masses[s_values[0]] / 4.0
    ok = decreasing and concave and factor4
    reporting.write_gnuplot(
        out, "concentration.gp",
        {"s": np.array(s_values), "outside_mass": np.array([masses[s] for s in s_values])},
        comment=f"mass outside distance {delta} from the critical set",
    )
    if figures:
        reporting.figure_loglog(
            out, "concentration.png", np.array(s_values),
            {"outside mass": np.array([masses[s] for s in s_values])},
            f"eigenvector mass beyond delta = {delta}", "s", "outside mass",
        )
        if dens_field is not None:
            reporting.figure_field(
                out, "eigenvector_density.png", dens_field.pointwise_density(),
                f"lowest eigenvector density at s = {s_values[-1]:g}",
            )
    payload = {
        "masses": {f"{s:g}": masses[s] for s in s_values},
        "slopes": slopes,
        "factor4": factor4,
        "decreasing": decreasing,
        "concave": concave,
        "passed": bool(ok),
    }
    return (EXIT_OK if ok else EXIT_FAIL), payload


def cmd_index(cfg, out, seed, figures):
    n_grid = int(cfg["grid"])
    f = get_function(cfg["f"], 2)
    grid = TorusGrid(n=2, sizes=(n_grid, n_grid))
    critical = find_critical_set(grid, f, tol=1e-2)
    config = ExperimentConfig(
        s_list=_floats(cfg["s"]), k=int(cfg["k"]), tol=float(cfg["tol"]),
        s_threshold=float(cfg["s_threshold"]), seed=seed,
    )
    reporting.write_csv(
        out, "critical_report.csv",
        ["kind", "location", "morse_index", "euler_characteristic", "min_rate"],
        [
            (c.kind, "/".join(f"{v:.6f}" for v in np.nan_to_num(c.location, nan=float("nan"))),
             c.morse_index, c.euler_characteristic, f"{c.min_rate():.6f}")
            for c in critical.components
        ],
    )
    try:
        res = index_experiment(grid, f, critical, config)
    except GapNotFound as exc:
        payload = {"error": str(exc), "passed": False}
        code = EXIT_INCONCLUSIVE if exc.s < config.s_threshold else EXIT_FAIL
        return code, payload
    payload = res.to_json_dict()
    payload["passed"] = res.match
    return (EXIT_OK if res.match else EXIT_FAIL), payload


def cmd_approx_section(cfg, out, seed, figures):
    n_grid = int(cfg["grid"])
    f = get_function(cfg["f"], 2)
    grid = TorusGrid(n=2, sizes=(n_grid, n_grid))
    s_values = _floats(cfg["s"])
    epsilon = float(cfg["epsilon"])
    critical = find_critical_set(grid, f, tol=1e-2)
    circle = next((c for c in critical.components if c.kind == "circle"), None)
    if circle is None:
        raise ConfigError(f"function {cfg['f']!r} has no circle component")
    corrected, uncorrected, ratios = [], [], []
    for s in s_values:
        sec = build_approx_eigensection(grid, f, circle, s, epsilon)
        corrected.append(sec.residual)
        uncorrected.append(sec.residual_uncorrected)
        ratios.append(sec.xi1_norm_ratio)
    slope = splice_residual_slope(s_values, corrected)
    improved = all(a < b for a, b in zip(corrected, uncorrected))
    ok = slope <= -0.45 and improved
    reporting.write_gnuplot(
        out, "splice_residual.gp",
        {"s": np.array(s_values), "corrected": np.array(corrected),
         "uncorrected": np.array(uncorrected)},
        comment="Rayleigh residual of the spliced sections",
    )
    if figures:
        reporting.figure_loglog(
            out, "splice_residual.png", np.array(s_values),
            {"corrected": np.array(corrected), "uncorrected": np.array(uncorrected)},
            "spliced approximate eigensection residual", "s", "residual",
            fit_slope=-0.5,
        )
    payload = {
        "s": list(s_values),
        "corrected": corrected,
        "uncorrected": uncorrected,
        "xi1_norms": ratios,
        "slope": slope,
        "improved_everywhere": improved,
        "passed": bool(ok),
    }
    return (EXIT_OK if ok else EXIT_FAIL), payload


def cmd_gap_lemma(cfg, out, seed, figures):
    n = int(cfg["n"])
    k = int(cfg["k"])
    C1 = float(cfg["c1"])
    C2 = float(cfg["c2"])
    instances = int(cfg["instances"])
    passed = 0
    defects = []
    for inst in range(instances):
        L, V = random_gap_instance(n, k, C1, C2, seed + inst)
        rep = gap_lemma_check(L, V, C1, C2)
        good = bool(
            rep.conclusive() and rep.projection_invertible
            and rep.defect_norm_sq is not None and rep.defect_norm_sq <= rep.bound
        )
        defects.append(rep.defect_norm_sq if rep.defect_norm_sq is not None else float("nan"))
        passed += good
    ok = passed == instances
    reporting.write_gnuplot(
        out, "gap_lemma.gp",
        {"instance": np.arange(instances, dtype=float), "defect_norm_sq": np.array(defects)},
        comment=f"projection defect; guaranteed bound {4 * C1 / C2!r}",
    )
    if figures:
        reporting.figure_spectrum(
            out, "gap_lemma.png", {"defect": np.array(defects)},
            f"projection defects vs bound {4 * C1 / C2:g}", ylabel="|1 - P|^2",
        )
    payload = {"passed_instances": passed, "instances": instances,
               "bound": 4 * C1 / C2, "passed": ok}
    return (EXIT_OK if ok else EXIT_FAIL), payload


def cmd_all_acceptance(cfg, out, seed, figures):
    names = [v.strip() for v in cfg["criteria"].split(",") if v.strip()]
    unknown = [v for v in names if v not in RUNNERS]
    if unknown:
        raise ConfigError(f"unknown criteria: {unknown}")
    results = run_all(names)
    rows = [(r.name, int(r.passed), f"{r.runtime:.2f}") for r in results]
    reporting.write_csv(out, "acceptance.csv", ["criterion", "passed", "runtime_s"], rows)
    ok = all(r.passed for r in results)
    payload = {
        "criteria": [
            {"name": r.name, "passed": r.passed, "runtime": r.runtime, "details": r.details}
            for r in results
        ],
        "passed": ok,
    }
    if figures:
        reporting.figure_spectrum(
            out, "acceptance.png",
            {"passed": np.array([float(r.passed) for r in results])},
            "acceptance criteria (1 = pass)", ylabel="passed",
        )
    return (EXIT_OK if ok else EXIT_FAIL), payload


COMMANDS = {
    "verify-clifford": cmd_verify_clifford,
    "oscillator": cmd_oscillator,
    "weitzenbock": cmd_weitzenbock,
    "witten-spectrum": cmd_witten_spectrum,
    "concentration": cmd_concentration,
    "index": cmd_index,
    "approx-section": cmd_approx_section,
    "gap-lemma": cmd_gap_lemma,
    "all-acceptance": cmd_all_acceptance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dirac-localize",
        description="spectral localization laboratory for deformed Dirac operators",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI config file with one section per subcommand")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (optionally section.key=value)")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering, keep delimited output only")
    parser.add_argument("--verbose", "-v", action="store_true")
    # common shorthand flags mapped onto config keys
    for flag in ("n", "f", "grid", "s", "k", "nf", "epsilon", "delta"):
        parser.add_argument(f"--{flag}", default=None)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = list(args.set)
    for flag in ("n", "f", "grid", "s", "k", "nf", "epsilon", "delta"):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{flag}={value}")
    try:
        cfg = load_config(args.command, args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) / args.command
    reporting.write_config_echo(out, {"command": args.command, "seed": args.seed, **cfg})
    try:
        code, payload = COMMANDS[args.command](cfg, out, args.seed, not args.no_figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GapNotFound as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    payload = {"command": args.command, "config": cfg, **payload}
    path = reporting.write_report(out, payload)
    status = {EXIT_OK: "pass", EXIT_FAIL: "FAIL", EXIT_INCONCLUSIVE: "inconclusive"}[code]
    print(f"{args.command}: {status} (report: {path})")
    if args.verbose:
        import json as _json

        print(_json.dumps(payload, sort_keys=True, indent=2, default=str))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
