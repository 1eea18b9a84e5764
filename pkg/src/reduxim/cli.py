"""Command line interface: `reduxim run <scenario>` and `reduxim sweep`.

Exit codes: 0 success, 2 usage/configuration error, 3 statistical assertion
failure (with --assert), 4 internal error.  JSON manifests are emitted with
sorted keys so identical (scenario, config, seed, version) runs are
byte-identical except for the duration_seconds field.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import traceback

from dataclasses import asdict, dataclass

from . import __version__
from .experiments import (
    ScenarioConfig,
    default_phi_grid,
    run_born_screen,
    run_delayed_choice,
    run_elitzur_vaidman,
    run_entangled_delayed_choice,
    run_fig1,
    run_partial_absorption,
    run_point,
    run_spreading,
    run_visibility,
)
from .stats import binomial_stderr

SCENARIOS = (
    "fig1a", "fig1b", "elitzur-vaidman", "visibility", "delayed-choice",
    "entangled-delayed-choice", "partial-absorption", "born-screen",
    "spreading",
)

SWEEPABLE = {
    "elitzur-vaidman": ("T",),
    "fig1a": ("distance-scale",),
    "fig1b": ("distance-scale",),
    "partial-absorption": ("a", "phi"),
    "visibility": ("phi",),
}

DEFAULTS = {
    "trials": 200000,
    "seed": 42,
    "phi_points": 24,
    "T": 0.5,
    "object": "present",
    "mode": "quantum",
    "policy": "coinflip",
    "order": "alice-first",
    "absorber": "foil",
    "a": "0.1,0.25,0.5,0.75",
    "profile": "0.3,0.7",
    "distance_scale": 1.0,
    "l": 0.05,
    "dl": 0.01,
    "sigma_cy": 1e-8,
    "species": "massive",
    "out": None,
    "format": None,
    "check": False,
}


class ConfigError(ValueError):
    pass


def _add_common(p: argparse.ArgumentParser):
    sup = argparse.SUPPRESS
    p.add_argument("--trials", type=float, default=sup,
                   help="trials (per phase point for scan scenarios; "
                        "per transmission value for partial-absorption)")
    p.add_argument("--seed", type=int, default=sup, help="master seed")
    p.add_argument("--out", default=sup, help="write output to this file")
    p.add_argument("--format", choices=("json", "csv"), default=sup,
                   help="output format (run: json, sweep: csv)")
    p.add_argument("--assert", dest="check", action="store_true", default=sup,
                   help="exit 3 if the scenario's statistical checks fail")
    p.add_argument("--config", default=sup,
                   help="JSON file with defaults; explicit flags override it")
    p.add_argument("--T", type=float, default=sup,
                   help="splitter transmission (elitzur-vaidman)")
    p.add_argument("--object", choices=("present", "absent"), default=sup,
                   help="blocking object in the reflected arm")
    p.add_argument("--mode", choices=("classical", "quantum"), default=sup,
                   help="visibility accounting mode")
    p.add_argument("--policy", choices=("in", "out", "coinflip"), default=sup,
                   help="delayed-choice splitter policy")
    p.add_argument("--order", choices=("alice-first", "bob-first"), default=sup,
                   help="which station's packet resolves first")
    p.add_argument("--absorber", choices=("foil", "chopper"), default=sup,
                   help="partial absorber model")
    p.add_argument("--a", default=sup,
                   help="comma list of foil/chopper transmissions")
    p.add_argument("--phi-points", type=int, default=sup,
                   help="number of phase points per scan")
    p.add_argument("--profile", default=sup,
                   help="comma list of pixel weights (born-screen)")
    p.add_argument("--distance-scale", type=float, default=sup,
                   help="scale factor for the splitter-to-far-detector edge")
    p.add_argument("--l", type=float, default=sup,
                   help="flight distance in meters (spreading)")
    p.add_argument("--dl", type=float, default=sup,
                   help="relative bandwidth d(lambda)/lambda (spreading)")
    p.add_argument("--sigma-cy", type=float, default=sup,
                   help="longitudinal coherence length in meters (spreading)")
    p.add_argument("--species", choices=("massive", "photon"), default=sup)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reduxim",
        description="Monte-Carlo interferometer trials with threshold-triggered "
                    "wavepacket contraction")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one scenario and emit a manifest")
    p_run.add_argument("scenario", choices=SCENARIOS)
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    p_sweep.add_argument("scenario", choices=SCENARIOS)
    p_sweep.add_argument("--param", required=True,
                         help="parameter to sweep: a, T, phi or distance-scale")
    p_sweep.add_argument("--grid", required=True, help="comma list of values")
    _add_common(p_sweep)
    return parser


def _parse_floats(text, what: str) -> list:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            vals = [float(v) for v in str(text).split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad {what}: {text!r}") from exc
    if not vals:
        raise ConfigError(f"{what} must not be empty")
    return vals


def resolve_config(ns: argparse.Namespace) -> dict:
    passed = vars(ns).copy()
    cfg = dict(DEFAULTS)
    path = passed.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key in ("scenario", "command", "param", "grid"):
                passed.setdefault(key, value)
            elif key in DEFAULTS:
                cfg[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
    cfg.update(passed)
    cfg["trials"] = int(cfg["trials"])
    if int(cfg["phi_points"]) < 3:
        raise ConfigError("--phi-points must be >= 3")
    try:
        scenario_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def scenario_config(cfg: dict) -> ScenarioConfig:
    """Typed view of a resolved config; constructing it runs the invariants."""
    params = {k: v for k, v in cfg.items()
              if k not in ("command", "scenario", "trials", "seed",
                           "out", "format", "check")}
    return ScenarioConfig(scenario=cfg.get("scenario") or "", params=params,
                          trials=cfg["trials"], seed=int(cfg["seed"]))


def _freqs(stats, keys) -> dict:
    out = {"counts": {k: stats.counts.get(k, 0) for k in keys}}
    for k in keys:
        lk = k.lower()
        out[f"p_{lk}"] = stats.frequency(k)
        out[f"stderr_p_{lk}"] = stats.stderr(k)
    return out


def _scan_payload(scan) -> dict:
    return {
        "phi_grid": scan.phi_grid,
        "values": scan.values,
        "n_per_point": scan.n_per_point,
        "c0": scan.c0, "c1": scan.c1, "phi0": scan.phi0,
        "visibility": scan.visibility,
        "normalized_amplitude": scan.normalized_amplitude,
        "i0_max": scan.i0_max, "i0_min": scan.i0_min,
        "absorbed_fraction": scan.absorbed_fraction,
        "notes": scan.notes,
    }


def cmd_run(cfg: dict):
    """Execute one scenario; returns (results payload, assertion failures)."""
    sc = cfg["scenario"]
    n, seed = cfg["trials"], cfg["seed"]
    failures: list = []

    if sc in ("fig1a", "fig1b"):
        stats = run_fig1(sc[-1], n, seed, distance_scale=cfg["distance_scale"])
        results = _freqs(stats, ("D1", "D2"))
        for k in ("D1", "D2"):
            dev = abs(stats.frequency(k) - 0.5)
            if dev > 4 * binomial_stderr(n // 2, n) + 1e-12:
                failures.append(f"{sc}: freq({k}) deviates from 0.5 by {dev:.4f}")

    elif sc == "elitzur-vaidman":
        present = cfg["object"] == "present"
        T = float(cfg["T"])
        stats = run_elitzur_vaidman(present, T, n, seed)
        results = _freqs(stats, ("D1", "D2", "none"))
        results["eta"] = stats.eta
        if stats.eta is not None:
            e = stats.eta
            results["stderr_eta"] = e * math.sqrt(
                1.0 / max(stats.counts["D2"], 1) + 1.0 / max(stats.counts["none"], 1))
        else:
            results["stderr_eta"] = None
        expected = ({"D1": T * T, "D2": T * (1 - T), "none": 1 - T}
                    if present else {"D1": 1.0, "D2": 0.0, "none": 0.0})
        for k, p in expected.items():
            tol = 4 * math.sqrt(p * (1 - p) / n) + 1e-12
            if abs(stats.frequency(k) - p) > tol:
                failures.append(f"elitzur-vaidman: freq({k})={stats.frequency(k):.4f} "
                                f"vs expected {p:.4f}")

    elif sc == "visibility":
        grid = default_phi_grid(int(cfg["phi_points"]))
        scan = run_visibility(cfg["mode"], n, seed, phi_grid=grid)
        results = {"mode": cfg["mode"], **_scan_payload(scan)}
        if cfg["mode"] == "classical":
            if abs(scan.visibility - 0.01) > 1e-9:
                failures.append(f"visibility: classical V={scan.visibility}")
        else:
            if abs(scan.visibility - 1.0) > 0.02:
                failures.append(f"visibility: quantum V={scan.visibility:.4f}")
            if abs(scan.absorbed_fraction - 0.99) > 0.005:
                failures.append(
                    f"visibility: absorbed={scan.absorbed_fraction:.4f}")

    elif sc == "delayed-choice":
        res = run_delayed_choice(cfg["policy"], n, seed)
        results = {"policy": cfg["policy"], "by_choice": {}}
        for tag, st in sorted(res.by_choice.items()):
            results["by_choice"][tag] = _freqs(st, ("D1", "D2"))
            results["by_choice"][tag]["trials"] = st.n_trials
            if tag == "in":
                if st.counts.get("D2", 0) != 0:
                    failures.append(f"delayed-choice[in]: D2 clicked "
                                    f"{st.counts['D2']} times")
            else:
                for k in ("D1", "D2"):
                    if abs(st.frequency(k) - 0.5) > 4 * st.stderr(k) + 1e-12:
                        failures.append(f"delayed-choice[out]: freq({k})="
                                        f"{st.frequency(k):.4f}")

    elif sc == "entangled-delayed-choice":
        grid = default_phi_grid(int(cfg["phi_points"]))
        res = run_entangled_delayed_choice(grid, cfg["order"], n, seed)
        results = {
            "order": res.order,
            "phi_grid": res.phi_grid,
            "n_per_point": res.n_per_point,
            "bob_given_cv": res.bob_given_cv,
            "bob_given_ch": res.bob_given_ch,
            "alice_cv_marginal": res.alice_cv_marginal,
            "visibility_cv": res.cv_scan.visibility,
            "joint_counts": res.joint_counts,
        }
        if res.cv_scan.visibility < 0.97:
            failures.append(f"entangled: V(C_V)={res.cv_scan.visibility:.4f}")
        sig = 0.5 / math.sqrt(max(1, n // 2))
        for phi, v in zip(grid, res.bob_given_ch):
            if abs(v - 0.5) > 4 * sig:
                failures.append(f"entangled: Bob|C_H at phi={phi:.3f} is {v:.4f}")
        sig_m = 0.5 / math.sqrt(n)
        for phi, v in zip(grid, res.alice_cv_marginal):
            if abs(v - 0.5) > 4 * sig_m:
                failures.append(f"entangled: Alice C_V marginal at "
                                f"phi={phi:.3f} is {v:.4f}")

    elif sc == "partial-absorption":
        grid = default_phi_grid(int(cfg["phi_points"]))
        a_grid = _parse_floats(cfg["a"], "--a")
        scans = run_partial_absorption(a_grid, grid, n, seed,
                                       absorber=cfg["absorber"])
        results = {"absorber": cfg["absorber"], "scans": []}
        for a in sorted(scans):
            scan = scans[a]
            results["scans"].append({"a": a, **_scan_payload(scan)})
            target = math.sqrt(a) if cfg["absorber"] == "foil" else a
            if abs(scan.normalized_amplitude - target) > 0.02:
                failures.append(
                    f"partial-absorption[{cfg['absorber']}]: A_n(a={a})="
                    f"{scan.normalized_amplitude:.4f} vs {target:.4f}")

    elif sc == "born-screen":
        profile = _parse_floats(cfg["profile"], "--profile")
        try:
            res = run_born_screen(profile, n, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        results = {"profile": res.profile, "counts": res.counts,
                   "frequencies": res.frequencies, "chi2": res.chi2,
                   "p_value": res.p_value}
        if res.p_value <= 0.01:
            failures.append(f"born-screen: chi2 p={res.p_value:.5f}")

    elif sc == "spreading":
        results = run_spreading(cfg["sigma_cy"], cfg["l"], cfg["dl"],
                                species=cfg["species"])
        expected = (results["sigma_cy"] if cfg["species"] == "photon"
                    else results["sigma_cy"] + cfg["l"] * cfg["dl"])
        if results["sigma_y"] != expected:
            failures.append("spreading: sigma_y does not equal the closed form")

    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown scenario {sc!r}")

    return results, failures


_BASE_COLS = ("scenario", "parameter", "value", "trials", "seed")


def cmd_sweep(cfg: dict):
    """Run one scenario across a grid; returns (header, rows, failures)."""
    sc = cfg["scenario"]
    param = cfg["param"]
    if sc not in SWEEPABLE or param not in SWEEPABLE[sc]:
        allowed = ", ".join(f"{s}: {', '.join(ps)}" for s, ps in SWEEPABLE.items())
        raise ConfigError(
            f"parameter {param!r} is not sweepable for {sc!r} (supported: {allowed})")
    grid = _parse_floats(cfg["grid"], "--grid")
    n, seed = cfg["trials"], cfg["seed"]
    failures: list = []
    rows = []

    def base(value):
        return {"scenario": sc, "parameter": param, "value": value,
                "trials": n, "seed": seed}

    if sc == "elitzur-vaidman" and param == "T":
        header = _BASE_COLS + ("freq_d1", "stderr_d1", "freq_d2", "stderr_d2",
                               "freq_none", "stderr_none", "eta")
        for T in grid:
            st = run_elitzur_vaidman(cfg["object"] == "present", T, n, seed)
            rows.append({**base(T),
                         "freq_d1": st.frequency("D1"), "stderr_d1": st.stderr("D1"),
                         "freq_d2": st.frequency("D2"), "stderr_d2": st.stderr("D2"),
                         "freq_none": st.frequency("none"),
                         "stderr_none": st.stderr("none"), "eta": st.eta})

    elif sc in ("fig1a", "fig1b") and param == "distance-scale":
        header = _BASE_COLS + ("freq_d1", "stderr_d1", "freq_d2", "stderr_d2")
        for s in grid:
            st = run_fig1(sc[-1], n, seed, distance_scale=s)
            rows.append({**base(s),
                         "freq_d1": st.frequency("D1"), "stderr_d1": st.stderr("D1"),
                         "freq_d2": st.frequency("D2"), "stderr_d2": st.stderr("D2")})

    elif sc == "partial-absorption" and param == "a":
        header = _BASE_COLS + ("absorber", "a_n", "c0", "c1", "visibility",
                               "q1", "q2", "f")
        phi_grid = default_phi_grid(int(cfg["phi_points"]))
        scans = run_partial_absorption(grid, phi_grid, n, seed,
                                       absorber=cfg["absorber"])
        for a in grid:
            scan = scans[a]
            rows.append({**base(a), "absorber": cfg["absorber"],
                         "a_n": scan.normalized_amplitude, "c0": scan.c0,
                         "c1": scan.c1, "visibility": scan.visibility,
                         "q1": scan.notes.get("q1"), "q2": scan.notes.get("q2"),
                         "f": scan.notes.get("f")})
            target = math.sqrt(a) if cfg["absorber"] == "foil" else a
            if abs(scan.normalized_amplitude - target) > 0.02:
                failures.append(f"sweep a={a}: A_n={scan.normalized_amplitude:.4f} "
                                f"vs {target:.4f}")

    elif sc == "partial-absorption" and param == "phi":
        header = _BASE_COLS + ("absorber", "a", "freq_d", "stderr_d",
                               "freq_d2", "stderr_d2", "freq_foil",
                               "freq_none", "freq_blocked")
        a = _parse_floats(cfg["a"], "--a")[0]
        circuit = "partial" if cfg["absorber"] == "foil" else "chopper"
        for phi in grid:
            st = run_point({"circuit": circuit, "a": a, "phi": phi}, n, seed,
                           f"sweep/{circuit}/{a}")
            rows.append({**base(phi), "absorber": cfg["absorber"], "a": a,
                         "freq_d": st.frequency("D"), "stderr_d": st.stderr("D"),
                         "freq_d2": st.frequency("D2"),
                         "stderr_d2": st.stderr("D2"),
                         "freq_foil": st.frequency("F"),
                         "freq_none": st.frequency("none"),
                         "freq_blocked": st.frequency("blocked")})

    else:  # visibility / phi
        header = _BASE_COLS + ("freq_d", "stderr_d", "freq_d2", "stderr_d2",
                               "freq_absorbed", "stderr_absorbed")
        for phi in grid:
            st = run_point({"circuit": "visibility", "phi": phi}, n, seed,
                           "sweep/visibility")
            rows.append({**base(phi),
                         "freq_d": st.frequency("D"), "stderr_d": st.stderr("D"),
                         "freq_d2": st.frequency("D2"),
                         "stderr_d2": st.stderr("D2"),
                         "freq_absorbed": st.frequency("A"),
                         "stderr_absorbed": st.stderr("A")})

    return list(header), rows, failures


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record emitted as the JSON output of a run.

    Re-running with the same scenario, config, seed and tool version
    reproduces identical counts; only duration_seconds varies.
    """

    scenario: str
    config: dict
    seed: int
    trials: int
    tool_version: str
    duration_seconds: float
    results: object


def _manifest(cfg: dict, results, duration: float) -> dict:
    shown = {k: v for k, v in cfg.items()
             if k not in ("out", "format", "check", "command", "scenario",
                          "param", "grid", "seed", "trials")}
    manifest = RunManifest(
        scenario=cfg["scenario"],
        config=shown,
        seed=cfg["seed"],
        trials=cfg["trials"],
        tool_version=__version__,
        duration_seconds=duration,
        results=results,
    )
    return asdict(manifest)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve_config(ns)
        t0 = time.time()
        if cfg["command"] == "run":
            results, failures = cmd_run(cfg)
            duration = time.time() - t0
            fmt = cfg["format"] or "json"
            if fmt == "json":
                text = json.dumps(_manifest(cfg, results, duration),
                                  indent=2, sort_keys=True) + "\n"
            else:
                buf = io.StringIO()
                writer = csv.writer(buf)
                flat = {k: v for k, v in results.items()
                        if not isinstance(v, (dict, list))}
                writer.writerow(list(flat))
                writer.writerow([repr(v) if isinstance(v, float) else v
                                 for v in flat.values()])
                text = buf.getvalue()
        else:
            header, rows, failures = cmd_sweep(cfg)
            duration = time.time() - t0
            fmt = cfg["format"] or "csv"
            if fmt == "csv":
                buf = io.StringIO()
                writer = csv.DictWriter(buf, fieldnames=header)
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                     for k, v in row.items()})
                text = buf.getvalue()
            else:
                text = json.dumps(_manifest(cfg, {"header": header, "rows": rows},
                                            duration),
                                  indent=2, sort_keys=True) + "\n"
        _emit(text, cfg["out"])
        if cfg["check"] and failures:
            for line in failures:
                print("ASSERT FAIL:", line, file=sys.stderr)
            return 3
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:  # pragma: no cover
        return 0
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
