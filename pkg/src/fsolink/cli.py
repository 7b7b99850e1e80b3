"""Command-line pipeline: synth | couple | ber | wdm | report.

Every command takes a scenario JSON (--config) and a run directory (--out).
synth simulates the turbulent time series and writes the modal dataset;
couple derives receiver coupling-efficiency traces; ber sweeps received
power into cumulated-BER curves, penalties and sync-loss statistics; wdm
runs the delay-mismatch scan or the two-wavelength link; report renders a
markdown summary of everything in the run directory.

All artifacts are stamped with the scenario hash and are byte-identical on
reruns.  Exit codes: 0 ok, 2 configuration error, 3 missing prerequisite
artifact, 4 numerical-contract violation (including mixed scenario hashes).
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .comms import (
    BerReport,
    PowerTrace,
    ber_curve,
    ber_floor_from_phase_jumps,
    ber_instant,
    power_penalty,
    sync_loss_stats,
)
from .errors import (
    ConfigError,
    CurveCrossingError,
    FsolinkError,
    MissingArtifactError,
    NumericalContractError,
)
from .field import uniform_disc_field, write_field_bin
from .modes import ModeBasis, decompose, modes_up_to_group, optimize_smf_waist, smf_coupling_efficiency
from .scenario import Scenario, load_scenario
from .turbulence import build_time_series
from .wdm import C_VACUUM, OpticalSpectrum, two_path_efficiency, vodl_scan, wdm_link_run

__all__ = ["main", "run_synth", "run_couple", "run_ber", "run_wdm", "run_report"]


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, scenario_hash, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# scenario={scenario_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _read_csv(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# scenario="):
            raise NumericalContractError(f"{path}: missing scenario stamp")
        stamp = first.split("=", 1)[1]
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return stamp, header, rows


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path) as fh:
        return json.load(fh)


def _check_stamp(stamp, scenario, what):
    if stamp != scenario.hash:
        raise NumericalContractError(
            f"{what} was produced by scenario {stamp}, not the configured {scenario.hash}; "
            "artifacts from different scenarios cannot be mixed"
        )


def run_synth(scenario: Scenario, out_dir) -> dict:
    """Simulate the time series; write the modal dataset to out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    grid = scenario.grid()
    profile = scenario.profile()
    opt = scenario["optics"]
    run = scenario["run"]

    indices = modes_up_to_group(opt["max_mode_group"] + 1)
    basis = ModeBasis.build(grid, aperture_diameter_m=opt["receive_aperture_m"], indices=indices)
    smf_waist, smf_disc_eff = optimize_smf_waist(
        uniform_disc_field(grid, opt["receive_aperture_m"])
    )

    fields_dir = os.path.join(out_dir, "fields")
    if run["save_fields"]:
        os.makedirs(fields_dir, exist_ok=True)

    mode_rows = []
    smf_rows = []
    frame_entries = []
    for k, field in enumerate(
        build_time_series(
            profile,
            grid=grid,
            n_frames=run["n_frames"],
            frame_rate_hz=run["frame_rate_hz"],
            seed=run["seed"],
            rx_aperture_m=opt["receive_aperture_m"],
            absorb_edges=opt["absorb_edges"],
        )
    ):
        t = k / run["frame_rate_hz"]
        mc = decompose(field, basis)
        mode_rows.append([k, t, *[float(p) for p in mc.mode_power], float(mc.residual_power)])
        smf_rows.append([k, t, smf_coupling_efficiency(field, smf_waist)])
        file_name = None
        if run["save_fields"]:
            file_name = f"fields/frame_{k:06d}.bin"
            write_field_bin(field, os.path.join(out_dir, file_name))
        frame_entries.append({"frame": k, "time_s": t, "file": file_name})

    _write_json(os.path.join(out_dir, "resolved_config.json"),
                {"scenario_hash": scenario.hash, "version": __version__,
                 "config": scenario.resolved})
    _write_csv(
        os.path.join(out_dir, "modes.csv"),
        scenario.hash,
        ["frame", "time_s", *basis.names(), "residual"],
        mode_rows,
    )
    _write_csv(os.path.join(out_dir, "smf.csv"), scenario.hash,
               ["frame", "time_s", "efficiency"], smf_rows)
    _write_json(
        os.path.join(out_dir, "index.json"),
        {
            "scenario_hash": scenario.hash,
            "version": __version__,
            "n_frames": run["n_frames"],
            "frame_rate_hz": run["frame_rate_hz"],
            "seed": run["seed"],
            "rng_streams": [f"layer-{i}" for i in range(len(profile.layers))],
            "smf_waist_m": smf_waist,
            "smf_uniform_disc_efficiency": smf_disc_eff,
            "basis_waist_m": basis.waist_m,
            "mode_names": basis.names(),
            "files": {"modes": "modes.csv", "smf": "smf.csv"},
            "frames": frame_entries,
        },
    )
    return {"n_frames": run["n_frames"], "basis_waist_m": basis.waist_m,
            "smf_waist_m": smf_waist}


def _load_dataset(scenario: Scenario, out_dir):
    """Modal powers, residuals and SMF efficiencies from a synth dataset."""
    stamp, header, rows = _read_csv(os.path.join(out_dir, "modes.csv"))
    _check_stamp(stamp, scenario, "modes.csv")
    n_modes = len(header) - 3  # frame, time_s, ..., residual
    time_s = np.array([float(r[1]) for r in rows])
    powers = np.array([[float(v) for v in r[2 : 2 + n_modes]] for r in rows])
    residual = np.array([float(r[-1]) for r in rows])
    stamp, _, srows = _read_csv(os.path.join(out_dir, "smf.csv"))
    _check_stamp(stamp, scenario, "smf.csv")
    smf = np.array([float(r[2]) for r in srows])
    if smf.shape[0] != powers.shape[0]:
        raise NumericalContractError("modes.csv and smf.csv disagree on frame count")
    return time_s, powers, residual, smf


def _receiver_traces(scenario, out_dir, mode_counts, lossless):
    """Efficiency trace per receiver name, from the synth dataset."""
    time_s, powers, residual, smf = _load_dataset(scenario, out_dir)
    aperture = powers.sum(axis=1) + residual
    loss_db = 0.0 if lossless else scenario.topology().total_loss_db
    scale = 10.0 ** (-loss_db / 10.0)
    traces = {"smf": smf}
    for n in mode_counts:
        if n > powers.shape[1]:
            raise ConfigError("modes", f"dataset holds {powers.shape[1]} modes, asked for {n}")
        traces[f"mm{n}"] = scale * powers[:, :n].sum(axis=1) / aperture
    return time_s, traces


def run_couple(scenario: Scenario, out_dir, mode_counts=(3, 6, 10, 15), lossless=True) -> dict:
    """Receiver coupling-efficiency traces plus the summary table."""
    time_s, traces = _receiver_traces(scenario, out_dir, mode_counts, lossless)
    summary = {}
    for name, eff in traces.items():
        eff_db = 10.0 * np.log10(np.maximum(eff, 1e-300))
        _write_csv(
            os.path.join(out_dir, f"couple_{name}.csv"),
            scenario.hash,
            ["frame", "time_s", "efficiency", "efficiency_db"],
            [[k, float(time_s[k]), float(eff[k]), float(eff_db[k])] for k in range(eff.size)],
        )
        counts, edges = np.histogram(eff_db, bins=40)
        summary[name] = {
            "mean_efficiency": float(eff.mean()),
            "mean_loss_db": float(10.0 * math.log10(eff.mean())),
            "variation_db": float(eff_db.max() - eff_db.min()),
            "histogram": {
                "bin_edges_db": [float(x) for x in edges],
                "counts": [int(c) for c in counts],
            },
        }
    payload = {
        "scenario_hash": scenario.hash,
        "version": __version__,
        "lossless": lossless,
        "normalization": "post-aperture power",
        "receivers": summary,
    }
    _write_json(os.path.join(out_dir, "couple_summary.json"), payload)
    return payload


def _select_windows(smf_eff_db, window_len, stride):
    """Best/worst windows by SMF efficiency span (max - min, dB)."""
    n = smf_eff_db.size
    if n <= window_len:
        return {"best": (0, n), "worst": (0, n)}
    spans = []
    starts = list(range(0, n - window_len + 1, stride))
    for s in starts:
        seg = smf_eff_db[s : s + window_len]
        spans.append(seg.max() - seg.min())
    spans = np.asarray(spans)
    best = starts[int(np.argmin(spans))]
    worst = starts[int(np.argmax(spans))]
    return {"best": (best, best + window_len), "worst": (worst, worst + window_len)}


def run_ber(scenario: Scenario, out_dir, window="auto", mode_counts=(6, 10, 15),
            lossless=True) -> dict:
    """Cumulated-BER curves, penalties and sync loss for both windows."""
    time_s, traces = _receiver_traces(scenario, out_dir, mode_counts, lossless)
    bercfg = scenario["ber"]
    rop = scenario.rop_grid()

    smf_db = 10.0 * np.log10(np.maximum(traces["smf"], 1e-300))
    if window == "auto":
        windows = _select_windows(smf_db, bercfg["window_len"], bercfg["window_stride"])
    else:
        try:
            start, end = (int(x) for x in window.split(":"))
        except ValueError:
            raise ConfigError("window", f"expected auto or START:END, got {window!r}")
        if not 0 <= start < end <= smf_db.size:
            raise ConfigError("window", f"window {start}:{end} outside 0..{smf_db.size}")
        windows = {"manual": (start, end)}

    # the wrap-transient error floor belongs to the combined receiver only
    model = scenario.receiver_model(floor_duty=0.0)
    mm_model = scenario.receiver_model(floor_duty=scenario["receiver"]["floor_duty"])
    btb = ber_instant(rop, model)

    report = {
        "scenario_hash": scenario.hash,
        "version": __version__,
        "model": {
            "format": model.format,
            "sensitivity_dbm": model.sensitivity_dbm,
            "effective_sensitivity_dbm": model.effective_sensitivity_dbm,
            "bit_rate_bps": model.bit_rate_bps,
            "floor_duty": scenario["receiver"]["floor_duty"],
        },
        "rop_grid_dbm": [float(x) for x in rop],
        "windows": {},
    }
    _write_csv(os.path.join(out_dir, "ber_btb.csv"), scenario.hash,
               ["rop_dbm", "ber"], [[float(r), float(b)] for r, b in zip(rop, btb)])

    for wname, (start, end) in windows.items():
        wrep = {"start": start, "end": end, "receivers": {}}
        for rx, eff in traces.items():
            seg = eff[start:end]
            eta_db = 10.0 * np.log10(np.maximum(seg, 1e-300))
            rx_model = mm_model if rx.startswith("mm") else model
            curve = ber_curve(rop, rx_model, efficiency_db=eta_db)
            penalties = {}
            for target in bercfg["target_bers"]:
                try:
                    penalties[f"{target:g}"] = power_penalty((rop, curve), (rop, btb), target)
                except CurveCrossingError as exc:
                    penalties[f"{target:g}"] = {"error": str(exc), "side": exc.side}
            setpoint = rx_model.effective_sensitivity_dbm + bercfg["operating_margin_db"]
            replay = PowerTrace.from_rop(
                setpoint + (eta_db - eta_db.mean()), frame_rate_hz=3.0
            )
            sync = sync_loss_stats(
                replay, rx_model,
                ber_threshold=bercfg["sync_threshold"],
                reacquire_s=bercfg["reacquire_s"],
            )
            result = BerReport(
                label=f"{rx}_{wname}",
                rop_dbm=rop,
                ber=curve,
                penalty_db=penalties,
                sync_loss_s_per_min=sync,
                floor_estimate=ber_floor_from_phase_jumps(rx_model.floor_duty),
            )
            _write_csv(
                os.path.join(out_dir, f"ber_{rx}_{wname}.csv"),
                scenario.hash,
                ["rop_dbm", "ber"],
                [[float(r), float(b)] for r, b in zip(result.rop_dbm, result.ber)],
            )
            wrep["receivers"][rx] = {
                "curve_csv": f"ber_{rx}_{wname}.csv",
                "penalty_db": result.penalty_db,
                "sync_loss_s_per_min": result.sync_loss_s_per_min,
                "floor_estimate": result.floor_estimate,
                "ber_at_top_of_sweep": float(result.ber[-1]),
            }
        report["windows"][wname] = wrep
    _write_json(os.path.join(out_dir, "ber_report.json"), report)
    return report


def run_wdm(scenario: Scenario, out_dir, mode="scan") -> dict:
    """Delay-mismatch scan or the two-wavelength link comparison."""
    w = scenario["wdm"]
    center_hz = C_VACUUM / (w["center_wavelength_nm"] * 1e-9)
    mismatch_s = w["mismatch_mm"] * 1e-3 / C_VACUUM
    payload = {"scenario_hash": scenario.hash, "version": __version__, "mode": mode}

    if mode == "scan":
        if w["band_width_nm"] > 0:
            spectrum = OpticalSpectrum.rectangular_wavelength(
                w["center_wavelength_nm"] * 1e-9, w["band_width_nm"] * 1e-9
            )
        else:
            spectrum = OpticalSpectrum.two_lines(center_hz, w["line_spacing_ghz"] * 1e9)
        scan = vodl_scan(
            spectrum, mismatch_s, w["scan_range_mm"] * 1e-3, w["scan_step_mm"] * 1e-3
        )
        _write_csv(
            os.path.join(out_dir, "wdm_scan.csv"),
            scenario.hash,
            ["delay_mm", "efficiency"],
            [[float(d * 1e3), float(e)] for d, e in zip(scan.delay_m, scan.efficiency)],
        )
        payload.update(
            {
                "peak_delay_mm": scan.peak_delay_m * 1e3,
                "half_width_mm": (None if math.isinf(scan.half_width_m)
                                  else scan.half_width_m * 1e3),
                "peak_efficiency": float(scan.efficiency.max()),
            }
        )
    elif mode == "link":
        spectrum = OpticalSpectrum.two_lines(center_hz, w["line_spacing_ghz"] * 1e9)
        try:
            _, traces = _receiver_traces(scenario, out_dir, (scenario["topology"]["n_inputs"],), True)
            eff_db = 10.0 * np.log10(
                np.maximum(traces[f"mm{scenario['topology']['n_inputs']}"], 1e-300)
            )
        except (MissingArtifactError, FileNotFoundError):
            eff_db = None  # flat-power link
        result = wdm_link_run(
            spectrum,
            mismatch_s,
            scenario.receiver_model(),
            scenario.rop_grid(),
            efficiency_db=eff_db,
            target_ber=w["target_ber"],
        )
        payload.update(
            {
                "line_hz": [float(x) for x in result.line_hz],
                "line_efficiency": [float(x) for x in result.line_efficiency],
                "aggregate_efficiency": two_path_efficiency(spectrum, mismatch_s),
                "penalty_vs_single_db": result.penalty_vs_single_db,
                "target_ber": w["target_ber"],
                "fading_applied": eff_db is not None,
            }
        )
    else:
        raise ConfigError("wdm.mode", f"expected scan or link, got {mode!r}")
    _write_json(os.path.join(out_dir, "wdm_report.json"), payload)
    return payload


def run_report(out_dir) -> str:
    """Render report.md from the artifacts in a run directory."""
    artifacts = {}
    for name in ("resolved_config.json", "index.json", "couple_summary.json",
                 "ber_report.json", "wdm_report.json"):
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            artifacts[name] = _read_json(path)
    if not artifacts:
        raise MissingArtifactError(f"no artifacts found in {out_dir}")
    hashes = {a.get("scenario_hash") for a in artifacts.values()}
    if len(hashes) != 1:
        raise NumericalContractError(
            f"run directory mixes scenario hashes {sorted(hashes)}; refusing to report"
        )
    scenario_hash = hashes.pop()

    lines = []
    lines.append("# Link simulation report")
    lines.append("")
    lines.append(f"- scenario hash: `{scenario_hash}`")
    lines.append(f"- tool version: {__version__}")
    lines.append("")
    if "resolved_config.json" in artifacts:
        cfg = artifacts["resolved_config.json"]["config"]
        lines.append("## Scenario")
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(cfg, indent=2, sort_keys=True))
        lines.append("```")
        lines.append("")
    if "index.json" in artifacts:
        idx = artifacts["index.json"]
        lines.append("## Time series")
        lines.append("")
        lines.append(f"- frames: {idx['n_frames']} at {idx['frame_rate_hz']} Hz "
                     f"(seed {idx['seed']})")
        lines.append(f"- basis waist: {idx['basis_waist_m']:.6g} m; "
                     f"fiber waist: {idx['smf_waist_m']:.6g} m "
                     f"(uniform-disc efficiency {idx['smf_uniform_disc_efficiency']:.4f})")
        lines.append("")
    if "couple_summary.json" in artifacts:
        cs = artifacts["couple_summary.json"]
        lines.append("## Coupling efficiency"
                     f" ({'lossless' if cs['lossless'] else 'with insertion losses'})")
        lines.append("")
        lines.append("| receiver | collected | mean loss (dB) | max-min variation (dB) |")
        lines.append("|---|---|---|---|")
        for name in sorted(cs["receivers"]):
            r = cs["receivers"][name]
            lines.append(
                f"| {name} | {100 * r['mean_efficiency']:.1f} % | "
                f"{r['mean_loss_db']:.2f} | {r['variation_db']:.2f} |"
            )
        lines.append("")
    if "ber_report.json" in artifacts:
        br = artifacts["ber_report.json"]
        lines.append("## BER")
        lines.append("")
        lines.append(f"- format: {br['model']['format']}, sensitivity "
                     f"{br['model']['sensitivity_dbm']} dBm, floor duty "
                     f"{br['model']['floor_duty']:g}")
        for wname, w in sorted(br["windows"].items()):
            lines.append(f"- window `{wname}` frames {w['start']}..{w['end']}:")
            for rx in sorted(w["receivers"]):
                rr = w["receivers"][rx]
                pens = ", ".join(
                    f"{k}: {v:.2f} dB" if isinstance(v, float) else f"{k}: n/a"
                    for k, v in sorted(rr["penalty_db"].items())
                )
                lines.append(
                    f"  - {rx}: penalties {{{pens}}}, sync loss "
                    f"{rr['sync_loss_s_per_min']:.2f} s/min, "
                    f"BER at sweep top {rr['ber_at_top_of_sweep']:.3g}"
                )
        lines.append("")
    if "wdm_report.json" in artifacts:
        wr = artifacts["wdm_report.json"]
        lines.append("## WDM")
        lines.append("")
        if wr["mode"] == "scan":
            hw = wr["half_width_mm"]
            lines.append(f"- scan peak at {wr['peak_delay_mm']:.4f} mm, "
                         f"half width {'unbounded' if hw is None else f'{hw:.4f} mm'}, "
                         f"peak efficiency {wr['peak_efficiency']:.4f}")
        else:
            pens = ", ".join(
                "n/a" if p is None or isinstance(p, dict) else f"{p:.3f} dB"
                for p in wr["penalty_vs_single_db"]
            )
            lines.append(f"- per-line efficiencies: "
                         + ", ".join(f"{e:.4f}" for e in wr["line_efficiency"]))
            lines.append(f"- per-line penalty vs single wavelength at BER "
                         f"{wr['target_ber']:g}: {pens}")
        lines.append("")
    text = "\n".join(lines)
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write(text)
    return text


def _parse_modes(arg):
    try:
        return tuple(int(x) for x in arg.split(","))
    except ValueError:
        raise ConfigError("modes", f"expected a comma-separated list of counts, got {arg!r}")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="fsolink",
        description="Seeded simulator of a GEO-to-ground optical link with a "
                    "multimode coherently-combined receiver.",
    )
    p.add_argument("--version", action="version", version=f"fsolink {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON file")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--frames", type=int, help="override run.n_frames")

    sub.add_parser("synth", parents=[common], help="simulate the turbulent time series")

    pc = sub.add_parser("couple", parents=[common], help="derive coupling-efficiency traces")
    pc.add_argument("--modes", default="3,6,10,15", help="comma list of mode counts")
    pc.add_argument("--lossless", action="store_true", default=True)
    pc.add_argument("--lossy", dest="lossless", action="store_false",
                    help="apply chip + demultiplexer insertion losses")

    pb = sub.add_parser("ber", parents=[common], help="BER curves, penalties, sync loss")
    pb.add_argument("--modes", default="6,10,15")
    pb.add_argument("--window", default="auto", help="auto or START:END frame range")
    pb.add_argument("--rop-sweep", help="LO:HI:STEP in dBm, overrides the scenario sweep")
    pb.add_argument("--lossless", action="store_true", default=True)
    pb.add_argument("--lossy", dest="lossless", action="store_false")

    pw = sub.add_parser("wdm", parents=[common], help="delay scan or two-wavelength link")
    g = pw.add_mutually_exclusive_group()
    g.add_argument("--scan", dest="wdm_mode", action="store_const", const="scan")
    g.add_argument("--link", dest="wdm_mode", action="store_const", const="link")
    pw.set_defaults(wdm_mode="scan")

    pr = sub.add_parser("report", help="render report.md for a run directory")
    pr.add_argument("--out", required=True, help="run directory")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            run_report(args.out)
            return 0
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        if args.frames is not None:
            overrides["run.n_frames"] = args.frames
        if args.command == "ber" and args.rop_sweep:
            try:
                lo, hi, step = (float(x) for x in args.rop_sweep.split(":"))
            except ValueError:
                raise ConfigError("rop-sweep", f"expected LO:HI:STEP, got {args.rop_sweep!r}")
            overrides["ber.rop_start_dbm"] = lo
            overrides["ber.rop_stop_dbm"] = hi
            overrides["ber.rop_step_db"] = step
        scenario = load_scenario(args.config, overrides)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "synth":
            run_synth(scenario, args.out)
        elif args.command == "couple":
            run_couple(scenario, args.out, mode_counts=_parse_modes(args.modes),
                       lossless=args.lossless)
        elif args.command == "ber":
            run_ber(scenario, args.out, window=args.window,
                    mode_counts=_parse_modes(args.modes), lossless=args.lossless)
        elif args.command == "wdm":
            run_wdm(scenario, args.out, mode=args.wdm_mode)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except NumericalContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
