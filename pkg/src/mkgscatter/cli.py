"""Command-line driver: data check, cone data, evolution, diagnostics and round trips.

Exit status is 0 when every check passes, 1 on a quantitative failure and 2 on a
usage or parse error.  MKG_THREADS caps the BLAS thread pools.
"""

from __future__ import annotations

import os
import sys

_threads = os.environ.get("MKG_THREADS")
if _threads is not None and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import shutil  # noqa: E402
from dataclasses import asdict, dataclass  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from . import conedata as cdm  # noqa: E402
from . import diagnostics as dg  # noqa: E402
from . import evolve as ev  # noqa: E402
from . import scri  # noqa: E402
from .conformal import ConformalChart, push_data_to_cone  # noqa: E402

OUTPUT_SCHEMA = "mkgscatter-output/1"
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass
class RunManifest:
    """Everything that determines a run; written verbatim to the output directory."""

    command: str
    manifest: str
    out: str
    grid: int = 129
    lmax: int | None = None
    mode: str = "march"
    U_star: float | None = None
    eps1: float = 0.1
    eps2: float = 0.5
    bigR: float = 8.0
    seed: int = 0
    schema: str = OUTPUT_SCHEMA
    version: str = __version__


# -- helpers -------------------------------------------------------------------------
def _load(run: RunManifest):
    spec = scri.load_manifest(run.manifest)
    if run.lmax is not None:
        spec["l_max"] = run.lmax
    data = scri.data_from_manifest(spec)
    U = data.meta["U_star"] if run.U_star is None else run.U_star
    return data, ConformalChart(float(U))


def _prepare_out(run: RunManifest) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(run.manifest, out / "manifest.json")
    with open(out / "run.json", "w") as fh:
        json.dump(asdict(run), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=dg._jsonable)
        fh.write("\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{x:.12e}" if isinstance(x, float) else x for x in row])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValueError, ev.ConvergenceError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


def _config(run: RunManifest, data) -> ev.EvolutionConfig:
    return ev.EvolutionConfig(N=run.grid, l_max=data.grid.l_max, mode=run.mode)


def _check(run, data, out):
    rep = scri.check_compatibility(data)
    rows = rep.rows() + [("sn_norm", scri.sn_norm(data, run.U_star if run.U_star is not None
                                                   else data.meta["U_star"]), "", True)]
    scri.write_report(out / "check_data.csv", rows)
    return rep


def _cone(run, data, chart):
    return _stage("cone", lambda: cdm.assemble_cone_state(push_data_to_cone(data, chart, run.grid)))


def _evolve(run, data, chart):
    cone = _cone(run, data, chart)
    return cone, _stage("evolve", ev.evolve_march, cone, _config(run, data))


def _require_march(run):
    if run.mode != "march":
        raise UsageError("picard mode covers the initial slab only; use it with 'evolve'")


def _require_diag_grid(run):
    if run.grid < 65 or (run.grid - 1) % 32:
        raise UsageError("diagnostics need --grid N with N - 1 a multiple of 32 and N >= 65")


def _diagnose(run, data, chart, st, out):
    from . import plotting

    q0 = scri.compute_charge(data)[0]
    rep = _stage("diagnose", dg.run_diagnostics, st, chart, data, run.eps1, run.eps2, run.bigR,
                 q0=q0)
    rep.write_csv(out / "energy_report.csv")
    rep.write_json(out / "energy_report.json")
    summ = rep.summary
    if "t" in summ.get("decay", {}):
        d = summ["decay"]
        plotting.plot_decay(dg.DecayFit(np.asarray(d["t"]), np.asarray(d["sup_phi"]),
                                        np.asarray(d["sup_alphab"]), d["slope_phi"],
                                        d["slope_alphab"]), out / "decay.png")
    if "charge" in summ:
        plotting.plot_charge(summ["charge"], q0, out / "charge.png")
    return rep


# -- commands ------------------------------------------------------------------------
def cmd_check_data(run: RunManifest) -> int:
    data, _ = _load(run)
    out = _prepare_out(run)
    rep = _check(run, data, out)
    print(f"q0 = {rep.q0:.6e}  anisotropy = {rep.anisotropy:.2e}  magnetic = {rep.magnetic_sup:.2e}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_make_cone(run: RunManifest) -> int:
    data, chart = _load(run)
    out = _prepare_out(run)
    cone = _cone(run, data, chart)
    cdm.dump_csv(cone, out / "cone.csv")
    res = {k: float(np.abs(v).max()) for k, v in cdm.ode_residuals(cone).items()}
    _write_json(out / "cone_summary.json", {"N_v": run.grid, "l_max": data.grid.l_max,
                                            "U_star": chart.U_star, "ode_residuals": res})
    return EXIT_PASS


def cmd_evolve(run: RunManifest) -> int:
    data, chart = _load(run)
    out = _prepare_out(run)
    cone = _cone(run, data, chart)
    cfg = _config(run, data)
    st, gaps = _stage("evolve", ev.evolve, cone, cfg)
    gm = ev.gauge_monitor(st)
    last = st.n_levels - 1
    ev.write_snapshot(out / "final_slice.mkgs", st, last)
    ev.write_slice_csv(out / "final_slice.csv", st, last)
    summary = {"mode": run.mode, "N": cfg.N, "levels": st.n_levels, "h": st.h,
               "max_level_iters": int(st.level_iters.max(initial=0)),
               "gauge_max_lambda": gm.max_lambda, "gauge_wave_residual": gm.wave_residual}
    if gaps is not None:
        summary["picard_gaps"] = gaps
    _write_json(out / "evolve_summary.json", summary)
    print(f"evolved {st.n_levels} levels; max |lambda| = {gm.max_lambda:.3e}")
    return EXIT_PASS


def cmd_diagnose(run: RunManifest) -> int:
    _require_march(run)
    _require_diag_grid(run)
    data, chart = _load(run)
    out = _prepare_out(run)
    _, st = _evolve(run, data, chart)
    rep = _diagnose(run, data, chart, st, out)
    for d, dom, par, val, tol, ok in rep.rows:
        if ok is not None:
            print(f"{'PASS' if ok else 'FAIL'}  {d} = {val:.4e}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_roundtrip(run: RunManifest) -> int:
    from . import plotting

    _require_march(run)
    _require_diag_grid(run)
    data, chart = _load(run)
    out = _prepare_out(run)
    compat = _check(run, data, out)
    if not compat.passed:
        print("data fail the compatibility conditions")
        return EXIT_FAIL
    _, st = _evolve(run, data, chart)
    rep = _diagnose(run, data, chart, st, out)
    rt = rep.summary["roundtrip"]
    _write_rows(out / "roundtrip.csv", ["u", "error_l2", "input_l2"],
                [(float(a), float(b), float(c)) for a, b, c in
                 zip(rt["u"], rt["error_l2"], rt["input_norm"])])
    plotting.plot_roundtrip(rt, out / "roundtrip.png")
    print(f"round-trip relative L2 error {rt['relative_l2']:.3e} over {rt['n_probes']} probes")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_convergence(run: RunManifest) -> int:
    from . import plotting

    _require_march(run)
    _require_diag_grid(run)
    data, chart = _load(run)
    out = _prepare_out(run)
    Ns = [run.grid, 2 * run.grid - 1, 4 * run.grid - 3]
    cols = {"roundtrip": [], "gauge_lambda": [], "residual_rho_Lbar": [], "residual_scalar": [],
            "energy_identity_upper": [], "charge_drift": []}
    q0 = scri.compute_charge(data)[0]
    spec = dg.MultiplierSpec("upper", run.eps1, run.eps2, run.bigR)
    for N in Ns:
        sub = RunManifest(**{**asdict(run), "grid": N})
        _, st = _evolve(sub, data, chart)
        pf = dg.fields_from_state(st, chart)
        res = dg.residual_norms(dg.null_structure_residuals(pf))
        ch = dg.charge_history(st, chart, dg.charge_times(st, chart))
        cols["roundtrip"].append(dg.round_trip_error(st, chart, data)["relative_l2"])
        cols["gauge_lambda"].append(ev.gauge_monitor(st).max_lambda)
        cols["residual_rho_Lbar"].append(res["rho_Lbar"])
        cols["residual_scalar"].append(res["scalar"])
        cols["energy_identity_upper"].append(dg.energy_identity_residual(pf, spec)["residual"])
        cols["charge_drift"].append(float(np.ptp(ch["total"])))
        print(f"N = {N}: round-trip {cols['roundtrip'][-1]:.3e}")
    rows = [(N, 1.0 / (N - 1), *(float(cols[k][i]) for k in cols)) for i, N in enumerate(Ns)]
    _write_rows(out / "convergence.csv", ["N", "h", *cols], rows)
    ratios = {k: [float(a / b) if b else float("inf") for a, b in zip(v, v[1:])]
              for k, v in cols.items()}
    _write_json(out / "convergence.json", {"N": Ns, "values": cols, "ratios": ratios, "q0": q0})
    plotting.plot_convergence(Ns, cols, out / "convergence.png")
    rt = cols["roundtrip"]
    ok = rt[0] >= rt[1] >= rt[2]
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "check-data": cmd_check_data,
    "make-cone": cmd_make_cone,
    "evolve": cmd_evolve,
    "diagnose": cmd_diagnose,
    "roundtrip": cmd_roundtrip,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mkgscatter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--run", help="JSON run file; explicit flags override its entries")
        s.add_argument("--manifest", help="scattering data manifest (default: canonical example)")
        s.add_argument("--out", help="output directory (default: ./mkg-<command>)")
        s.add_argument("--grid", type=int, help="nodes N along the initial cone")
        s.add_argument("--lmax", type=int, help="angular band limit (overrides the manifest)")
        s.add_argument("--mode", choices=("march", "picard"))
        s.add_argument("--U-star", dest="U_star", type=float)
        s.add_argument("--eps1", type=float)
        s.add_argument("--eps2", type=float)
        s.add_argument("--bigR", type=float)
        s.add_argument("--seed", type=int)
    return p


def resolve_run(args) -> RunManifest:
    base = {}
    if args.run:
        try:
            base = json.loads(Path(args.run).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read run file: {exc}") from exc
        if not isinstance(base, dict):
            raise UsageError("run file must be a JSON object")
        base = {k: v for k, v in base.items() if k in RunManifest.__dataclass_fields__}
    for key in ("manifest", "out", "grid", "lmax", "mode", "U_star", "eps1", "eps2", "bigR", "seed"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    base["command"] = args.command
    base.setdefault("manifest", str(scri.CANONICAL_MANIFEST))
    base.setdefault("out", f"mkg-{args.command}")
    base["schema"], base["version"] = OUTPUT_SCHEMA, __version__
    try:
        run = RunManifest(**base)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    if run.grid < 9:
        raise UsageError("--grid must be at least 9")
    try:
        dg.MultiplierSpec("upper", run.eps1, run.eps2, run.bigR)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return run


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print("mkgscatter: MKG_THREADS must be a positive integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        run = resolve_run(args)
        return COMMANDS[args.command](run)
    except (UsageError, scri.ManifestError) as exc:
        print(f"mkgscatter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"mkgscatter: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
