"""Command-line front end: ``odevarcoef simulate | estimate | sweep``.

Exit codes: 0 ok, 2 configuration error, 3 numeric blow-up, 4 majority of
estimation points failed, 5 a mandatory verdict failed.
"""

from __future__ import annotations

import argparse
import csv
from datetime import datetime, timezone
import hashlib
import io
import json
import logging
import os
from pathlib import Path
import sys
import tempfile

import numpy as np

from . import __version__
from .asymptotics import (
    RateReport, run_sweep, scenario_hash, verify_lemma2, verify_lemma3, verify_theorem1,
    _jsonable,
)
from .config import load_plan, load_scenario
from .errors import ConfigError, NonfiniteStateError, OdeVarCoefError, RegimeNotCoveredError
from .estimator import estimate_beta_curve, stage_two_input, ztwz_limit_gap
from .sim import observe, sample_design, solve_trajectories

log = logging.getLogger("odevarcoef")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_ESTIMATE, EXIT_VERDICT = 0, 2, 3, 4, 5
THREADS_ENV = "ODEVARCOEF_THREADS"
LEMMA3_ITEMS = {"tr_a": "i", "tr_a2": "ii", "tr_aat": "iii", "x_a_x": "iv", "x_aat_x": "v", "x_ata_x": "vi"}


def _fmt(v) -> str:
    """Shortest round-trip text for numbers; empty for None/NaN."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_fmt(v) for v in row] for row in rows)
    _atomic_write(path, buf.getvalue().encode())


def write_json(path: Path, obj):
    _atomic_write(path, (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, files, *, scen_hash, seed, started, command):
    manifest = {
        "tool": "odevarcoef",
        "version": __version__,
        "command": command,
        "scenario_hash": scen_hash,
        "seed": seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": [{"name": f.name, "sha256": _sha256(f)} for f in files],
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def self_check(out: Path) -> bool:
    """Recompute every hash listed in ``out/manifest.json``."""
    manifest = json.loads((out / "manifest.json").read_text())
    return all(_sha256(out / f["name"]) == f["sha256"] for f in manifest["files"])


def _now():
    return datetime.now(timezone.utc).isoformat()


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def cmd_simulate(args) -> int:
    started = _now()
    sf = load_scenario(args.scenario, args.seed)
    sc = sf.scenario
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = solve_trajectories(sc)
    design = sample_design(sc)
    obs = observe(traj, design, sc)

    def traj_rows():
        for d in range(sc.p):
            for l in range(sc.m):
                for g, t in enumerate(traj.grid):
                    deriv = traj.deriv_x1[l, g] if d == 0 else None
                    yield (t, d + 1, l + 1, traj.states[d, l, g], deriv)

    def obs_rows():
        for i, t in enumerate(design.times):
            for d in range(sc.p):
                for l in range(sc.m):
                    yield (i + 1, t, d + 1, l + 1, obs.y[d, l, i])

    files = [out / "trajectories.csv", out / "observations.csv"]
    write_csv(files[0], ("grid_t", "d", "l", "x", "x1deriv"), traj_rows())
    write_csv(files[1], ("i", "t", "d", "l", "y"), obs_rows())
    write_manifest(out, files, scen_hash=scenario_hash(sc), seed=sc.seed, started=started,
                   command="simulate")
    return EXIT_OK


def parse_grid(spec: str) -> np.ndarray:
    """``"start:stop:count"`` to ``count`` evenly spaced points."""
    try:
        start, stop, count = spec.split(":")
        count = int(count)
        start, stop = float(start), float(stop)
    except ValueError as err:
        raise ConfigError(f"grid must look like start:stop:count, got {spec!r}", path="--grid") from err
    if count < 1:
        raise ConfigError("grid count must be >= 1", path="--grid")
    return np.linspace(start, stop, count)


def cmd_estimate(args) -> int:
    started = _now()
    sf = load_scenario(args.scenario, args.seed)
    if sf.stage1 is None:
        raise ConfigError("estimation needs a smoother section", path="smoother")
    sc = sf.scenario
    grid = parse_grid(args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = solve_trajectories(sc)
    design = sample_design(sc)
    obs = observe(traj, design, sc)
    inp = stage_two_input(design, obs, sf.stage1)
    interior = (grid > 0.0) & (grid < 1.0)
    ests = estimate_beta_curve(inp, sf.stage2, grid[interior])
    by_t = dict(zip(np.flatnonzero(interior), ests))
    beta_true = sc.beta(grid)
    f = sc.density.pdf(grid)
    beta_rows, diag_rows = [], []
    n_ok = 0
    for k, t0 in enumerate(grid):
        est = by_t.get(k)
        if est is None:
            status, msg = "failed", "boundary: t0 must lie in the open interval (0, 1)"
        elif not est.ok:
            status, msg = "failed", est.error
        else:
            status, msg = "ok", ""
            n_ok += 1
        gap = None
        if status == "ok":
            try:
                gap = ztwz_limit_gap(inp, traj, sf.stage2, t0, float(f[k]))
            except OdeVarCoefError as err:  # diagnostic only
                msg = f"gap unavailable: {err}"
        for d in range(sc.p):
            bh = est.beta[d] if status == "ok" else None
            beta_rows.append((t0, d + 1, bh, beta_true[d, k],
                              est.cond if status == "ok" else None,
                              est.n_eff if status == "ok" else None, status))
        diag_rows.append((t0, status, est.cond if status == "ok" else None,
                          est.n_eff if status == "ok" else None, gap, msg))
    files = [out / "beta_hat.csv", out / "diagnostics.csv"]
    write_csv(files[0], ("t0", "d", "beta_hat", "beta_true", "cond", "n_eff", "status"), beta_rows)
    write_csv(files[1], ("t0", "status", "cond", "n_eff", "ztwz_gap", "message"), diag_rows)
    write_manifest(out, files, scen_hash=scenario_hash(sc), seed=sc.seed, started=started,
                   command="estimate")
    return EXIT_OK if n_ok >= 0.5 * grid.size else EXIT_ESTIMATE


def cmd_sweep(args) -> int:
    started = _now()
    plan = load_plan(args.plan, args.seed)
    sc = plan["scenario"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    verdicts = {"theorem1": {}, "sweeps": {}}
    failed = []
    cell_rows = []
    for sp in plan["sweeps"]:
        log.info("sweep %s: %d cells x %d replicates", sp.name, len(sp.cells()), sp.replicates)
        report = run_sweep(sp, threads=threads)
        for row in report.csv_rows():
            cell_rows.append((sp.name, *row))
        verdicts["sweeps"][sp.name] = {"regime": sp.regime, "mandatory": sp.mandatory,
                                       "fitted": report.fitted, "provenance": report.provenance}
        if sp.regime:
            try:
                v = verify_theorem1(report, sp.regime)
            except RegimeNotCoveredError as err:
                v = {"regime": sp.regime, "pass": False, "error": str(err)}
            v["mandatory"] = sp.mandatory
            v["sweep"] = sp.name
            v.pop("cells", None)
            verdicts["theorem1"][sp.regime] = v
            if sp.mandatory and not v["pass"]:
                failed.append(f"theorem1.{sp.regime}")
    if "lemma3" in plan:
        l3 = plan["lemma3"]
        res = verify_lemma3(sc, l3["n"], l3["h_grid"], l3["r_values"], t0=plan["t0"],
                            seeds=range(l3["seeds"]), q=plan["q"], kernel=plan["kernel"], tol=l3["tol"])
        items = {}
        for key, roman in LEMMA3_ITEMS.items():
            rows = [dict(i) for i in res["items"] if i["item"] == key]
            items[roman] = {"quantity": key, "per_r": rows, "pass": all(r["pass"] for r in rows),
                            "mandatory": l3["mandatory"]}
            if l3["mandatory"] and not items[roman]["pass"]:
                failed.append(f"lemma3.{roman}")
        verdicts["lemma3"] = {"n": l3["n"], "h_grid": l3["h_grid"], "items": items}
    if "lemma2" in plan:
        l2 = plan["lemma2"]
        rows = []
        for dens in l2["densities"]:
            for nu in l2["nu"]:
                rows.append(verify_lemma2(dens, l2["n_grid"], nu, h_rule=l2["h_rule"], t0=plan["t0"],
                                          q=plan["q"], kernel=plan["kernel"],
                                          seeds=range(l2["seeds"]), seed=sc.seed))
        ok = all(r["pass"] for r in rows)
        verdicts["lemma2"] = {"checks": rows, "pass": ok, "mandatory": l2["mandatory"]}
        if l2["mandatory"] and not ok:
            failed.append("lemma2")
    verdicts["mandatory_failed"] = failed
    verdicts["pass"] = not failed
    files = []
    if plan["sweeps"]:
        files.append(out / "rate_cells.csv")
        write_csv(files[-1], ("sweep",) + RateReport.CSV_COLUMNS, cell_rows)
    files.append(out / "verdicts.json")
    write_json(files[-1], verdicts)
    write_manifest(out, files, scen_hash=scenario_hash(sc), seed=sc.seed, started=started,
                   command="sweep")
    return EXIT_VERDICT if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odevarcoef", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, metavar="DIR")
        p.add_argument("--seed", type=int, default=None, help="override the file's seed")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (fallback: ${THREADS_ENV})")
        p.add_argument("--self-check", action="store_true",
                       help="verify manifest hashes after writing")

    p = sub.add_parser("simulate", help="write true trajectories and noisy observations")
    p.add_argument("--scenario", required=True, metavar="PATH")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate beta(t0) over a grid")
    p.add_argument("--scenario", required=True, metavar="PATH")
    p.add_argument("--grid", required=True, metavar="SPEC", help="start:stop:count")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="Monte Carlo rate sweeps and verdicts")
    p.add_argument("--plan", required=True, metavar="PATH")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NonfiniteStateError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BLOWUP
    if args.self_check and not self_check(Path(args.out)):
        print("error: manifest hashes do not match emitted files", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
