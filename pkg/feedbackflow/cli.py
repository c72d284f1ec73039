# Command-line front end: run scenarios or config files, sweep a parameter,
# re-verify a saved trajectory, and run the convex-set self-test.
#
# Exit codes: 0 success, 1 verification or self-test failure, 2 I/O or config
# error.

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from . import experiments
from .experiments import Expectation, Scenario
from .model import CONFIG_KEYS, ConfigError, SimulationConfig, build_config
from .selftest import run_selftest
from .solver import SimulationError, TrajectoryRecord
from .util import atomic_write, format_number
from .verify import detect_hitting

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

TRAJECTORY_HEADER = ("time", "d_K", "d_eps_K", "sigma_norm", "theta_norm",
                     "fp_iters")
SUMMARY_KEYS = ("t_star", "bound", "slope_fit", "max_violation", "worst_ratio")
SWEEP_HEADER = ("value", "status", "hit", "t_star", "bound", "slope_fit",
                "max_violation", "worst_ratio")

DEFAULT_OUT_DIR = "out"

# Checks that need full fields, which a trajectory read back from CSV lacks.
FIELD_CHECKS = ("analytic-trace", "sign-structure")

COMMANDS = ("run", "sweep", "verify", "selftest", "list-scenarios")


@dataclass
class RunManifest:
    command: str
    target: Optional[str] = None
    out_dir: str = DEFAULT_OUT_DIR
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command '{self.command}'")
        for key in self.overrides:
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown config key")


def _yaml():
    return YAML(typ="safe")


def _flatten(mapping, prefix=""):
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def load_params(text):
    """Parse a YAML config document into flat dotted-key parameters."""
    try:
        document = _yaml().load(text)
    except YAMLError as e:
        raise ConfigError("<document>", f"invalid YAML: {e}") from None
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("<document>", "expected a mapping of config keys")
    return _flatten(document)


def parse_config(text) -> SimulationConfig:
    return build_config(load_params(text))


def parse_overrides(assignments):
    overrides = {}
    for item in assignments or ():
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key, "override must look like key=value")
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown config key")
        try:
            overrides[key] = _yaml().load(value)
        except YAMLError as e:
            raise ConfigError(key, f"invalid value: {e}") from None
    return overrides


def trajectory_csv_text(traj: TrajectoryRecord):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for row in zip(traj.times, traj.d_k, traj.d_eps_k, traj.sigma_norm,
                   traj.theta_norm, traj.fp_iters):
        writer.writerow([format_number(float(x)) for x in row[:-1]]
                        + [int(row[-1])])
    return buf.getvalue()


def summary_path(path):
    return os.path.splitext(path)[0] + "_summary.txt"


def emit_trajectory_csv(traj, report, path):
    atomic_write(path, trajectory_csv_text(traj))
    lines = [f"{key}={format_number(getattr(report, key))}"
             for key in SUMMARY_KEYS]
    atomic_write(summary_path(path), "\n".join(lines) + "\n")
    logging.info("Wrote %s (%d rows)", path, len(traj))


def emit_final_field_csv(traj, grid, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("x", "theta", "u", "sigma"))
    for row in zip(grid.centers, traj.theta_final.values,
                   traj.u_final.values, traj.sigma_final.values):
        writer.writerow([format_number(float(x)) for x in row])
    atomic_write(path, buf.getvalue())


def load_trajectory_csv(path) -> TrajectoryRecord:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no samples")
    data = np.array([[float(x) for x in row] for row in rows])
    return TrajectoryRecord(
        times=data[:, 0], d_k=data[:, 1], d_eps_k=data[:, 2],
        sigma_norm=data[:, 3], theta_norm=data[:, 4],
        fp_iters=data[:, 5].astype(int))


def write_sweep_csv(result, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in result.rows:
        r = row.report
        writer.writerow([
            format_number(row.value), row.status,
            "" if r is None else int(r.hit),
            format_number(r.t_star) if r else "",
            format_number(r.bound) if r else "",
            format_number(r.slope_fit) if r else "",
            format_number(row.max_violation) if r else "",
            format_number(row.worst_ratio) if r else ""])
    atomic_write(path, buf.getvalue())


def _default_expectations(cfg):
    return (Expectation("inequality-residual", 1e-2 * cfg.rho),
            Expectation("energy", 1e-9))


def resolve_scenario(target, overrides) -> Scenario:
    """A bundled scenario by name, or a config file wrapped as a scenario
    carrying the generic checks."""
    if target in experiments.SCENARIOS:
        return experiments.get_scenario(target, overrides)
    with open(target) as f:
        params = {**load_params(f.read()), **overrides}
    cfg = build_config(params)
    name = os.path.splitext(os.path.basename(target))[0]
    return Scenario(name, params, _default_expectations(cfg))


def _print_results(results):
    for result in results:
        print(result.line())
    return all(r.passed for r in results)


def cmd_run(args, manifest):
    scenario = resolve_scenario(manifest.target, manifest.overrides)
    os.makedirs(manifest.out_dir, exist_ok=True)
    traj, report, results = experiments.run_scenario(scenario)
    emit_trajectory_csv(traj, report,
                        os.path.join(manifest.out_dir, "trajectory.csv"))
    emit_final_field_csv(traj, scenario.cfg.grid,
                         os.path.join(manifest.out_dir, "final_field.csv"))
    print(f"{scenario.name}: hit = {report.hit}, t_star = "
          f"{format_number(report.t_star)}, bound = "
          f"{format_number(report.bound)}")
    return EXIT_OK if _print_results(results) else EXIT_FAILED


def cmd_sweep(args, manifest):
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--values", f"not a list of numbers: "
                          f"{args.values!r}") from None
    base = resolve_scenario(manifest.target, manifest.overrides)
    os.makedirs(manifest.out_dir, exist_ok=True)
    result = experiments.run_sweep(base, args.axis, values)
    for row in result.rows:
        if row.status == "ok":
            name = f"trajectory_{args.axis}_{format_number(row.value)}.csv"
            emit_trajectory_csv(row.traj, row.report,
                                os.path.join(manifest.out_dir, name))
        print(f"{args.axis} = {format_number(row.value)}: {row.status}"
              + (f", t_star = {format_number(row.report.t_star)}"
                 if row.report else f" ({row.error})"))
    write_sweep_csv(result, os.path.join(manifest.out_dir, f"sweep_{args.axis}.csv"))
    return EXIT_OK


def cmd_verify(args, manifest):
    traj = load_trajectory_csv(args.trajectory)
    scenario = resolve_scenario(manifest.target, manifest.overrides)
    report = detect_hitting(traj, scenario.cfg)
    checks = tuple(e for e in scenario.expectations
                   if e.check not in FIELD_CHECKS)
    for e in scenario.expectations:
        if e.check in FIELD_CHECKS:
            print(f"SKIP {e.check}: needs full fields")
    scalar = Scenario(scenario.name, scenario.params, checks)
    results = experiments.check_expectations(scalar, traj, report,
                                             scenario.cfg)
    return EXIT_OK if _print_results(results) else EXIT_FAILED


def cmd_selftest(args, manifest):
    return run_selftest(args.seed)


def cmd_list_scenarios(args, manifest):
    for name in experiments.list_scenarios():
        print(name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="feedbackflow",
        description="Feedback-controlled quasilinear diffusion: simulate, "
                    "sweep and verify finite-time reaching of obstacle sets")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="Log every step")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="Only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="Override a config key (repeatable)")

    run = sub.add_parser("run", help="Run a scenario or a config file")
    run.add_argument("target", help="Scenario name or path to a YAML config")
    run.add_argument("--out", default=DEFAULT_OUT_DIR,
                     help="Directory to write results into")
    add_common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="Sweep one parameter of a scenario")
    sweep.add_argument("target", help="Scenario name or path to a YAML config")
    sweep.add_argument("--axis", required=True,
                       choices=experiments.SWEEP_AXES)
    sweep.add_argument("--values", required=True,
                       help="Comma-separated parameter values")
    sweep.add_argument("--out", default=DEFAULT_OUT_DIR,
                       help="Directory to write results into")
    add_common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify",
                            help="Re-run the verifiers on a trajectory CSV")
    verify.add_argument("trajectory", help="Trajectory CSV written by 'run'")
    verify.add_argument("config", help="Scenario name or path to a YAML "
                        "config")
    add_common(verify)
    verify.set_defaults(func=cmd_verify)

    selftest = sub.add_parser("selftest",
                              help="Check the convex-set formulas against "
                                   "their oracles")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(func=cmd_selftest)

    listing = sub.add_parser("list-scenarios", help="List bundled scenarios")
    listing.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level)

    try:
        manifest = RunManifest(
            args.command,
            target=getattr(args, "config", None) or getattr(args, "target",
                                                            None),
            out_dir=getattr(args, "out", DEFAULT_OUT_DIR),
            overrides=parse_overrides(getattr(args, "set", None)))
        logging.debug("Manifest: %s", manifest)
        return args.func(args, manifest)
    except (ConfigError, KeyError) as e:
        logging.error("Config error: %s", e)
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        logging.error("%s", e)
        return EXIT_ERROR
    except SimulationError as e:
        logging.error("Simulation failed: %s", e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
