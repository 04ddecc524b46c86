"""Command line front end.

Subcommands::

    bemshell run <config.toml> [--mode M] [--eta X] [--out DIR]
    bemshell bench cantilever|disk [--mode M] [--eta X] [--out DIR]
    bemshell sweep <config.toml> --dt 0.01,0.05 [--mode M] [--eta X] [--out DIR]

``run`` streams observables to ``<out>/observables.csv`` while the march
is in flight, so a failed run leaves the rows up to the failure behind,
and writes one VTK surface snapshot per recorded state afterwards.  The
exit code is nonzero whenever any step fails.

The environment variable ``BEMSHELL_THREADS`` caps the BLAS thread count
for everything the process does (dense BEM solves dominate, and on small
systems oversubscription is slower than one thread).
"""

import argparse
import dataclasses
import os
import sys
import time

from .config import read_config, write_config
from .dynamics import measure_frequency
from .errors import BemShellError, StepFailureError
from .output import ObservableStream, write_outputs, write_surface_vtk
from .scenarios import build_cantilever, build_disk_drag, build_scenario

__all__ = ["main"]


def _apply_thread_env():
    threads = os.environ.get("BEMSHELL_THREADS")
    if not threads:
        return None
    try:
        import threadpoolctl
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
        return None
    return threadpoolctl.threadpool_limits(limits=int(threads))


def _overridden(config, args):
    updates = {}
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.eta is not None:
        updates["eta"] = args.eta
    if args.out is not None:
        updates["output_dir"] = args.out
    return dataclasses.replace(config, **updates) if updates else config


def _run_one(config, base_dir, out_dir):
    """March one scenario with streaming CSV; returns (result or None, rc)."""
    scenario = build_scenario(config, base_dir=base_dir)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "observables.csv")
    t0 = time.perf_counter()
    try:
        with ObservableStream(csv_path, cadence=config.output_cadence) as stream:
            result = scenario.simulate(on_step=stream.on_step)
    except StepFailureError as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        print(f"partial observables kept in {csv_path}", file=sys.stderr)
        return None, 1
    elapsed = time.perf_counter() - t0

    for snap in result.snapshots:
        tcoef = None
        if scenario.coupled.assembler is not None:
            system = scenario.coupled.assembler.assemble(displacement=snap.u)
            tcoef = system.solve_tractions(snap.v)
        write_surface_vtk(
            os.path.join(out_dir, f"surface_{snap.step:06d}.vtk"),
            scenario.shell.patch, snap.u, snap.v, tcoef,
        )

    tip = result.tip[-1]
    print(f"{config.name}: {config.n_steps} steps ({config.mode}) "
          f"in {elapsed:.1f} s")
    print(f"  final tip displacement ({tip[0]:.6g}, {tip[1]:.6g}, {tip[2]:.6g}) m")
    print(f"  max newton iterations {int(result.newton_iters.max())}")
    freq = measure_frequency(result.time, result.tip[:, 2])
    if freq is not None:
        print(f"  tip frequency {freq:.4f} Hz")
    print(f"  observables in {csv_path}")
    return result, 0


def _cmd_run(args):
    config = _overridden(read_config(args.config), args)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out_dir = args.out or config.output_dir or "."
    return _run_one(config, base_dir, out_dir)[1]


def _cmd_sweep(args):
    config = _overridden(read_config(args.config), args)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out_root = args.out or config.output_dir or "."
    try:
        dts = [float(v) for v in args.dt.split(",") if v]
    except ValueError:
        print(f"bad --dt list: {args.dt!r}", file=sys.stderr)
        return 2
    if not dts:
        print("--dt needs at least one value", file=sys.stderr)
        return 2
    rc = 0
    for dt in dts:
        cfg = dataclasses.replace(config, dt=dt)
        out_dir = os.path.join(out_root, f"dt_{dt:g}")
        print(f"-- dt = {dt:g}")
        rc = max(rc, _run_one(cfg, base_dir, out_dir)[1])
    return rc


def _cmd_bench(args):
    if args.target == "cantilever":
        kwargs = {}
        if args.mode is not None:
            kwargs["mode"] = args.mode
        if args.eta is not None:
            kwargs["eta"] = args.eta
        t0 = time.perf_counter()
        scenario = build_cantilever(**kwargs)
        result = scenario.simulate()
        elapsed = time.perf_counter() - t0
        freq = measure_frequency(result.time, result.tip[:, 2])
        shown = "none (over-damped)" if freq is None else f"{freq:.4f} Hz"
        print(f"cantilever release ({scenario.config.mode}): "
              f"{scenario.config.n_steps} steps in {elapsed:.1f} s")
        print(f"  tip frequency {shown}")
        if args.out:
            paths = write_outputs(scenario, result, out_dir=args.out)
            write_config(os.path.join(args.out, "cantilever.toml"),
                         scenario.config)
            print(f"  wrote {len(paths) + 1} files to {args.out}")
        return 0

    eta = args.eta if args.eta is not None else 1.0
    drag = build_disk_drag(eta=eta)
    print(f"disk broadside drag, reference 16 eta R U = {drag.reference:.6g} N")
    for level in range(4):
        t0 = time.perf_counter()
        value = drag.drag(level)
        err = abs(value - drag.reference) / drag.reference
        print(f"  level {level}: {value:.6f} N  "
              f"(rel err {err:.2e}, {time.perf_counter() - t0:.2f} s)")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bemshell",
        description="Isogeometric BEM-shell simulations of thin structures "
                    "in creeping flow.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--mode", choices=["fully_implicit", "semi_implicit",
                                          "segregated", "dry"])
        p.add_argument("--eta", type=float, help="fluid viscosity (Pa s)")
        p.add_argument("--out", help="output directory")

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="built-in benchmarks")
    p_bench.add_argument("target", choices=["cantilever", "disk"])
    common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_sweep = sub.add_parser("sweep", help="run a config at several step sizes")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--dt", required=True,
                         help="comma separated step sizes, e.g. 0.01,0.05")
    common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    args = parser.parse_args(argv)
    limiter = _apply_thread_env()
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BemShellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
