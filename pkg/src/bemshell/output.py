"""Observable CSV streams and VTK legacy-text writers.

File formats, documented bit-exactly:

CSV observables
    Header ``time,tip_x,tip_y,tip_z,newton_iters,bem_rcond,energy``;
    one row per recorded step (step numbers divisible by the cadence,
    the initial instant is not written, it is implied by the config).
    Total line count is therefore ``n_steps // cadence + 1``.

Surface snapshots
    VTK legacy ASCII ``POLYDATA``: the deformed surface sampled on a
    uniform parametric visualization grid, quad cells, point data
    ``displacement`` and ``velocity`` vectors plus the scalar
    ``traction_magnitude`` (zero for dry runs).

Velocity probes
    VTK legacy ASCII ``STRUCTURED_POINTS`` over a planar lattice; the
    file stores the lattice in its own plane coordinates (origin at the
    plane origin, spacing = axis length / (n - 1)) with the sampled
    velocity as a 3-vector field.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .stokes import offsurface_velocity

__all__ = [
    "ObservableStream",
    "VelocityProbeGrid",
    "read_observables",
    "read_vtk",
    "sample_velocity",
    "write_observables",
    "write_outputs",
    "write_probe_vtk",
    "write_surface_vtk",
]

CSV_HEADER = "time,tip_x,tip_y,tip_z,newton_iters,bem_rcond,energy"


def _csv_row(time, tip, iters, rcond, energy):
    return (
        f"{float(time)!r},{float(tip[0])!r},{float(tip[1])!r},{float(tip[2])!r},"
        f"{int(iters)},{float(rcond)!r},{float(energy)!r}"
    )


class ObservableStream:
    """Incremental CSV writer usable as a ``run`` on_step callback.

    Rows hit the disk as they are produced (flush per row), so a run
    that fails at step k leaves a valid file with k-ish rows behind.
    """

    def __init__(self, path, cadence=1):
        if cadence < 1:
            raise ConfigError("cadence must be >= 1")
        self.cadence = cadence
        self._fh = open(path, "w")
        self._fh.write(CSV_HEADER + "\n")
        self._fh.flush()

    def on_step(self, state, diag, obs):
        if state.step % self.cadence == 0:
            time, tip, iters, rcond, energy = obs
            self._fh.write(_csv_row(time, tip, iters, rcond, energy) + "\n")
            self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_observables(path, result, cadence=1):
    """Post-hoc CSV dump of a RunResult (same layout as the stream)."""
    if cadence < 1:
        raise ConfigError("cadence must be >= 1")
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for k in range(cadence, len(result.time), cadence):
            fh.write(
                _csv_row(
                    result.time[k], result.tip[k], result.newton_iters[k],
                    result.bem_rcond[k], result.energy[k],
                )
                + "\n"
            )


def read_observables(path):
    """Read the CSV back into a dict of arrays keyed by column name."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header: {header!r}")
        rows = [line.split(",") for line in fh.read().split() if line]
    cols = np.array(
        [[float(v) for v in row] for row in rows], dtype=float
    ).reshape(-1, 7)
    return {name: cols[:, i] for i, name in enumerate(CSV_HEADER.split(","))}


# -- VTK surface snapshots ----------------------------------------------


def _vtk_header(fh, title, dataset):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(title + "\n")
    fh.write("ASCII\n")
    fh.write(f"DATASET {dataset}\n")


def _vtk_vectors(fh, name, data):
    fh.write(f"VECTORS {name} float\n")
    for row in np.asarray(data, dtype=float).reshape(-1, 3):
        x, y, z = (float(c) for c in row)
        fh.write(f"{x!r} {y!r} {z!r}\n")


def write_surface_vtk(path, patch, u, v=None, tcoef=None, resolution=None):
    """Deformed-surface snapshot as legacy polydata.

    Parameters
    ----------
    u, v, tcoef : ndarray (3n,) or None
        Displacement, velocity and traction-density coefficients; the
        latter two default to zero fields.
    resolution : (int, int), optional
        Visualization grid points per direction; defaults to 4 points
        per nonempty knot span plus one.
    """
    if resolution is None:
        resolution = (
            4 * (patch.kv_u.span_breaks().size - 1) + 1,
            4 * (patch.kv_v.span_breaks().size - 1) + 1,
        )
    nu, nv = resolution
    su = np.linspace(patch.kv_u.start, patch.kv_u.end, nu)
    sv = np.linspace(patch.kv_v.start, patch.kv_v.end, nv)
    uu, vv = np.meshgrid(su, sv, indexing="ij")
    params = np.column_stack([uu.ravel(), vv.ravel()])

    cols, R, _, _ = patch.basis_batch(params, nderiv=0)
    u = np.zeros(3 * patch.n_points) if u is None else np.asarray(u, float)
    disp = np.einsum("pn,pnd->pd", R, u.reshape(-1, 3)[cols])
    points = patch.evaluate_batch(params, nderiv=0)["x"] + disp
    vel = (
        np.zeros_like(disp)
        if v is None
        else np.einsum("pn,pnd->pd", R, np.asarray(v, float).reshape(-1, 3)[cols])
    )
    if tcoef is None:
        tmag = np.zeros(len(params))
    else:
        trac = np.einsum(
            "pn,pnd->pd", R, np.asarray(tcoef, float).reshape(-1, 3)[cols]
        )
        tmag = np.linalg.norm(trac, axis=1)

    with open(path, "w") as fh:
        _vtk_header(fh, "bemshell surface snapshot", "POLYDATA")
        fh.write(f"POINTS {nu * nv} float\n")
        for p in points:
            x, y, z = (float(c) for c in p)
            fh.write(f"{x!r} {y!r} {z!r}\n")
        ncell = (nu - 1) * (nv - 1)
        fh.write(f"POLYGONS {ncell} {5 * ncell}\n")
        for i in range(nu - 1):
            for j in range(nv - 1):
                a = i * nv + j
                fh.write(f"4 {a} {a + nv} {a + nv + 1} {a + 1}\n")
        fh.write(f"POINT_DATA {nu * nv}\n")
        _vtk_vectors(fh, "displacement", disp)
        _vtk_vectors(fh, "velocity", vel)
        fh.write("SCALARS traction_magnitude float 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for t in tmag:
            fh.write(f"{float(t)!r}\n")


# -- velocity probe grids ------------------------------------------------


@dataclass(frozen=True)
class VelocityProbeGrid:
    """Planar probe lattice: origin plus two spanning axes."""

    origin: tuple
    axis1: tuple
    axis2: tuple
    n1: int = 16
    n2: int = 16

    def __post_init__(self):
        for name in ("origin", "axis1", "axis2"):
            vec = tuple(float(c) for c in getattr(self, name))
            if len(vec) != 3:
                raise ConfigError(f"{name} must have 3 components")
            object.__setattr__(self, name, vec)
        if self.n1 < 2 or self.n2 < 2:
            raise ConfigError("probe grid needs at least 2 points per axis")
        a1, a2 = np.array(self.axis1), np.array(self.axis2)
        n1, n2 = np.linalg.norm(a1), np.linalg.norm(a2)
        if n1 == 0.0 or n2 == 0.0:
            raise ConfigError("probe axes must be nonzero")
        if np.linalg.norm(np.cross(a1, a2)) < 1e-12 * n1 * n2:
            raise ConfigError("probe axes are parallel")

    def points(self):
        """Lattice points, shape (n1, n2, 3), axis1-major."""
        t1 = np.linspace(0.0, 1.0, self.n1)[:, None]
        t2 = np.linspace(0.0, 1.0, self.n2)[:, None]
        a1, a2 = np.array(self.axis1), np.array(self.axis2)
        return (
            np.array(self.origin)[None, None, :]
            + t1[:, None] * a1[None, None, :]
            + t2[None, :] * a2[None, None, :]
        )


def sample_velocity(grid, patch, fcoef, eta, config=None):
    """Single-layer velocity at every lattice point, shape (n1, n2, 3).

    Raises NearSurfaceError through from the underlying evaluation when
    a probe point violates the off-surface threshold, which enforces the
    grid's distance invariant at sample time.
    """
    pts = grid.points()
    out = np.empty_like(pts)
    for i in range(grid.n1):
        for j in range(grid.n2):
            out[i, j] = offsurface_velocity(pts[i, j], fcoef, patch, eta, config)
    return out


def write_probe_vtk(path, grid, velocities):
    """Probe lattice as structured points with a velocity vector field."""
    velocities = np.asarray(velocities, dtype=float)
    if velocities.shape != (grid.n1, grid.n2, 3):
        raise ConfigError("velocity array does not match the grid")
    s1 = float(np.linalg.norm(grid.axis1)) / (grid.n1 - 1)
    s2 = float(np.linalg.norm(grid.axis2)) / (grid.n2 - 1)
    with open(path, "w") as fh:
        _vtk_header(fh, "bemshell velocity probe (plane coordinates)",
                    "STRUCTURED_POINTS")
        fh.write(f"DIMENSIONS {grid.n1} {grid.n2} 1\n")
        fh.write("ORIGIN 0.0 0.0 0.0\n")
        fh.write(f"SPACING {s1!r} {s2!r} 1.0\n")
        fh.write(f"POINT_DATA {grid.n1 * grid.n2}\n")
        # VTK structured points run x fastest; our lattice is axis1-major
        _vtk_vectors(fh, "velocity", velocities.transpose(1, 0, 2))


# -- minimal reader (round-trip smoke checks) ----------------------------


def read_vtk(path):
    """Minimal legacy-VTK reader covering exactly what the writers emit.

    Returns a dict with ``dataset`` and, per dataset type, ``points`` /
    ``polygons`` or ``dimensions`` / ``origin`` / ``spacing``, plus a
    ``point_data`` dict of named arrays.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines[0].startswith("# vtk DataFile"):
        raise ConfigError("not a legacy VTK file")
    if lines[2].strip() != "ASCII":
        raise ConfigError("only ASCII VTK is supported")
    out = {"title": lines[1], "dataset": lines[3].split()[1], "point_data": {}}
    i = 4
    npoints = 0
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        key = tok[0]
        if key == "POINTS":
            npoints = int(tok[1])
            vals = " ".join(lines[i + 1 : i + 1 + npoints]).split()
            out["points"] = np.array(vals, dtype=float).reshape(npoints, 3)
            i += 1 + npoints
        elif key == "POLYGONS":
            ncell = int(tok[1])
            polys = [
                [int(v) for v in lines[i + 1 + k].split()[1:]]
                for k in range(ncell)
            ]
            out["polygons"] = np.array(polys, dtype=int)
            i += 1 + ncell
        elif key == "DIMENSIONS":
            out["dimensions"] = tuple(int(v) for v in tok[1:4])
            npoints = out["dimensions"][0] * out["dimensions"][1]
            npoints *= out["dimensions"][2]
            i += 1
        elif key in ("ORIGIN", "SPACING"):
            out[key.lower()] = tuple(float(v) for v in tok[1:4])
            i += 1
        elif key == "POINT_DATA":
            npoints = int(tok[1])
            i += 1
        elif key == "VECTORS":
            vals = " ".join(lines[i + 1 : i + 1 + npoints]).split()
            out["point_data"][tok[1]] = np.array(vals, dtype=float).reshape(
                npoints, 3
            )
            i += 1 + npoints
        elif key == "SCALARS":
            vals = " ".join(lines[i + 2 : i + 2 + npoints]).split()
            out["point_data"][tok[1]] = np.array(vals, dtype=float)
            i += 2 + npoints
        else:
            i += 1
    return out


# -- orchestration --------------------------------------------------------


def write_outputs(scenario, result, out_dir=None):
    """Write every configured artifact of a finished run.

    ``observables.csv`` always; one ``surface_NNNNNN.vtk`` per snapshot
    when snapshots were recorded (tractions included for wet modes).
    Returns the list of paths written.
    """
    cfg = scenario.config
    out_dir = out_dir or cfg.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    csv_path = os.path.join(out_dir, "observables.csv")
    write_observables(csv_path, result, cadence=cfg.output_cadence)
    paths.append(csv_path)

    for snap in result.snapshots:
        tcoef = None
        if scenario.coupled.assembler is not None:
            system = scenario.coupled.assembler.assemble(displacement=snap.u)
            tcoef = system.solve_tractions(snap.v)
        path = os.path.join(out_dir, f"surface_{snap.step:06d}.vtk")
        write_surface_vtk(path, scenario.shell.patch, snap.u, snap.v, tcoef)
        paths.append(path)
    return paths
