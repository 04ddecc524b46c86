"""Output writers: CSV observables, VTK surfaces, velocity probes."""

import numpy as np
import numpy.testing as npt
import pytest

from bemshell.config import LoadSpec, ScenarioConfig
from bemshell.errors import ConfigError, NearSurfaceError
from bemshell.nurbs import format_patch, make_flat_patch
from bemshell.output import (
    CSV_HEADER,
    ObservableStream,
    VelocityProbeGrid,
    read_observables,
    read_vtk,
    sample_velocity,
    write_observables,
    write_outputs,
    write_probe_vtk,
    write_surface_vtk,
)
from bemshell.scenarios import build_disk_drag, build_scenario
from bemshell.stokes import offsurface_velocity


def tiny_config(**kw):
    patch = make_flat_patch(1.0, 0.1, 2, 2, 4, 1)
    base = dict(
        patch_text=format_patch(patch),
        E=70e9, nu=0.3, rho=2700.0, h=0.002,
        bc_umin="clamped", dt=0.01, t_end=0.1,
        loads=(LoadSpec(kind="edge", edge="umax", vector=(0, 0, 50.0)),),
    )
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def dry_run():
    scenario = build_scenario(tiny_config(snapshot_every=5))
    return scenario, scenario.simulate()


@pytest.fixture(scope="module")
def disk_fields():
    drag = build_disk_drag()
    system = drag.system(2)
    v = np.tile([0.0, 0.0, drag.speed], system.Mc.shape[0] // 3)
    return drag, drag.patch(2), system.solve_tractions(v)


class TestObservablesCsv:
    def test_line_count_is_steps_over_cadence_plus_header(self, dry_run, tmp_path):
        _, result = dry_run
        for cadence in (1, 2, 5):
            path = tmp_path / f"obs_{cadence}.csv"
            write_observables(path, result, cadence=cadence)
            lines = path.read_text().splitlines()
            assert len(lines) == 10 // cadence + 1
            assert lines[0] == CSV_HEADER

    def test_round_trip_exact(self, dry_run, tmp_path):
        _, result = dry_run
        path = tmp_path / "obs.csv"
        write_observables(path, result)
        data = read_observables(path)
        npt.assert_array_equal(data["time"], result.time[1:])
        npt.assert_array_equal(data["tip_z"], result.tip[1:, 2])
        npt.assert_array_equal(data["energy"], result.energy[1:])
        npt.assert_array_equal(data["newton_iters"], result.newton_iters[1:])
        assert np.all(np.isnan(data["bem_rcond"]))  # dry run never assembles

    def test_stream_matches_post_hoc(self, tmp_path):
        scenario = build_scenario(tiny_config())
        streamed = tmp_path / "stream.csv"
        with ObservableStream(streamed, cadence=2) as stream:
            result = scenario.simulate(on_step=stream.on_step)
        post = tmp_path / "post.csv"
        write_observables(post, result, cadence=2)
        assert streamed.read_text() == post.read_text()

    def test_header_checked_on_read(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,stuff\n0.0,1.0\n")
        with pytest.raises(ConfigError):
            read_observables(path)

    def test_cadence_validated(self, tmp_path):
        with pytest.raises(ConfigError):
            ObservableStream(tmp_path / "x.csv", cadence=0)


class TestSurfaceVtk:
    def test_round_trip(self, dry_run, tmp_path):
        scenario, result = dry_run
        snap = result.snapshots[-1]
        path = tmp_path / "surf.vtk"
        write_surface_vtk(path, scenario.shell.patch, snap.u, snap.v,
                          resolution=(9, 5))
        data = read_vtk(path)
        assert data["dataset"] == "POLYDATA"
        assert data["points"].shape == (45, 3)
        assert data["polygons"].shape == (32, 4)
        assert data["polygons"].min() >= 0
        assert data["polygons"].max() < 45
        assert sorted(data["point_data"]) == [
            "displacement", "traction_magnitude", "velocity",
        ]

    def test_points_are_reference_plus_displacement(self, dry_run, tmp_path):
        scenario, result = dry_run
        snap = result.snapshots[-1]
        patch = scenario.shell.patch
        path = tmp_path / "surf.vtk"
        write_surface_vtk(path, patch, snap.u, resolution=(9, 5))
        data = read_vtk(path)
        su = np.linspace(0.0, 1.0, 9)
        sv = np.linspace(0.0, 1.0, 5)
        uu, vv = np.meshgrid(su, sv, indexing="ij")
        params = np.column_stack([uu.ravel(), vv.ravel()])
        ref = patch.evaluate_batch(params, nderiv=0)["x"]
        npt.assert_allclose(
            data["points"] - data["point_data"]["displacement"], ref,
            atol=1e-12,
        )
        # sampled displacement equals the basis-interpolated field
        npt.assert_allclose(
            data["point_data"]["displacement"][38],
            scenario.shell.point_displacement(params[38], snap.u),
            rtol=1e-12, atol=1e-15,
        )

    def test_zero_fields_by_default(self, dry_run, tmp_path):
        scenario, _ = dry_run
        path = tmp_path / "ref.vtk"
        write_surface_vtk(path, scenario.shell.patch, None, resolution=(5, 3))
        data = read_vtk(path)
        npt.assert_array_equal(data["point_data"]["displacement"], 0.0)
        npt.assert_array_equal(data["point_data"]["velocity"], 0.0)
        npt.assert_array_equal(data["point_data"]["traction_magnitude"], 0.0)


class TestProbeGrid:
    def test_points_layout(self):
        grid = VelocityProbeGrid(origin=(1.0, 0.0, 0.0), axis1=(2.0, 0.0, 0.0),
                                 axis2=(0.0, 3.0, 0.0), n1=3, n2=4)
        pts = grid.points()
        assert pts.shape == (3, 4, 3)
        npt.assert_allclose(pts[0, 0], [1.0, 0.0, 0.0])
        npt.assert_allclose(pts[2, 0], [3.0, 0.0, 0.0])
        npt.assert_allclose(pts[0, 3], [1.0, 3.0, 0.0])

    def test_validation(self):
        with pytest.raises(ConfigError):
            VelocityProbeGrid((0, 0, 0), (1, 0, 0), (2, 0, 0))  # parallel
        with pytest.raises(ConfigError):
            VelocityProbeGrid((0, 0, 0), (0, 0, 0), (0, 1, 0))  # zero axis
        with pytest.raises(ConfigError):
            VelocityProbeGrid((0, 0, 0), (1, 0, 0), (0, 1, 0), n1=1)

    def test_vtk_round_trip(self, tmp_path):
        grid = VelocityProbeGrid(origin=(0, 0, 2.0), axis1=(4.0, 0, 0),
                                 axis2=(0, 0, 3.0), n1=5, n2=4)
        vel = np.arange(5 * 4 * 3, dtype=float).reshape(5, 4, 3)
        path = tmp_path / "probe.vtk"
        write_probe_vtk(path, grid, vel)
        data = read_vtk(path)
        assert data["dataset"] == "STRUCTURED_POINTS"
        assert data["dimensions"] == (5, 4, 1)
        npt.assert_allclose(data["spacing"], (1.0, 1.0, 1.0))
        npt.assert_array_equal(
            data["point_data"]["velocity"].reshape(4, 5, 3).transpose(1, 0, 2),
            vel,
        )

    def test_shape_mismatch_rejected(self, tmp_path):
        grid = VelocityProbeGrid((0, 0, 2.0), (1, 0, 0), (0, 1, 0), n1=3, n2=3)
        with pytest.raises(ConfigError):
            write_probe_vtk(tmp_path / "x.vtk", grid, np.zeros((2, 3, 3)))


class TestOffSurfaceSampling:
    def test_axis_decay_monotone_beyond_two_radii(self, disk_fields):
        # far field of the traction distribution decays like a point
        # force, so the axis speed must fall monotonically with height
        drag, patch, fcoef = disk_fields
        zs = np.linspace(2.0, 8.0, 13)
        mags = [
            np.linalg.norm(
                offsurface_velocity(np.array([0.0, 0.0, z]), fcoef, patch,
                                    drag.eta)
            )
            for z in zs
        ]
        assert np.all(np.diff(mags) < 0.0)

    def test_near_surface_invariant_enforced(self, disk_fields):
        drag, patch, fcoef = disk_fields
        grid = VelocityProbeGrid(origin=(0.0, 0.0, 0.0), axis1=(0.1, 0, 0),
                                 axis2=(0, 0.1, 0), n1=2, n2=2)
        with pytest.raises(NearSurfaceError):
            sample_velocity(grid, patch, fcoef, drag.eta)

    def test_grid_sampling_matches_pointwise(self, disk_fields):
        drag, patch, fcoef = disk_fields
        grid = VelocityProbeGrid(origin=(0.0, 0.0, 2.0), axis1=(1.0, 0, 0),
                                 axis2=(0, 1.0, 0), n1=2, n2=2)
        vel = sample_velocity(grid, patch, fcoef, drag.eta)
        want = offsurface_velocity(np.array([1.0, 1.0, 2.0]), fcoef, patch,
                                   drag.eta)
        npt.assert_array_equal(vel[1, 1], want)


class TestWriteOutputs:
    def test_dry_artifacts(self, dry_run, tmp_path):
        scenario, result = dry_run
        paths = write_outputs(scenario, result, out_dir=str(tmp_path))
        names = sorted(p.split("/")[-1] for p in paths)
        assert names[0] == "observables.csv"
        assert names[1:] == ["surface_000000.vtk", "surface_000005.vtk",
                             "surface_000010.vtk"]
        for p in paths[1:]:
            assert read_vtk(p)["dataset"] == "POLYDATA"

    def test_wet_snapshots_carry_tractions(self, tmp_path):
        cfg = tiny_config(mode="semi_implicit", eta=5.0, t_end=0.02,
                          snapshot_every=1)
        scenario = build_scenario(cfg)
        result = scenario.simulate()
        paths = write_outputs(scenario, result, out_dir=str(tmp_path))
        data = read_vtk(paths[-1])
        # the strip is moving through fluid, so tractions cannot vanish
        assert data["point_data"]["traction_magnitude"].max() > 0.0
