"""Built-in scenarios and the generic config-to-simulation assembly.

A :class:`~bemshell.config.ScenarioConfig` is turned into a ready-to-run
:class:`Scenario` here: patch construction, shell and coupled-system
assembly, load vectors, the optional static pre-solve and a consistent
initial state.  The built-in generators return fully assembled scenarios
whose configs are self-contained (the patch is embedded as text), so
every one of them can be written to disk and reproduced from the file.

The spoon and falling-cap scenarios are demos: their geometries are
plausible reconstructions, not published control nets, and only
qualitative behavior (run completion, sign of motion, reorientation) is
meaningful for them.
"""

import dataclasses
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import LoadSpec, ScenarioConfig
from .dynamics import (
    CoupledSystem,
    CouplingMode,
    NewtonConfig,
    genalpha_params,
    initial_state,
    run,
)
from .errors import ConfigError
from .nurbs import (
    KnotVector,
    NurbsPatch,
    format_patch,
    make_disk_patch,
    make_flat_patch,
    parse_patch,
    read_patch,
)
from .shell import BodyLoad, BoundarySpec, EdgeLoad, ShellMaterial, ShellSystem, \
    SurfaceLoad, external_load, solve_static
from .stokes import BemQuadConfig, DampingOperator, assemble_bem

__all__ = [
    "DiskDragScenario",
    "Scenario",
    "build_cantilever",
    "build_disk_drag",
    "build_falling_cap_demo",
    "build_scenario",
    "build_spoon_demo",
    "cantilever_config",
    "falling_cap_config",
    "normal_alignment",
    "spoon_config",
]


def _assemble_load(shell, material, spec):
    """Full-length force vector of one load table entry."""
    if spec.kind == "body":
        load = BodyLoad(spec.vector)
    elif spec.kind == "surface":
        load = SurfaceLoad(spec.vector)
    elif spec.kind == "edge":
        load = EdgeLoad(spec.edge, spec.vector)
    else:  # gravity: vector is an acceleration, scale by density
        load = BodyLoad(tuple(material.rho * g for g in spec.vector))
    return external_load(shell, [load])


@dataclass
class Scenario:
    """A validated, assembled simulation ready to march.

    ``loads`` pairs each schedule entry with its assembled force vector;
    the instantaneous right-hand side is the sum over active entries.
    """

    config: ScenarioConfig
    shell: ShellSystem
    coupled: CoupledSystem
    mode: CouplingMode
    params: object
    newton: NewtonConfig
    loads: tuple
    state0: object

    def load_vector(self, t):
        F = np.zeros(self.shell.n_dofs)
        for spec, vec in self.loads:
            if spec.active(t):
                F += vec
        return F

    def _breakpoints(self):
        """Load-schedule switch instants inside (0, t_end], t_end included."""
        cfg = self.config
        times = {cfg.t_end}
        for spec, _ in self.loads:
            for t in (spec.t_on, spec.t_off):
                if 0.0 < t < cfg.t_end:
                    times.add(t)
        out = sorted(times)
        for t in out:
            n = t / cfg.dt
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(
                    f"load schedule time {t} does not land on a time step"
                )
        return out

    def simulate(self, on_step=None, snapshot_every=None):
        """March the full run, honoring the load schedule.

        The march is split at load switch instants and each segment uses
        the (constant) load vector of its interior.  Returns one merged
        RunResult whose arrays cover the whole run, initial state first.
        """
        cfg = self.config
        if snapshot_every is None:
            snapshot_every = cfg.snapshot_every
        state = self.state0
        pieces = []
        done = 0
        for t_stop in self._breakpoints():
            n_seg = int(round(t_stop / cfg.dt)) - done
            if n_seg <= 0:
                continue
            F = self.load_vector(state.time + 0.5 * cfg.dt)
            pieces.append(
                run(
                    self.coupled, F, self.params, self.mode, n_seg,
                    newton=self.newton, state0=state, probe=cfg.probe,
                    snapshot_every=snapshot_every, on_step=on_step,
                )
            )
            state = pieces[-1].state
            done += n_seg
        return _merge_results(pieces)


def _merge_results(pieces):
    if len(pieces) == 1:
        return pieces[0]
    first = pieces[0]
    # later segments re-record their initial instant; drop the duplicates
    merged = {
        name: np.concatenate(
            [getattr(first, name)] + [getattr(p, name)[1:] for p in pieces[1:]]
        )
        for name in ("time", "tip", "newton_iters", "bem_rcond", "energy")
    }
    snapshots = list(first.snapshots)
    for p in pieces[1:]:
        snapshots.extend(p.snapshots[1:])
    return dataclasses.replace(
        first, state=pieces[-1].state, snapshots=snapshots, **merged
    )


def _load_patch(config, base_dir="."):
    if config.patch_text:
        patch = parse_patch(
            config.patch_text, allow_degenerate=config.patch_degenerate
        )
    else:
        path = config.patch_file
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        patch = read_patch(path, allow_degenerate=config.patch_degenerate)
    if config.refine:
        patch = patch.refine_uniform(config.refine)
    return patch


def _check_patch_regularity(patch):
    """Frames must exist on an interior parametric grid before any assembly."""
    su = np.linspace(patch.kv_u.start, patch.kv_u.end, 7)[1:-1]
    sv = np.linspace(patch.kv_v.start, patch.kv_v.end, 7)[1:-1]
    for u in su:
        for v in sv:
            patch.frame((u, v))


def build_scenario(config, base_dir="."):
    """Assemble a Scenario from its config.

    Validation happens before any expensive assembly: the patch must be
    regular on an interior grid, a static pre-solve needs at least one
    constrained DOF, and every schedule switch must land on a step.

    Parameters
    ----------
    base_dir : str
        Directory against which a relative ``patch_file`` is resolved
        (callers pass the config file's directory).
    """
    patch = _load_patch(config, base_dir)
    _check_patch_regularity(patch)
    config.n_steps  # raises when t_end is not a whole number of steps

    material = ShellMaterial(E=config.E, nu=config.nu, rho=config.rho, h=config.h)
    bcs = {
        edge: getattr(config, "bc_" + edge)
        for edge in ("umin", "umax", "vmin", "vmax")
        if getattr(config, "bc_" + edge) != "free"
    }
    boundary = BoundarySpec(**bcs) if bcs else None
    shell = ShellSystem(patch, material, boundary)

    eta = config.eta if config.eta > 0.0 else None
    bem_config = BemQuadConfig(
        regular_order=config.bem_regular_order,
        singular_order=config.bem_singular_order,
        near_order=config.bem_near_order,
        near_factor=config.bem_near_factor,
    )
    coupled = CoupledSystem(shell, eta=eta, bem_config=bem_config)
    mode = CouplingMode(config.mode)
    params = genalpha_params(config.rho_inf, config.dt)
    newton = NewtonConfig(
        rel_tol=config.newton_rel_tol,
        abs_tol=config.newton_abs_tol,
        max_iters=config.newton_max_iters,
    )
    loads = tuple(
        (spec, _assemble_load(shell, material, spec)) for spec in config.loads
    )
    scenario = Scenario(
        config=config, shell=shell, coupled=coupled, mode=mode,
        params=params, newton=newton, loads=loads, state0=None,
    )
    scenario._breakpoints()

    u0 = None
    if config.static_presolve:
        if len(shell.free_dofs) == shell.n_dofs:
            raise ConfigError(
                "static pre-solve needs at least one constrained edge"
            )
        # the pre-solve carries every load active before t = 0
        F_pre = scenario.load_vector(-1.0)
        u0 = solve_static(shell, F_pre, n_steps=config.load_steps)
    scenario.state0 = initial_state(
        coupled, scenario.load_vector(0.0), mode, u0=u0
    )
    return scenario


# -- cantilever release (plate strip, Table 1 setup) --------------------


def cantilever_config(mode="dry", eta=0.0, dt=0.01, t_end=10.0,
                      degree=(3, 3), nel=(16, 2), tip_load=225.0,
                      **overrides):
    """Config for the clamped plate strip released from a tip line load.

    1 m x 0.1 m x 1 mm steel-like strip (E = 2.101e12 Pa, nu = 0.3,
    rho = 7850 kg/m^3), clamped at umin, loaded by ``tip_load`` N/m along
    the free end.  The load acts only on the static pre-solve; the
    transient starts from the deflected shape with the load removed.
    """
    patch = make_flat_patch(1.0, 0.1, degree[0], degree[1], nel[0], nel[1])
    base = dict(
        name="cantilever",
        patch_text=format_patch(patch),
        E=2.101e12, nu=0.3, rho=7850.0, h=1.0e-3,
        eta=eta,
        bc_umin="clamped",
        loads=(LoadSpec(kind="edge", edge="umax",
                        vector=(0.0, 0.0, tip_load), t_off=0.0),),
        mode=mode, dt=dt, t_end=t_end,
        static_presolve=True,
        probe=(1.0, 0.5),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def build_cantilever(**kwargs):
    return build_scenario(cantilever_config(**kwargs))


# -- disk drag oracle (BEM only, no structure) ---------------------------


@dataclass(frozen=True)
class DiskDragScenario:
    """Rigid broadside translation of a flat disk; reports total drag.

    The analytic drag of a rigid disk moving normal to its plane in
    Stokes flow is 16 eta R U, which makes this the one scenario with a
    closed-form answer for the boundary-integral path alone.
    """

    radius: float
    speed: float
    eta: float
    bem_config: BemQuadConfig = None

    def __post_init__(self):
        for name in ("radius", "speed", "eta"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")

    @property
    def reference(self):
        return 16.0 * self.eta * self.radius * self.speed

    def patch(self, level):
        return make_disk_patch(self.radius).refine_uniform(level)

    def system(self, level):
        return assemble_bem(self.patch(level), self.eta, self.bem_config)

    def drag(self, level):
        """Net drag force opposing broadside motion at one refinement level."""
        system = self.system(level)
        v = np.tile([0.0, 0.0, self.speed], system.Mc.shape[0] // 3)
        return -DampingOperator(system).force_resultant(v)[2]

    def sweep(self, levels):
        return np.array([self.drag(level) for level in levels])


def build_disk_drag(radius=1.0, speed=1.0, eta=1.0, bem_config=None):
    return DiskDragScenario(
        radius=radius, speed=speed, eta=eta, bem_config=bem_config
    )


# -- honey-spoon demo ----------------------------------------------------


def _quarter_arc_strip(arc_length, width):
    """Exact quarter-cylinder strip: u follows the arc, v the width.

    The arc starts at the origin hanging in -z and ends swung out to +x;
    the strip is extruded along +y.
    """
    R = 2.0 * arc_length / math.pi
    kv = KnotVector([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2)
    arc = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -R], [R, 0.0, -R]])
    w_arc = np.array([1.0, math.sqrt(2.0) / 2.0, 1.0])
    y = np.array([0.0, 0.5 * width, width])
    net = arc[:, None, :] + np.array([[0.0, 1.0, 0.0]]) * y[None, :, None]
    weights = np.repeat(w_arc[:, None], 3, axis=1)
    return NurbsPatch(kv, kv, net, weights)


def spoon_config(mode="semi_implicit", eta=5.0, dt=0.1, t_end=1.1,
                 refine=2, load=7000.0, **overrides):
    """Config for the curved strip pushed through a viscous bath.

    A 4.5 cm quarter-arc strip, 1 cm wide and 0.2 mm thick, clamped
    along its top edge, loaded by a uniform dead surface pressure of
    ``load`` N/m^2 switched on at t = 0.  Demo only: the geometry is a
    plausible reconstruction, not a published control net.
    """
    patch = _quarter_arc_strip(0.045, 0.01)
    base = dict(
        name="spoon",
        patch_text=format_patch(patch),
        refine=refine,
        E=2.8e15, nu=0.39, rho=1.13, h=2.0e-4,
        eta=eta,
        bc_umin="clamped",
        loads=(LoadSpec(kind="surface", vector=(load, 0.0, 0.0), t_on=0.0),),
        mode=mode, dt=dt, t_end=t_end,
        probe=(1.0, 0.5),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def build_spoon_demo(**kwargs):
    return build_scenario(spoon_config(**kwargs))


# -- falling cap demo ----------------------------------------------------


def _cap_patch(radius, apex, tilt):
    """Shallow dome over the rational disk patch, tilted about the y axis.

    Lifting only the interior control point keeps the rim circular and
    planar while bowing the middle upward; ``apex`` is the control-point
    lift, the surface apex sits lower by the rational center weight.
    """
    disk = make_disk_patch(radius)
    net = disk.control_net.copy()
    net[1, 1, 2] += apex
    c, s = math.cos(tilt), math.sin(tilt)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    net = net @ rot.T
    return NurbsPatch(
        disk.kv_u, disk.kv_v, net, disk.weights, allow_degenerate=True
    )


def falling_cap_config(mode="semi_implicit", eta=9.0e-3, dt=1.0, t_end=551.0,
                       refine=2, gravity=True, tilt=0.6, **overrides):
    """Config for the free shallow cap sinking in water under gravity.

    10 cm rational disk patch bowed into a dome and tilted by ``tilt``
    radians, completely unconstrained (the mass and damping terms keep
    the step Jacobian regular).  Demo only: geometry reconstructed.
    """
    patch = _cap_patch(0.05, 0.03, tilt)
    loads = (LoadSpec(kind="gravity", vector=(0.0, 0.0, -9.81)),) if gravity else ()
    base = dict(
        name="falling_cap",
        patch_text=format_patch(patch),
        patch_degenerate=True,
        refine=refine,
        E=2.8e11, nu=0.39, rho=1.13, h=1.0e-3,
        eta=eta,
        loads=loads,
        mode=mode, dt=dt, t_end=t_end,
        probe=(0.5, 0.5),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def build_falling_cap_demo(**kwargs):
    return build_scenario(falling_cap_config(**kwargs))


def normal_alignment(patch, u=None, grid=5):
    """|cos| between the mean surface normal and the vertical.

    Averaged over an interior parametric grid of the displaced patch;
    1 means the cap axis is vertical (either way up), which is the
    reorientation metric for the falling-cap demo.
    """
    current = patch if u is None else patch.displace(np.asarray(u, float))
    su = np.linspace(current.kv_u.start, current.kv_u.end, grid + 2)[1:-1]
    sv = np.linspace(current.kv_v.start, current.kv_v.end, grid + 2)[1:-1]
    normals = []
    for uu in su:
        for vv in sv:
            normals.append(current.frame((uu, vv)).g3)
    mean = np.mean(normals, axis=0)
    return abs(mean[2]) / np.linalg.norm(mean)
