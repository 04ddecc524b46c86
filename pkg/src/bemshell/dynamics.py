"""Generalized-alpha time integration of the coupled shell-fluid system.

The semi-discrete balance is

    M u'' + C(u) u' + P(u) - F = 0

with M the shell mass matrix, P the internal force, F the dead external
load and C(u) the fluid damping operator assembled on the current
(displaced) surface.  C is passive here: v . C v >= 0 for rigid motions,
so the damping term carries a plus sign in the residual.

Four coupling strategies are provided.  FULLY_IMPLICIT reassembles C on
the alpha-interpolated geometry inside every Newton iterate,
SEMI_IMPLICIT freezes C at the last converged configuration for the
whole step, SEGREGATED treats the whole fluid force C(u_{k-1}) v_{k-1}
as a constant external load, and DRY drops the fluid entirely.  All
modes share one inexact Jacobian: the derivative of C with respect to
the configuration is neglected, which degrades but does not break
Newton convergence at practical time steps.
"""

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, DomainError, StepFailureError
from .shell import (
    assemble_forces,
    internal_forces,
    mass_matrix,
    residual_noise_gauge,
    strain_energy,
)
from .stokes import BemAssembler, DampingOperator

__all__ = [
    "CoupledSystem",
    "CouplingMode",
    "GenAlphaParams",
    "NewtonConfig",
    "RunResult",
    "SimState",
    "StepDiagnostics",
    "alpha_interpolate",
    "genalpha_params",
    "initial_state",
    "measure_frequency",
    "newmark_update",
    "oscillates",
    "run",
    "step",
]


class CouplingMode(Enum):
    """How the fluid damping enters one time step."""

    FULLY_IMPLICIT = "fully_implicit"
    SEMI_IMPLICIT = "semi_implicit"
    SEGREGATED = "segregated"
    DRY = "dry"


@dataclass(frozen=True)
class GenAlphaParams:
    """Generalized-alpha parameter set for one fixed time step size.

    Build through :func:`genalpha_params`; the derived coefficients obey

        alpha_m = (2 - rho_inf) / (1 + rho_inf)
        alpha_f = 1 / (1 + rho_inf)
        gamma   = 1/2 - alpha_f + alpha_m
        beta    = (1 - alpha_f + alpha_m)^2 / 4

    where ``rho_inf`` is the spectral radius at the high-frequency limit
    (1 keeps trapezoidal-like conservation, 0 damps hardest).
    """

    rho_inf: float
    dt: float
    alpha_m: float
    alpha_f: float
    gamma: float
    beta: float


def genalpha_params(rho_inf, dt):
    """Derive the generalized-alpha coefficients from ``rho_inf`` and ``dt``.

    Parameters
    ----------
    rho_inf : float
        High-frequency spectral radius, in [0, 1].
    dt : float
        Time step size (s), positive.

    Returns
    -------
    GenAlphaParams
    """
    rho_inf = float(rho_inf)
    dt = float(dt)
    if not 0.0 <= rho_inf <= 1.0:
        raise DomainError(f"rho_inf must lie in [0, 1], got {rho_inf}")
    if not dt > 0.0:
        raise DomainError(f"time step must be positive, got {dt}")
    alpha_m = (2.0 - rho_inf) / (1.0 + rho_inf)
    alpha_f = 1.0 / (1.0 + rho_inf)
    gamma = 0.5 - alpha_f + alpha_m
    beta = 0.25 * (1.0 - alpha_f + alpha_m) ** 2
    return GenAlphaParams(rho_inf, dt, alpha_m, alpha_f, gamma, beta)


@dataclass
class SimState:
    """Displacement, velocity and acceleration coefficients at one step.

    All three vectors have length 3n and are identically zero on the
    constrained degrees of freedom.
    """

    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    step: int = 0
    time: float = 0.0


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rule for the per-step Newton iteration.

    Converged when |r| <= max(abs_tol, rel_tol * |r_0|) with r_0 the
    residual at the predictor.
    """

    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    max_iters: int = 30

    def __post_init__(self):
        if self.rel_tol <= 0.0 or self.abs_tol <= 0.0:
            raise ConfigError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")


@dataclass
class StepDiagnostics:
    """Per-step solver report."""

    newton_iters: int
    residual_norm: float
    bem_rcond: float


def newmark_update(state_prev, u_k, params):
    """Velocity and acceleration at step k from the new displacement.

    Parameters
    ----------
    state_prev : SimState
        Converged state at step k-1.
    u_k : ndarray
        Displacement coefficients at step k.

    Returns
    -------
    (v_k, a_k) : pair of ndarray
    """
    dt = params.dt
    beta = params.beta
    gamma = params.gamma
    du = u_k - state_prev.u
    v_k = (
        gamma / (beta * dt) * du
        + (1.0 - gamma / beta) * state_prev.v
        + (1.0 - 0.5 * gamma / beta) * dt * state_prev.a
    )
    a_k = (
        du / (beta * dt * dt)
        - state_prev.v / (beta * dt)
        - (0.5 / beta - 1.0) * state_prev.a
    )
    return v_k, a_k


def alpha_interpolate(state_prev, state_k, params):
    """States at the intermediate time instants of the alpha scheme.

    Displacement and velocity are taken at t_{k-1+alpha_f}, acceleration
    at t_{k-1+alpha_m}; each is the affine combination
    x_{k-1} + alpha (x_k - x_{k-1}).
    """
    af = params.alpha_f
    am = params.alpha_m
    u_a = (1.0 - af) * state_prev.u + af * state_k.u
    v_a = (1.0 - af) * state_prev.v + af * state_k.v
    a_a = (1.0 - am) * state_prev.a + am * state_k.a
    return u_a, v_a, a_a


class CoupledSystem:
    """Shell structure plus (optionally) its Stokes fluid damping.

    Owns the mass matrix and a reusable BEM assembler; the assembler's
    parametric tables are geometry independent, so a single instance
    serves every deformed configuration encountered during a run.

    Parameters
    ----------
    shell : ShellSystem
    eta : float or None
        Fluid viscosity (Pa s).  None builds a dry system; requesting a
        coupled mode on it raises ConfigError.
    bem_config : BemQuadConfig, optional
    """

    def __init__(self, shell, eta=None, bem_config=None):
        self.shell = shell
        self.eta = eta
        self.M = mass_matrix(shell)
        self._M_dense = self.M.toarray()
        self._M_red = self._M_dense[np.ix_(shell.free_dofs, shell.free_dofs)]
        # Residuals cannot resolve below the assembly roundoff floor
        # (strain noise through the membrane stiffness E h); Newton
        # accepts there no matter how tight the configured tolerances.
        self.noise_floor = 10.0 * residual_noise_gauge(shell)
        if eta is None:
            self.assembler = None
        else:
            self.assembler = BemAssembler(shell.patch, eta, bem_config)

    def damping(self, u):
        """Dense damping matrix C(u) on the displaced surface and the
        reciprocal condition estimate of the underlying BEM matrix."""
        if self.assembler is None:
            raise ConfigError("coupled mode requested on a dry system (eta is None)")
        system = self.assembler.assemble(displacement=u)
        return DampingOperator(system).matrix(), system.rcond

    def energy(self, state):
        """Total mechanical energy: kinetic plus membrane/bending strain."""
        kinetic = 0.5 * state.v @ (self.M @ state.v)
        return kinetic + strain_energy(self.shell, state.u)


def initial_state(coupled, F, mode, u0=None, v0=None):
    """Consistent state at t = 0.

    The initial acceleration solves the balance at the initial instant,
    M a0 = F - C(u0) v0 - P(u0), instead of starting from a0 = 0; an
    inconsistent start rings the first few periods, which is exactly the
    window used for frequency measurements.
    """
    shell = coupled.shell
    n = shell.n_dofs
    u0 = shell._zero_constrained(np.zeros(n) if u0 is None else np.asarray(u0, float))
    v0 = shell._zero_constrained(np.zeros(n) if v0 is None else np.asarray(v0, float))
    rhs = F - internal_forces(shell, u0)
    if mode is not CouplingMode.DRY and np.any(v0):
        C, _ = coupled.damping(u0)
        rhs = rhs - C @ v0
    free = shell.free_dofs
    a0 = np.zeros(n)
    a0[free] = sla.solve(coupled._M_red, rhs[free], assume_a="pos")
    return SimState(u=u0, v=v0, a=a0, step=0, time=0.0)


def step(coupled, state, F, params, mode, newton=None):
    """Advance the coupled system by one time step.

    Newton iteration on the alpha-level residual

        r(u_k) = M a_alpha + C v_alpha + P(u_alpha) - F

    with the inexact Jacobian

        J = alpha_m/(beta dt^2) M + alpha_f gamma/(beta dt) C
            + alpha_f K(u_alpha)

    where the configuration dependence of C is neglected.  The damping
    handling per mode: FULLY_IMPLICIT reassembles C(u_alpha) every
    iterate; SEMI_IMPLICIT uses C(u_{k-1}) throughout the step;
    SEGREGATED drops C from both residual and Jacobian and adds the
    frozen force C(u_{k-1}) v_{k-1} instead; DRY has no fluid term.

    Returns
    -------
    (SimState, StepDiagnostics)

    Raises
    ------
    StepFailureError
        If the residual fails the Newton stopping rule after max_iters
        corrections.
    """
    if newton is None:
        newton = NewtonConfig()
    shell = coupled.shell
    free = shell.free_dofs
    dt = params.dt
    am, af = params.alpha_m, params.alpha_f
    beta, gamma = params.beta, params.gamma

    C = None
    rcond = np.nan
    F_frozen = None
    if mode in (CouplingMode.SEMI_IMPLICIT, CouplingMode.SEGREGATED):
        C, rcond = coupled.damping(state.u)
    if mode is CouplingMode.SEGREGATED:
        F_frozen = C @ state.v
        C = None  # not part of residual or Jacobian in this mode

    def evaluate(u_trial):
        """Residual data at the trial end-of-step displacement."""
        v_t, a_t = newmark_update(state, u_trial, params)
        u_a = (1.0 - af) * state.u + af * u_trial
        v_a = (1.0 - af) * state.v + af * v_t
        a_a = (1.0 - am) * state.a + am * a_t
        if mode is CouplingMode.FULLY_IMPLICIT:
            C_a, rc = coupled.damping(u_a)
        else:
            C_a, rc = C, rcond
        P, K = assemble_forces(shell, u_a)
        r = coupled.M @ a_a + P - F
        if C_a is not None:
            r += C_a @ v_a
        if F_frozen is not None:
            r += F_frozen
        return v_t, a_t, C_a, rc, K, np.linalg.norm(r[free]), r

    # predictor u_k = u_{k-1}: extrapolating with v and a looks better
    # on paper but both carry unresolved high-frequency content that
    # throws the guess far outside the Newton basin
    u_k = state.u.copy()
    v_k, a_k, C_it, rcond, K, rn, r = evaluate(u_k)
    stop = max(newton.abs_tol, newton.rel_tol * rn, coupled.noise_floor)
    for it in range(newton.max_iters):
        if rn <= stop:
            break
        J = af * K
        J += (am / (beta * dt * dt)) * coupled._M_dense
        if C_it is not None:
            J += (af * gamma / (beta * dt)) * C_it
        du = sla.solve(J[np.ix_(free, free)], -r[free])
        # full steps only: the residual routinely grows by orders of
        # magnitude on an overshoot and still converges a few iterates
        # later, so a monotone line search would stall in the shallow
        # valleys it creates; damping kicks in only on a non-finite
        # residual
        scale = 1.0
        while True:
            u_try = u_k.copy()
            u_try[free] += scale * du
            out = evaluate(u_try)
            if np.isfinite(out[5]) or scale <= 2.0**-20:
                break
            scale *= 0.5
        u_k, (v_k, a_k, C_it, rcond, K, rn, r) = u_try, out
        # large rigid displacement magnifies the strain cancellation
        # noise, so the assembled residual can jitter on a roundoff
        # floor far above the configured tolerances while the iterate
        # itself is machine-converged; accept on increment stagnation,
        # as the static solver does (|du| >= |r| / |J| rules out hiding
        # divergence behind this exit)
        if np.linalg.norm(scale * du) <= 1e-10 * np.linalg.norm(u_k[free]):
            it += 1
            break
    else:
        it = newton.max_iters
        if rn > stop:
            raise StepFailureError(
                f"Newton failed at step {state.step + 1} "
                f"(t = {state.time + dt:.6g} s): |r| = {rn:.3e}",
                residual_norm=rn,
                step=state.step + 1,
                time=state.time + dt,
            )

    new_state = SimState(
        u=u_k, v=v_k, a=a_k, step=state.step + 1, time=state.time + dt
    )
    return new_state, StepDiagnostics(
        newton_iters=it, residual_norm=rn, bem_rcond=rcond
    )


@dataclass
class RunResult:
    """Fixed-step time march output.

    Arrays have one row per recorded instant, the initial state
    included.  ``tip`` holds the displacement of the probe point,
    ``bem_rcond`` is NaN whenever no BEM assembly happened in a step,
    ``energy`` is kinetic plus strain energy.
    """

    time: np.ndarray
    tip: np.ndarray
    newton_iters: np.ndarray
    bem_rcond: np.ndarray
    energy: np.ndarray
    state: SimState
    snapshots: list


def run(coupled, F, params, mode, n_steps, newton=None, state0=None,
        probe=(1.0, 0.5), snapshot_every=0, on_step=None):
    """March ``n_steps`` fixed steps and collect per-step observables.

    Parameters
    ----------
    probe : pair of float
        Parametric point whose displacement is logged as ``tip``.
    snapshot_every : int
        Keep a copy of the full state every N steps (0 disables; the
        initial and final states are always kept when enabled).
    on_step : callable, optional
        ``on_step(state, diagnostics, observables)`` called after every
        step with ``observables = (time, tip_xyz, iters, rcond, energy)``;
        lets a caller stream partial results before a later step fails.

    Returns
    -------
    RunResult
    """
    shell = coupled.shell
    state = initial_state(coupled, F, mode) if state0 is None else state0
    probe = np.asarray(probe, dtype=float)

    times = [state.time]
    tips = [shell.point_displacement(probe, state.u)]
    iters = [0]
    rconds = [np.nan]
    energies = [coupled.energy(state)]
    snapshots = [dataclasses.replace(state)] if snapshot_every else []

    for k in range(n_steps):
        state, diag = step(coupled, state, F, params, mode, newton)
        times.append(state.time)
        tips.append(shell.point_displacement(probe, state.u))
        iters.append(diag.newton_iters)
        rconds.append(diag.bem_rcond)
        energies.append(coupled.energy(state))
        if snapshot_every and (state.step % snapshot_every == 0 or k == n_steps - 1):
            snapshots.append(dataclasses.replace(state))
        if on_step is not None:
            on_step(state, diag,
                    (times[-1], tips[-1], iters[-1], rconds[-1], energies[-1]))

    return RunResult(
        time=np.array(times),
        tip=np.array(tips),
        newton_iters=np.array(iters),
        bem_rcond=np.array(rconds),
        energy=np.array(energies),
        state=state,
        snapshots=snapshots,
    )


def measure_frequency(time, series, periods=7, tail_frac=0.1):
    """Oscillation frequency averaged over the first ``periods`` periods.

    The series is centered on its asymptote (mean of the trailing
    ``tail_frac`` of samples, which removes any static offset), zero
    crossings are located by linear interpolation, and the frequency is
    ``periods`` divided by the time between the first and the
    (periods+1)-th crossing in the same direction.

    Returns
    -------
    float or None
        None when the series does not oscillate enough to measure
        (fewer than 15 crossings overall, or too few same-direction
        crossings), as happens for over-damped decay.
    """
    time = np.asarray(time, dtype=float)
    x = np.asarray(series, dtype=float)
    ntail = max(1, int(round(tail_frac * len(x))))
    y = x - x[-ntail:].mean()
    sign_change = y[:-1] * y[1:] < 0.0
    if np.count_nonzero(sign_change) < 15:
        return None
    up = np.nonzero(sign_change & (y[:-1] < 0.0))[0]
    if len(up) < periods + 1:
        return None
    frac = y[up] / (y[up] - y[up + 1])
    t_up = time[up] + frac * (time[up + 1] - time[up])
    return periods / (t_up[periods] - t_up[0])


def oscillates(series, reference, window=4, factor=3.0):
    """Detect spurious step-to-step oscillation against a reference run.

    Fires when ``window`` consecutive increments of ``series`` alternate
    in sign while each exceeds ``factor`` times the largest increment of
    ``reference`` in magnitude.  Both series must share the sampling.
    """
    d = np.diff(np.asarray(series, dtype=float))
    dref = np.diff(np.asarray(reference, dtype=float))
    if len(d) != len(dref):
        raise ConfigError("series and reference must have equal length")
    if len(d) < window:
        return False
    threshold = factor * np.abs(dref).max()
    big = np.abs(d) > threshold
    alternating = np.r_[d[:-1] * d[1:] < 0.0, False]
    run_len = 0
    for i in range(len(d)):
        if big[i] and (run_len == 0 or alternating[i - 1]):
            run_len += 1
            if run_len >= window:
                return True
        else:
            run_len = big[i] * 1
    return False
