"""Five-stage fourth-order SSP Runge-Kutta and CFL time-step selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gas import GasModel, InvalidStateError

# Shu-Osher form of the optimal SSPRK(5,4) method; row i holds the
# coefficients on stages 0..i-1 used to form stage i.
_ALPHA = (
    (1.0,),
    (0.444370493651235, 0.555629506348765),
    (0.620101851488403, 0.0, 0.379898148511597),
    (0.178079954393132, 0.0, 0.0, 0.821920045606868),
    (0.0, 0.0, 0.517231671970585, 0.096059710526147, 0.386708617503269),
)
_BETA = (
    (0.391752226571890,),
    (0.0, 0.368410593050371),
    (0.0, 0.0, 0.251891774271694),
    (0.0, 0.0, 0.0, 0.544974750228521),
    (0.0, 0.0, 0.0, 0.063692468666290, 0.226007483236906),
)


@dataclass(frozen=True)
class SsprkTableau:
    alpha: tuple = _ALPHA
    beta: tuple = _BETA

    @property
    def stages(self) -> int:
        return len(self.alpha)

    def matrices(self):
        s = self.stages
        A = np.zeros((s, s))
        B = np.zeros((s, s))
        for i in range(s):
            A[i, : i + 1] = self.alpha[i]
            B[i, : i + 1] = self.beta[i]
        return A, B

    @property
    def cfl_coefficient(self) -> float:
        A, B = self.matrices()
        mask = B > 0
        return float(np.min(A[mask] / B[mask]))

    @property
    def stage_times(self):
        """Fractional times at which each stage's residual is evaluated."""
        c = [0.0]
        for a, b in zip(self.alpha, self.beta):
            c.append(sum(ai * ci + bi for ai, bi, ci in zip(a, b, c)))
        return c[:-1]

    def validate(self):
        A, B = self.matrices()
        assert np.all(A >= 0) and np.all(B >= 0)
        assert np.all(np.abs(A.sum(axis=1) - 1.0) <= 1e-15)
        assert abs(self.cfl_coefficient - 1.508) <= 1e-3
        return self


SSPRK54 = SsprkTableau().validate()


def ssprk54_step(state, residual_fn, dt: float, t: float = 0.0, stage_hook=None,
                 tableau: SsprkTableau = SSPRK54):
    """Advance ``state`` by one step; ``residual_fn(u, t)`` returns du/dt.

    ``stage_hook`` (e.g. a positivity limiter) is applied to every stage value.
    Exceptions from the residual are re-raised with a ``stage`` attribute.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    stages = [state]
    rates = []
    times = tableau.stage_times
    for i, (a, b) in enumerate(zip(tableau.alpha, tableau.beta)):
        try:
            rates.append(residual_fn(stages[-1], t + times[i] * dt))
        except Exception as err:
            err.stage = i
            raise
        new = None
        for k, (ak, bk) in enumerate(zip(a, b)):
            if ak != 0.0:
                new = ak * stages[k] if new is None else new + ak * stages[k]
            if bk != 0.0:
                term = (dt * bk) * rates[k]
                new = term if new is None else new + term
        if stage_hook is not None:
            new = stage_hook(new)
        stages.append(new)
    return stages[-1]


@dataclass(frozen=True)
class CflSettings:
    safety: float = 0.9
    c_conv: float = 1.508
    c_diff: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety must lie in (0, 1]")


def stable_dt(dx_min: float, order: int, lam_max: float, nu_max: float,
              settings: CflSettings = CflSettings(), blend: float = 0.0) -> float:
    """Explicit step bound; ``blend`` is the largest subcell blending weight in use.

    Blended elements also carry first-order fluxes across the smallest GLL
    subcell (width w0*h/2), which caps the step at w0*h/(2*blend*lam).
    """
    if not np.isfinite(lam_max) or not np.isfinite(nu_max):
        raise InvalidStateError("wave speed", float(lam_max), "time-step selection")
    n = 2 * order + 1
    dt_c = settings.c_conv * dx_min / (n * lam_max) if lam_max > 0 else np.inf
    if blend > 0 and lam_max > 0:
        from .dg.reference import gll_nodes_weights
        w0 = float(np.min(gll_nodes_weights(order)[1]))
        dt_c = min(dt_c, w0 * dx_min / (2.0 * blend * lam_max) / settings.safety)
    dt_d = settings.c_diff * dx_min**2 / (n**2 * nu_max) if nu_max > 0 else np.inf
    dt = settings.safety * min(dt_c, dt_d)
    if not np.isfinite(dt):
        raise InvalidStateError("time step", float(dt), "no finite stability bound")
    return float(dt)


def compute_dt(mesh, U, gas: GasModel, order: int, settings: CflSettings = CflSettings(),
               dx_min: float | None = None, blend: float = 0.0) -> float:
    from .gas import max_wave_speed
    Uv = np.moveaxis(np.asarray(U), 1, 0)
    lam = float(np.max(max_wave_speed(Uv, gas, check=False)))
    rho_min = float(np.min(Uv[0]))
    nu = max(gas.mu, gas.conductivity / gas.cp) / rho_min if gas.mu > 0 else 0.0
    dx = mesh.min_edge_length() if dx_min is None else dx_min
    return stable_dt(dx, order, lam, nu, settings, blend)
