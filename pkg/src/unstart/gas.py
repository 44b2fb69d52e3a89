"""Ideal-gas state algebra, physical fluxes and wave speeds.

Conservative states are arrays whose leading axis holds (rho, rho_u, rho_v,
rho_E); any trailing shape is allowed so the same routines serve single
states, face traces and whole element stacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

RHO, MX, MY, EN = 0, 1, 2, 3
COMPONENTS = ("rho", "rho_u", "rho_v", "rho_E")


class InvalidStateError(ValueError):
    """A state with non-positive density or pressure reached a flux routine."""

    def __init__(self, component: str, value: float, where=None):
        self.component = component
        self.value = value
        self.where = where
        msg = f"non-positive {component} ({value:.6g})"
        if where is not None:
            msg += f" at {where}"
        super().__init__(msg)


@dataclass(frozen=True)
class GasModel:
    gamma: float = 1.4
    gas_constant: float = 287.87
    mu: float = 0.0
    prandtl: float = 0.72

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if not self.gas_constant > 0.0:
            raise ValueError("gas_constant must be positive")
        if self.mu < 0.0:
            raise ValueError("mu must be non-negative")
        if not self.prandtl > 0.0:
            raise ValueError("prandtl must be positive")

    @property
    def cp(self) -> float:
        return self.gamma * self.gas_constant / (self.gamma - 1.0)

    @property
    def cv(self) -> float:
        return self.gas_constant / (self.gamma - 1.0)

    @property
    def conductivity(self) -> float:
        return self.mu * self.cp / self.prandtl

    def with_mu(self, mu: float) -> "GasModel":
        return GasModel(self.gamma, self.gas_constant, mu, self.prandtl)


def freestream_gas(mach: float, p_inf: float, T_inf: float, re_unit: float,
                   gamma: float = 1.4, gas_constant: float = 287.87,
                   prandtl: float = 0.72) -> GasModel:
    """Gas model whose constant viscosity reproduces a unit Reynolds number."""
    rho = p_inf / (gas_constant * T_inf)
    u = mach * np.sqrt(gamma * gas_constant * T_inf)
    mu = 0.0 if not np.isfinite(re_unit) or re_unit <= 0 else rho * u / re_unit
    return GasModel(gamma, gas_constant, mu, prandtl)


class Primitive(NamedTuple):
    rho: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    T: np.ndarray


def _first_bad(mask, values):
    idx = np.unravel_index(int(np.argmax(mask)), mask.shape) if mask.ndim else None
    val = float(values[idx]) if idx is not None else float(values)
    return idx, val


def pressure(U, gas: GasModel):
    U = np.asarray(U, dtype=float)
    rho = U[RHO]
    return (gas.gamma - 1.0) * (U[EN] - 0.5 * (U[MX] ** 2 + U[MY] ** 2) / rho)


def check_state(U, gas: GasModel):
    """Raise InvalidStateError if any density or pressure is non-positive."""
    U = np.asarray(U, dtype=float)
    rho = U[RHO]
    bad = ~(rho > 0)
    if np.any(bad):
        idx, val = _first_bad(bad, rho)
        raise InvalidStateError("density", val, idx)
    p = pressure(U, gas)
    bad = ~(p > 0)
    if np.any(bad):
        idx, val = _first_bad(bad, p)
        raise InvalidStateError("pressure", val, idx)
    return p


def primitive_from_conservative(U, gas: GasModel) -> Primitive:
    U = np.asarray(U, dtype=float)
    p = check_state(U, gas)
    rho = U[RHO]
    return Primitive(rho, U[MX] / rho, U[MY] / rho, p, p / (rho * gas.gas_constant))


def conservative_from_primitive(rho, u, v, p, gas: GasModel):
    rho, u, v, p = (np.asarray(a, dtype=float) for a in (rho, u, v, p))
    if np.any(~(rho > 0)):
        idx, val = _first_bad(~(rho > 0), np.broadcast_to(rho, np.shape(rho)))
        raise InvalidStateError("density", val, idx)
    if np.any(~(p > 0)):
        idx, val = _first_bad(~(p > 0), np.broadcast_to(p, np.shape(p)))
        raise InvalidStateError("pressure", val, idx)
    rho, u, v, p = np.broadcast_arrays(rho, u, v, p)
    E = p / (gas.gamma - 1.0) + 0.5 * rho * (u * u + v * v)
    return np.stack([rho, rho * u, rho * v, E])


def inviscid_flux(U, gas: GasModel, check: bool = True):
    """Return the x- and y-direction convective fluxes (F, G)."""
    U = np.asarray(U, dtype=float)
    p = check_state(U, gas) if check else pressure(U, gas)
    rho, mx, my, E = U
    u = mx / rho
    v = my / rho
    F = np.stack([mx, mx * u + p, my * u, u * (E + p)])
    G = np.stack([my, mx * v, my * v + p, v * (E + p)])
    return F, G


def normal_flux(U, nx, ny, gas: GasModel, check: bool = True):
    U = np.asarray(U, dtype=float)
    p = check_state(U, gas) if check else pressure(U, gas)
    rho, mx, my, E = U
    un = (mx * nx + my * ny) / rho
    return np.stack([rho * un, mx * un + p * nx, my * un + p * ny, un * (E + p)])


def sound_speed(U, gas: GasModel):
    U = np.asarray(U, dtype=float)
    return np.sqrt(gas.gamma * pressure(U, gas) / U[RHO])


def max_wave_speed(U, gas: GasModel, check: bool = True):
    """|u| + c at every state."""
    U = np.asarray(U, dtype=float)
    p = check_state(U, gas) if check else pressure(U, gas)
    rho = U[RHO]
    speed = np.sqrt(U[MX] ** 2 + U[MY] ** 2) / rho
    return speed + np.sqrt(gas.gamma * p / rho)


def rusanov_flux(U_minus, U_plus, normal, gas: GasModel, check: bool = True):
    """Local Lax-Friedrichs flux through a face with unit normal pointing from - to +."""
    nx, ny = normal[0], normal[1]
    fm = normal_flux(U_minus, nx, ny, gas, check)
    fp = normal_flux(U_plus, nx, ny, gas, check)
    lam = np.maximum(max_wave_speed(U_minus, gas, False), max_wave_speed(U_plus, gas, False))
    return 0.5 * (fm + fp) - 0.5 * lam * (np.asarray(U_plus) - np.asarray(U_minus))


def primitive_gradients(U, dUdx, dUdy, gas: GasModel):
    """Chain rule from conservative gradients to (u, v, T) gradients."""
    rho, mx, my, E = U
    u = mx / rho
    v = my / rho
    g1 = gas.gamma - 1.0
    out = []
    for d in (dUdx, dUdy):
        drho, dmx, dmy, dE = d
        du = (dmx - u * drho) / rho
        dv = (dmy - v * drho) / rho
        dp = g1 * (dE - u * dmx - v * dmy + 0.5 * (u * u + v * v) * drho)
        p = g1 * (E - 0.5 * rho * (u * u + v * v))
        dT = (dp / rho - p * drho / rho**2) / gas.gas_constant
        out.append((du, dv, dT))
    return out


def viscous_flux(U, dUdx, dUdy, gas: GasModel, adiabatic_normal=None):
    """Viscous fluxes (Fv, Gv) from the state and its conservative gradients.

    ``adiabatic_normal`` removes the wall-normal heat flux component.
    """
    U = np.asarray(U, dtype=float)
    (ux, vx, Tx), (uy, vy, Ty) = primitive_gradients(U, np.asarray(dUdx), np.asarray(dUdy), gas)
    mu = gas.mu
    k = gas.conductivity
    u = U[MX] / U[RHO]
    v = U[MY] / U[RHO]
    div = ux + vy
    txx = mu * (2.0 * ux - 2.0 / 3.0 * div)
    tyy = mu * (2.0 * vy - 2.0 / 3.0 * div)
    txy = mu * (uy + vx)
    qx = -k * Tx
    qy = -k * Ty
    if adiabatic_normal is not None:
        nx, ny = adiabatic_normal
        qn = qx * nx + qy * ny
        qx = qx - qn * nx
        qy = qy - qn * ny
    zero = np.zeros_like(txx)
    Fv = np.stack([zero, txx, txy, u * txx + v * txy - qx])
    Gv = np.stack([zero, txy, tyy, u * txy + v * tyy - qy])
    return Fv, Gv


def mach_number(U, gas: GasModel):
    U = np.asarray(U, dtype=float)
    return np.sqrt(U[MX] ** 2 + U[MY] ** 2) / U[RHO] / sound_speed(U, gas)


class UnrecoverableStateError(InvalidStateError):
    """The element mean itself violates the positivity floors."""


def _pressure_times_rho(U, gas):
    # (gamma-1)(rho*E - |m|^2/2); positive iff pressure positive for rho > 0
    return (gas.gamma - 1.0) * (U[RHO] * U[EN] - 0.5 * (U[MX] ** 2 + U[MY] ** 2))


def positivity_limit(U, weights, gas: GasModel, floor_rho: float = 1e-10,
                     floor_p: float = 1e-10):
    """Squeeze nodal states toward the element mean until floors hold.

    ``U`` has shape (n_elem, 4, ...) and ``weights`` holds the quadrature
    weights times Jacobian with the trailing node shape (or a leading element
    axis). The element means are left untouched.
    """
    U = np.array(U, dtype=float, copy=True)
    single = U.ndim == 3
    if single:
        U = U[None]
    w = np.asarray(weights, dtype=float)
    if w.ndim == U.ndim - 2:
        w = np.broadcast_to(w, (U.shape[0],) + w.shape)
    mean = element_means(U, w)

    rho_bar = mean[:, RHO]
    p_bar = pressure(mean.T, gas)
    bad_mean = ~((rho_bar > floor_rho) & (p_bar > floor_p))
    if np.any(bad_mean):
        e = int(np.argmax(bad_mean))
        comp = "density" if not rho_bar[e] > floor_rho else "pressure"
        raise UnrecoverableStateError(
            comp, float(rho_bar[e] if comp == "density" else p_bar[e]), f"element {e} mean")

    flat = U.reshape(U.shape[0], 4, -1)
    mean_b = mean[:, :, None]

    # density
    rho_min = flat[:, RHO].min(axis=1)
    target = floor_rho + 1e-13 * rho_bar
    need = rho_min < target
    if np.any(need):
        theta = np.ones_like(rho_bar)
        theta[need] = (rho_bar[need] - target[need]) / (rho_bar[need] - rho_min[need])
        r = flat[:, RHO]
        flat[:, RHO] = np.where(need[:, None], rho_bar[:, None] + theta[:, None] * (r - rho_bar[:, None]), r)

    # pressure: bisection on the segment from the mean toward each violating node
    target_p = floor_p + 1e-13 * p_bar
    p_nodes = _pressure_times_rho(flat.transpose(1, 0, 2), gas) - target_p[:, None] * flat[:, RHO]
    viol = p_nodes < 0
    if np.any(viol):
        ee, nn = np.nonzero(viol)
        Ubar = mean[ee]
        Ui = flat[ee, :, nn]
        lo = np.zeros(len(ee))
        hi = np.ones(len(ee))
        tp = target_p[ee]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            Um = Ubar + mid[:, None] * (Ui - Ubar)
            ok = _pressure_times_rho(Um.T, gas) - tp * Um[:, RHO] >= 0
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        theta = np.ones(U.shape[0])
        np.minimum.at(theta, ee, lo)
        lim = theta < 1.0
        flat[lim] = mean_b[lim] + theta[lim, None, None] * (flat[lim] - mean_b[lim])

    out = flat.reshape(U.shape)
    return out[0] if single else out


def element_means(U, weights):
    w = np.asarray(weights, dtype=float)
    if w.ndim == U.ndim - 2:
        w = np.broadcast_to(w, (U.shape[0],) + w.shape)
    wf = w.reshape(w.shape[0], -1)
    Uf = np.asarray(U).reshape(U.shape[0], U.shape[1], -1)
    return np.einsum("ek,evk->ev", wf, Uf) / wf.sum(axis=1)[:, None]
