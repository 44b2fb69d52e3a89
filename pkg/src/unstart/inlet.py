"""Two-ramp hypersonic inlet case: geometry, throttle plug, microjets, probes and diagnostics.

Lengths in the geometry description are millimetres; everything handed to the
solver is in metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gas as gd
from .dg.reference import ConfigurationError
from .dg.solver import BoundarySpec, DGSolver, ShockCapturing
from .gas import GasModel
from .mesh import ForestMesh, physical_gradient

MM = 1e-3
JET_PHI = 0.1
GROUPS = ("blow", "suction1", "suction2")


class GeometryError(ConfigurationError):
    pass


class BalanceError(ValueError):
    """Blowing cannot balance the requested suction."""


@dataclass(frozen=True)
class JetSegment:
    name: str
    group: str  # blow | suction1 | suction2
    wall: str  # ramp2 | floor
    start: float  # arc position along the wall, mm
    end: float

    @property
    def width(self) -> float:
        return self.end - self.start


def _default_jets():
    jets = [JetSegment(f"b{k}", "blow", "ramp2", s, s + 2.0) for k, s in enumerate((18.0, 24.0, 30.0))]
    jets += [JetSegment(f"s1_{k}", "suction1", "floor", 8.0 + 5.0 * k, 10.0 + 5.0 * k) for k in range(6)]
    jets += [JetSegment(f"s2_{k}", "suction2", "floor", 62.0 + 5.0 * k, 64.0 + 5.0 * k) for k in range(3)]
    return tuple(jets)


@dataclass(frozen=True)
class InletGeometry:
    """Approximate two-ramp intake read off a schematic; every length is configurable."""
    ramp1_angle: float = 9.0  # degrees
    ramp2_angle: float = 21.0
    ramp1_dx: float = 60.0  # mm, horizontal extent
    ramp2_dx: float = 40.0
    isolator_length: float = 100.0
    isolator_height: float = 10.0
    cowl_angle: float = 5.0  # upper cowl surface
    domain_top: float = 60.0
    split_y0: float = 15.0  # height of the internal block line at the inflow plane
    throttle_ratio: float = 0.0  # percent
    jets: tuple = field(default_factory=_default_jets)

    # body coordinates -------------------------------------------------------------
    @property
    def x_ramp2(self):
        return self.ramp1_dx

    @property
    def x_lip(self):
        return self.ramp1_dx + self.ramp2_dx

    @property
    def x_exit(self):
        return self.x_lip + self.isolator_length

    @property
    def y_ramp2(self):
        return self.ramp1_dx * math.tan(math.radians(self.ramp1_angle))

    @property
    def y_floor(self):
        return self.y_ramp2 + self.ramp2_dx * math.tan(math.radians(self.ramp2_angle))

    @property
    def y_cowl(self):
        return self.y_floor + self.isolator_height

    @property
    def throat_height(self):
        """Open exit height A_t = A_i (1 - TR/100)."""
        return self.isolator_height * (1.0 - self.throttle_ratio / 100.0)

    def floor(self, x):
        x = np.asarray(x, dtype=float)
        t1 = math.tan(math.radians(self.ramp1_angle))
        t2 = math.tan(math.radians(self.ramp2_angle))
        return np.where(x <= self.x_ramp2, x * t1,
                        np.where(x <= self.x_lip, self.y_ramp2 + (x - self.x_ramp2) * t2, self.y_floor))

    def cowl_top(self, x):
        return self.y_cowl + (np.asarray(x, float) - self.x_lip) * math.tan(math.radians(self.cowl_angle))

    def split(self, x):
        return self.split_y0 + (self.y_cowl - self.split_y0) * np.asarray(x, float) / self.x_lip

    def body_polyline(self):
        return np.array([(0.0, 0.0), (self.x_ramp2, self.y_ramp2), (self.x_lip, self.y_floor),
                         (self.x_exit, self.y_floor)])

    def cowl_polyline(self):
        return np.array([(self.x_exit, self.y_cowl), (self.x_lip, self.y_cowl),
                         (self.x_exit, float(self.cowl_top(self.x_exit)))])

    def wall_line(self, wall: str):
        """Start point and unit tangent of a jet-carrying wall (mm)."""
        if wall == "ramp2":
            a = math.radians(self.ramp2_angle)
            return np.array([self.x_ramp2, self.y_ramp2]), np.array([math.cos(a), math.sin(a)])
        if wall == "floor":
            return np.array([self.x_lip, self.y_floor]), np.array([1.0, 0.0])
        raise GeometryError(f"unknown jet wall {wall!r}")

    def wall_length(self, wall: str) -> float:
        if wall == "ramp2":
            return self.ramp2_dx / math.cos(math.radians(self.ramp2_angle))
        return self.isolator_length

    def group_area(self, group: str) -> float:
        """Total jet width of a group (m, per unit depth)."""
        return sum(j.width for j in self.jets if j.group == group) * MM

    def validate(self):
        if not 0.0 <= self.throttle_ratio < 100.0:
            raise GeometryError(f"throttle ratio {self.throttle_ratio} outside [0, 100)")
        for name in ("ramp1_dx", "ramp2_dx", "isolator_length", "isolator_height"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if not 0 <= self.ramp1_angle < self.ramp2_angle < 90:
            raise GeometryError("ramp angles must increase and stay below 90 degrees")
        if not 0.0 < self.split_y0 < self.domain_top:
            raise GeometryError("internal block line must start inside the domain")
        # the body, cowl and block lines must not cross
        xs = np.linspace(0.0, self.x_lip, 201)
        if np.any(self.split(xs) <= self.floor(xs)):
            raise GeometryError("self-intersecting polyline: block line crosses the ramps")
        if not self.cowl_top(self.x_exit) < self.domain_top:
            raise GeometryError("self-intersecting polyline: cowl reaches the domain top")
        if not self.y_cowl < self.domain_top:
            raise GeometryError("self-intersecting polyline: cowl above the domain top")
        for wall in ("ramp2", "floor"):
            segs = sorted((j for j in self.jets if j.wall == wall), key=lambda j: j.start)
            for j in segs:
                if not 0.0 <= j.start < j.end <= self.wall_length(wall):
                    raise GeometryError(f"jet {j.name} does not lie on wall {wall}")
            for a, b in zip(segs, segs[1:]):
                if b.start < a.end:
                    raise GeometryError(f"jets {a.name} and {b.name} overlap")
        for j in self.jets:
            if j.group not in GROUPS:
                raise GeometryError(f"jet {j.name} has unknown group {j.group!r}")
            if (j.group == "blow") != (j.wall == "ramp2"):
                raise GeometryError(f"jet {j.name}: blowing lives on ramp2, suction on the floor")
        if self.jets:
            ab = self.group_area("blow")
            if ab <= 0 or abs(self.group_area("suction1") - 2 * ab) > 1e-9 * ab \
                    or abs(self.group_area("suction2") - ab) > 1e-9 * ab:
                raise GeometryError("jet areas must satisfy A_s1 = 2 A_b and A_s2 = A_b")
        return self


# microjets -------------------------------------------------------------------------

def jet_velocity_profile(x, start: float, end: float, lam: float, u_inf: float,
                         phi: float = JET_PHI):
    """Flattened sinusoid: lam * u_inf * sin(pi (x - start)/(end - start))**phi."""
    x = np.asarray(x, dtype=float)
    if np.any(x < start) or np.any(x > end):
        raise ValueError(f"position outside jet segment [{start}, {end}]")
    xi = (x - start) / (end - start)
    s = np.sin(np.pi * np.minimum(xi, 1.0 - xi))  # folded so both ends are exactly zero
    return lam * u_inf * s**phi


def jet_direction(group: str, beta: float, ramp_angle_deg: float = 21.0):
    if group == "blow":
        th = math.radians(ramp_angle_deg) + beta
    elif group in ("suction1", "suction2"):
        th = -math.pi / 2
    else:
        raise ConfigurationError(f"jet group {group!r} is neither blowing nor suction")
    return np.array([math.cos(th), math.sin(th)])


def blowing_density_from_balance(rho_s1: float, rho_s2: float, v_b: float, v_s1: float,
                                 v_s2: float, a_b: float = 1.0, a_s1: float | None = None,
                                 a_s2: float | None = None) -> float:
    a_s1 = 2.0 * a_b if a_s1 is None else a_s1
    a_s2 = a_b if a_s2 is None else a_s2
    suction = rho_s1 * a_s1 * v_s1 + rho_s2 * a_s2 * v_s2
    if not v_b > 0:
        raise BalanceError("blowing speed is zero while suction is requested")
    rho_b = suction / (a_b * v_b)
    if not rho_b > 0:
        raise BalanceError("zero suction leaves no mass for the blowing jets")
    return rho_b


@dataclass(frozen=True)
class JetCommand:
    lambda_b: float = 0.0
    lambda_s1: float = 0.0
    lambda_s2: float = 0.0
    beta: float = 0.0

    @property
    def active(self) -> bool:
        return self.lambda_b > 0 or self.lambda_s1 > 0 or self.lambda_s2 > 0


class JetActuation:
    """Supplies jet wall velocities and densities to the solver's jet_wall boundaries.

    Densities are frozen per control step: suction groups use their mean wall
    density at the time the command was applied and the blowing density comes
    from the mass balance, so prescribed blowing and suction mass flows agree.
    """

    WALLS = ("ramp2", "floor")

    def __init__(self, geometry: InletGeometry, u_inf: float, phi: float = JET_PHI):
        self.geometry = geometry
        self.u_inf = u_inf
        self.phi = phi
        self.command = JetCommand()
        self.density = {g: 0.0 for g in GROUPS}
        self._cache = {}

    def resolves(self, wall: str) -> bool:
        return wall in self.WALLS

    def speeds(self):
        c = self.command
        return {"blow": c.lambda_b * self.u_inf, "suction1": c.lambda_s1 * self.u_inf,
                "suction2": c.lambda_s2 * self.u_inf}

    def apply(self, command: JetCommand, rho_s1: float, rho_s2: float):
        """Set a new command; suction densities come from the current wall state."""
        if command.lambda_b > 0 and (command.lambda_s1 > 0 or command.lambda_s2 > 0):
            v = {"blow": command.lambda_b * self.u_inf, "suction1": command.lambda_s1 * self.u_inf,
                 "suction2": command.lambda_s2 * self.u_inf}
            geo = self.geometry
            rho_b = blowing_density_from_balance(rho_s1, rho_s2, v["blow"], v["suction1"], v["suction2"],
                                                 geo.group_area("blow"), geo.group_area("suction1"),
                                                 geo.group_area("suction2"))
        elif command.active:
            # one-sided actuation cannot satisfy the mass balance
            raise BalanceError("blowing and suction must be active together")
        else:
            rho_b = 0.0
        self.command = command
        self.density = {"blow": rho_b, "suction1": float(rho_s1), "suction2": float(rho_s2)}

    def mass_flows(self):
        """Prescribed mass flow per group (kg/s per unit depth) from peak speeds."""
        v = self.speeds()
        return {g: self.density[g] * self.geometry.group_area(g) * v[g] for g in GROUPS}

    def kinetic_power(self):
        flows = self.mass_flows()
        return jet_kinetic_power([flows[g] for g in GROUPS],
                                 [self.density[g] for g in GROUPS],
                                 [self.geometry.group_area(g) for g in GROUPS])

    def _layout(self, wall, xy):
        key = (wall, xy.shape, xy.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            origin, tangent = self.geometry.wall_line(wall)
            arc = (xy.T / MM - origin) @ tangent
            hit = []
            for j in self.geometry.jets:
                if j.wall != wall:
                    continue
                m = (arc >= j.start) & (arc <= j.end)
                if np.any(m):
                    shape = jet_velocity_profile(arc[m], j.start, j.end, 1.0, 1.0, self.phi)
                    hit.append((j.group, np.nonzero(m)[0], shape))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def wall_state(self, wall, xy, normal, interior, t):
        n = xy.shape[1]
        vx = np.zeros(n)
        vy = np.zeros(n)
        rho = np.full(n, np.nan)
        if not self.command.active:
            return (vx, vy), rho
        v = self.speeds()
        for group, idx, shape in self._layout(wall, np.ascontiguousarray(xy)):
            if v[group] == 0.0:
                continue
            d = jet_direction(group, self.command.beta, self.geometry.ramp2_angle)
            mag = v[group] * shape
            vx[idx] = mag * d[0]
            vy[idx] = mag * d[1]
            rho[idx] = self.density[group]
        return (vx, vy), rho


def jet_kinetic_power(flows, densities, areas) -> float:
    """Sum of 0.5 Q^3 / (rho^2 A^2) over jet groups with nonzero flow."""
    total = 0.0
    for q, r, a in zip(flows, densities, areas):
        if q != 0.0:
            total += 0.5 * q**3 / (r * r * a * a)
    return float(total)


# probes ------------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSet:
    p1: tuple
    p2: tuple
    sensors: np.ndarray  # (N, 2) mm

    def __post_init__(self):
        s = np.asarray(self.sensors, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ConfigurationError("sensor coordinates must be an (N, 2) array")

    @property
    def count(self) -> int:
        return len(self.sensors)

    def subset(self, indices) -> "ProbeSet":
        return replace(self, sensors=np.asarray(self.sensors)[list(indices)])


def default_probes(geo: InletGeometry, n_sensors: int = 100) -> ProbeSet:
    """p1 under the cowl lip, p2 mid-isolator on the floor, sensors split across both walls."""
    half = n_sensors // 2
    x0 = geo.x_lip + 0.02 * geo.isolator_length
    x1 = geo.x_exit - 0.02 * geo.isolator_length
    bottom = [(x, geo.y_floor) for x in np.linspace(x0, x1, n_sensors - half)]
    top = [(x, geo.y_cowl) for x in np.linspace(x0, x1, half)]
    return ProbeSet(p1=(geo.x_lip + 0.05 * geo.isolator_length, geo.y_cowl),
                    p2=(geo.x_lip + 0.5 * geo.isolator_length, geo.y_floor),
                    sensors=np.array(bottom + top))


# case assembly -----------------------------------------------------------------------

@dataclass(frozen=True)
class Freestream:
    mach: float = 5.0
    p_inf: float = 900.0
    T_inf: float = 101.0
    gas_constant: float = 287.87
    gamma: float = 1.4
    prandtl: float = 0.72
    re_unit: float = 5.0e6

    @property
    def rho(self):
        return self.p_inf / (self.gas_constant * self.T_inf)

    @property
    def speed(self):
        return self.mach * math.sqrt(self.gamma * self.gas_constant * self.T_inf)

    def gas(self) -> GasModel:
        return gd.freestream_gas(self.mach, self.p_inf, self.T_inf, self.re_unit, self.gamma,
                                 self.gas_constant, self.prandtl)

    def state(self, gas: GasModel):
        return np.array(gd.conservative_from_primitive(self.rho, self.speed, 0.0, self.p_inf, gas),
                        dtype=float)


def _rows(height, size, min_rows=1):
    return max(min_rows, int(round(height / size)))


def build_inlet_mesh(geo: InletGeometry, base_size: float = 5.0, level: int = 0) -> ForestMesh:
    """Block-structured forest: ramp columns, isolator, and the region above the cowl.

    ``base_size`` is the target tree edge length in mm.
    """
    geo.validate()
    H = geo.isolator_height
    f = geo.throttle_ratio / 100.0
    if f > 0:
        m1 = _rows(f * H, base_size)
        m2 = _rows((1 - f) * H, base_size)
        low = np.concatenate([np.linspace(0, f, m1 + 1)[:-1], np.linspace(f, 1, m2 + 1)])
        n_plug = m1
    else:
        low = np.linspace(0, 1, _rows(H, base_size) + 1)
        n_plug = 0
    n_up = _rows(geo.domain_top - geo.y_cowl, base_size)
    up = np.linspace(0, 1, n_up + 1)
    cols = np.concatenate([
        np.linspace(0, geo.x_ramp2, _rows(geo.ramp1_dx, base_size) + 1)[:-1],
        np.linspace(geo.x_ramp2, geo.x_lip, _rows(geo.ramp2_dx, base_size) + 1)[:-1],
        np.linspace(geo.x_lip, geo.x_exit, _rows(geo.isolator_length, base_size) + 1)])
    top = geo.domain_top

    def lower_band(x):
        if x <= geo.x_lip + 1e-12:
            return float(geo.floor(x)), float(geo.split(x))
        return geo.y_floor, geo.y_cowl

    def upper_band(x):
        if x <= geo.x_lip + 1e-12:
            return float(geo.split(x)), top
        return float(geo.cowl_top(x)), top

    corners, tags = [], {}
    ncol = len(cols) - 1
    for i in range(ncol):
        xa, xb = cols[i], cols[i + 1]
        inside = xa >= geo.x_lip - 1e-12
        for band, fracs, fn in (("low", low, lower_band), ("up", up, upper_band)):
            (ya0, ya1), (yb0, yb1) = fn(xa), fn(xb)
            nrow = len(fracs) - 1
            for r in range(nrow):
                ca, cb = fracs[r], fracs[r + 1]
                t = len(corners)
                corners.append([[xa, ya0 + ca * (ya1 - ya0)], [xb, yb0 + ca * (yb1 - yb0)],
                                [xa, ya0 + cb * (ya1 - ya0)], [xb, yb0 + cb * (yb1 - yb0)]])
                if i == 0:
                    tags[(t, 0)] = "inflow"
                if i == ncol - 1:
                    if band == "up":
                        tags[(t, 1)] = "outflow"
                    else:
                        tags[(t, 1)] = "plug" if r < n_plug else "exit"
                if band == "low" and r == 0:
                    tags[(t, 2)] = "ramp1" if xb <= geo.x_ramp2 + 1e-12 else (
                        "ramp2" if xb <= geo.x_lip + 1e-12 else "floor")
                if band == "low" and r == nrow - 1 and inside:
                    tags[(t, 3)] = "cowl"
                if band == "up" and r == 0 and inside:
                    tags[(t, 2)] = "cowl"
                if band == "up" and r == nrow - 1:
                    tags[(t, 3)] = "inflow"
    corners = np.array(corners) * MM

    def tag_fn(t, face, a, b):
        try:
            return tags[(t, face)]
        except KeyError:
            raise GeometryError(f"untagged boundary on tree {t} face {face}") from None

    return ForestMesh.from_trees(corners, tag_fn, level=level)


def boundary_specs(free_state):
    return {
        "inflow": BoundarySpec("supersonic_inflow", state=np.asarray(free_state, dtype=float)),
        "outflow": BoundarySpec("supersonic_outflow"),
        "exit": BoundarySpec("supersonic_outflow"),
        "plug": BoundarySpec("no_slip_wall"),
        "ramp1": BoundarySpec("no_slip_wall"),
        "cowl": BoundarySpec("no_slip_wall"),
        "ramp2": BoundarySpec("jet_wall", jet="ramp2"),
        "floor": BoundarySpec("jet_wall", jet="floor"),
    }


@dataclass
class InletCase:
    geometry: InletGeometry
    freestream: Freestream
    solver: DGSolver
    actuation: JetActuation
    probes: ProbeSet
    U0: np.ndarray

    @property
    def gas(self):
        return self.solver.gas

    def __post_init__(self):
        s = self.solver
        self._sensor_sampler = s.sampler(np.asarray(self.probes.sensors) * MM)
        self._probe_sampler = s.sampler(np.array([self.probes.p1, self.probes.p2]) * MM)
        bottom = np.asarray(self.probes.sensors)[:, 1] <= self.geometry.y_floor + 1e-9
        self._floor_faces = s.bnd.get("floor", np.zeros((0, 2), int))
        self._exit_faces = s.bnd.get("exit", np.zeros((0, 2), int))
        self._on_floor = bottom
        # midpoints of the suction segments, used when no face node falls inside a group
        origin, tangent = self.geometry.wall_line("floor")
        mids = {}
        for j in self.geometry.jets:
            if j.wall == "floor":
                mids.setdefault(j.group, []).append(origin + 0.5 * (j.start + j.end) * tangent)
        inward = np.array([0.0, 1e-6])  # nudge off the wall so the point locates inside
        self._suction_fallback = {g: s.sampler((np.array(v) + inward) * MM) for g, v in mids.items()}

    def pressure_field(self, U):
        return gd.pressure(np.moveaxis(U, 1, 0), self.gas)

    def sample_wall_pressures(self, U):
        return self._sensor_sampler(self.pressure_field(U))

    def probe_pressures(self, U):
        return self._probe_sampler(self.pressure_field(U))

    def exit_mass_flow(self, U) -> float:
        return face_mass_flow(self.solver, U, self._exit_faces)

    def suction_densities(self, U):
        """Mean wall density over each suction group's segments."""
        s = self.solver
        out = []
        faces = self._floor_faces
        if len(faces) == 0:
            return 0.0, 0.0
        e, f = faces[:, 0], faces[:, 1]
        from .dg.solver import _face_traces
        rho = _face_traces(U[:, :1])[e, f][:, 0]  # (K, n)
        xy = s.face_X[e, f]  # (K, 2, n)
        w = s.ref.weights[None, :] * s.face_s[e, f]
        origin, tangent = self.geometry.wall_line("floor")
        arc = ((np.moveaxis(xy, 1, 2) / MM - origin) @ tangent)
        for group in ("suction1", "suction2"):
            m = np.zeros_like(arc, dtype=bool)
            for j in self.geometry.jets:
                if j.group == group:
                    m |= (arc >= j.start) & (arc <= j.end)
            if np.any(m):
                out.append(float(np.sum(rho * w * m) / np.sum(w * m)))
            elif group in self._suction_fallback:
                out.append(float(np.mean(self._suction_fallback[group](U[:, 0]))))
            else:
                out.append(0.0)
        return tuple(out)

    def mach_field(self, U):
        return gd.mach_number(np.moveaxis(U, 1, 0), self.gas)

    def q_field(self, U):
        return q_criterion(self.solver, U)


def face_mass_flow(solver: DGSolver, U, faces) -> float:
    """Face-quadrature integral of rho u . n over boundary faces (per unit depth)."""
    if len(faces) == 0:
        return 0.0
    from .dg.solver import _face_traces
    e, f = faces[:, 0], faces[:, 1]
    Uf = _face_traces(U)[e, f]  # (K, 4, n)
    n = solver.face_n[e, f]  # (K, 2, n)
    flux = Uf[:, 1] * n[:, 0] + Uf[:, 2] * n[:, 1]
    return float(np.sum(flux * solver.face_s[e, f] * solver.ref.weights[None, :]))


def q_criterion(solver: DGSolver, U):
    """Q = 0.5 (|Omega|^2 - |S|^2) from nodal velocity gradients."""
    u = U[:, 1] / U[:, 0]
    v = U[:, 2] / U[:, 0]
    ux, uy = physical_gradient(solver.ref, solver.X, u, solver.metrics)
    vx, vy = physical_gradient(solver.ref, solver.X, v, solver.metrics)
    return velocity_gradient_q(ux, uy, vx, vy)


def velocity_gradient_q(ux, uy, vx, vy):
    s12 = 0.5 * (uy + vx)
    w12 = 0.5 * (uy - vx)
    omega2 = 2 * w12 * w12
    strain2 = ux * ux + vy * vy + 2 * s12 * s12
    return 0.5 * (omega2 - strain2)


def build_inlet_case(geometry: InletGeometry, base_size: float = 5.0, order: int = 4,
                     freestream: Freestream = Freestream(), level: int = 0,
                     shock_capturing: ShockCapturing | None = ShockCapturing(),
                     probes: ProbeSet | None = None, n_sensors: int = 100,
                     lohner_epsilon: float | None = None) -> InletCase:
    geometry.validate()
    mesh = build_inlet_mesh(geometry, base_size, level)
    gas = freestream.gas()
    state = freestream.state(gas)
    act = JetActuation(geometry, freestream.speed)
    eps = lohner_epsilon
    if eps is None:
        # scale the sensor regularisation to freestream density over one tree size
        eps = 1e-2 * freestream.rho / (base_size * MM)
    solver = DGSolver(mesh, order, gas, boundary_specs(state), shock_capturing=shock_capturing,
                      floor_rho=1e-6 * freestream.rho, floor_p=1e-6 * freestream.p_inf,
                      actuation=act, lohner_epsilon=eps)
    probes = probes if probes is not None else default_probes(geometry, n_sensors)
    return InletCase(geometry, freestream, solver, act, probes, solver.uniform(state))


# time integration ----------------------------------------------------------------------

class SolverAbort(RuntimeError):
    """Non-finite or unrecoverable state during a run; carries time and location."""

    def __init__(self, t: float, message: str):
        super().__init__(f"solver aborted at t={t:.6e} s: {message}")
        self.t = t


def advance(case: InletCase, U, t: float, t_end: float, cfl=None, max_steps: int = 10**7):
    """Integrate to exactly ``t_end``; returns (U, t, steps). The limiter runs after every stage."""
    from .timestep import CflSettings, compute_dt, ssprk54_step
    s = case.solver
    cfl = cfl or CflSettings()
    blend = s.shock_capturing.alpha_max if s.shock_capturing is not None else 0.0
    steps = 0
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        try:
            dt = compute_dt(s.mesh, U, s.gas, s.order, cfl, blend=blend)
            dt = min(dt, t_end - t)
            U = ssprk54_step(U, s.residual, dt, t, stage_hook=s.limit)
        except gd.InvalidStateError as err:
            raise SolverAbort(t, str(err)) from err
        t += dt
        steps += 1
        if steps >= max_steps:
            raise SolverAbort(t, "step limit reached")
    return U, t, steps


def run_baseline(case: InletCase, duration: float, window: float, sample_every: float,
                 U=None, t0: float = 0.0, cfl=None):
    """Time-averaged sensor pressures over the final ``window`` seconds of an unthrottled run."""
    if case.geometry.throttle_ratio != 0:
        raise ConfigurationError("the baseline is defined for TR = 0")
    if not 0 < window <= duration or sample_every <= 0:
        raise ConfigurationError("need 0 < window <= duration and a positive sampling interval")
    U = case.U0 if U is None else U
    t = t0
    t_avg = t0 + duration - window
    U, t, _ = advance(case, U, t, t_avg, cfl)
    samples = [case.sample_wall_pressures(U)]
    while t < t0 + duration - 1e-15:
        U, t, _ = advance(case, U, t, min(t + sample_every, t0 + duration), cfl)
        samples.append(case.sample_wall_pressures(U))
    return average_samples(samples), U, t


def average_samples(samples):
    return np.mean(np.asarray(samples, dtype=float), axis=0)


def unstart_onset(t, p2, threshold: float = 5.0, min_samples: int = 5):
    """First time p2 reaches ``threshold`` times the median of all earlier samples.

    Returns (onset time or None, max ratio seen). The first ``min_samples``
    samples only seed the median.
    """
    t = np.asarray(t, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    best = 0.0
    for k in range(min_samples, len(p2)):
        ratio = p2[k] / np.median(p2[:k])
        best = max(best, ratio)
        if ratio >= threshold:
            return float(t[k]), float(ratio)
    return None, float(best)
