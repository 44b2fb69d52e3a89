"""Nodal spectral DG discretization on a quadtree forest.

Solution arrays have shape (n_elem, 4, n, n) with nodes indexed [i (xi), j (eta)].
The scheme is the collocated strong form on GLL nodes (algebraically equal to
the weak form with GLL quadrature), Rusanov inviscid fluxes, BR1 viscous
fluxes, and L2 mortars on 2:1 faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import gas as gd
from ..gas import GasModel, InvalidStateError
from ..mesh import ForestMesh, TopologyError, element_derivative_ops
from .reference import ConfigurationError, ReferenceElement, build_reference_element, interpolation_matrix

BC_KINDS = ("supersonic_inflow", "no_slip_wall", "jet_wall", "supersonic_outflow")
WALL_KINDS = ("no_slip_wall", "jet_wall")


@dataclass(frozen=True)
class BoundarySpec:
    kind: str
    state: np.ndarray | None = None  # conservative freestream state for inflow
    jet: str | None = None  # jet-wall id resolved through the solver's actuation

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "supersonic_inflow":
            if self.state is None or np.shape(self.state) != (4,):
                raise ConfigurationError("supersonic_inflow needs a full conservative state")
        if self.kind == "jet_wall" and not self.jet:
            raise ConfigurationError("jet_wall needs a jet segment id")


def ghost_state(bc: BoundarySpec, interior, normal, gas: GasModel, wall_velocity=None,
                wall_density=None, t: float = 0.0):
    """Exterior state for a boundary face; arrays carry the state axis first."""
    interior = np.asarray(interior, dtype=float)
    if bc.kind == "supersonic_inflow":
        return np.broadcast_to(np.asarray(bc.state, dtype=float).reshape((4,) + (1,) * (interior.ndim - 1)),
                               interior.shape).copy()
    if bc.kind == "supersonic_outflow":
        return interior.copy()
    rho = interior[gd.RHO]
    mx, my = interior[gd.MX], interior[gd.MY]
    p = gd.pressure(interior, gas)
    if bc.kind == "no_slip_wall" or wall_velocity is None:
        ghost = interior.copy()
        ghost[gd.MX] = -mx
        ghost[gd.MY] = -my
        return ghost
    # jet wall: prescribed velocity where active, reflection elsewhere
    vx, vy = np.asarray(wall_velocity[0], float), np.asarray(wall_velocity[1], float)
    active = (vx != 0) | (vy != 0)
    rj = rho if wall_density is None else np.where(np.isnan(wall_density), rho, wall_density)
    ghost = np.empty_like(interior)
    ghost[gd.RHO] = np.where(active, rj, rho)
    ghost[gd.MX] = np.where(active, rj * vx, -mx)
    ghost[gd.MY] = np.where(active, rj * vy, -my)
    e_jet = p / (gas.gamma - 1.0) + 0.5 * rj * (vx * vx + vy * vy)
    ghost[gd.EN] = np.where(active, e_jet, interior[gd.EN])
    return ghost


def slip_mirror(interior, normal):
    """Interior state with the normal momentum reflected (state axis first)."""
    g = np.array(interior, dtype=float, copy=True)
    mn = g[gd.MX] * normal[0] + g[gd.MY] * normal[1]
    g[gd.MX] -= 2.0 * mn * normal[0]
    g[gd.MY] -= 2.0 * mn * normal[1]
    return g


@dataclass(frozen=True)
class ShockCapturing:
    """Blend toward subcell first-order Rusanov volume terms where the density sensor fires."""
    alpha_max: float = 0.5
    eta_min: float = 0.5
    eta_max: float = 3.0
    alpha_min: float = 1e-3
    smooth_neighbors: bool = True

    def alpha(self, eta):
        a = np.clip((eta - self.eta_min) / (self.eta_max - self.eta_min), 0.0, 1.0) * self.alpha_max
        return np.where(a < self.alpha_min, 0.0, a)


def _face_traces(A):
    return np.stack([A[:, :, 0, :], A[:, :, -1, :], A[:, :, :, 0], A[:, :, :, -1]], axis=1)


def _flip_rows(A, mask):
    if np.any(mask):
        A = A.copy()
        A[mask] = A[mask][..., ::-1]
    return A


class DGSolver:
    """Semi-discrete operator for one mesh, order, gas and boundary set."""

    def __init__(self, mesh: ForestMesh, order: int, gas: GasModel, bcs: dict | None = None,
                 shock_capturing: ShockCapturing | None = None, floor_rho: float = 1e-10,
                 floor_p: float = 1e-10, actuation=None, lohner_epsilon: float | None = None):
        self.mesh = mesh
        self.ref: ReferenceElement = build_reference_element(order)
        self.order = order
        self.gas = gas
        self.bcs = dict(bcs or {})
        self.shock_capturing = shock_capturing
        self.floor_rho = floor_rho
        self.floor_p = floor_p
        self.actuation = actuation
        self.lohner_epsilon = lohner_epsilon
        self.last_alpha = None
        self._build_geometry()
        self._build_connectivity()

    # setup -------------------------------------------------------------------------
    def _build_geometry(self):
        ref = self.ref
        X = self.mesh.node_coordinates(ref)
        # metrics from element-local offsets keep roundoff proportional to h
        x_xi, x_eta, y_xi, y_eta, J = element_derivative_ops(ref, X - X[:, :, :1, :1])
        if np.any(J <= 0):
            e = int(np.argmax((J <= 0).reshape(len(J), -1).any(axis=1)))
            raise TopologyError(f"element {e} has non-positive Jacobian")
        self.X = X
        self.metrics = (x_xi, x_eta, y_xi, y_eta, J)
        self.J = J
        self.Ja1 = np.stack([y_eta, -x_eta], axis=1)  # (E, 2, n, n)
        self.Ja2 = np.stack([-y_xi, x_xi], axis=1)
        self.wJ = ref.weights2d[None] * J
        Ja1f = _face_traces(self.Ja1)
        Ja2f = _face_traces(self.Ja2)
        nJ = np.stack([-Ja1f[:, 0], Ja1f[:, 1], -Ja2f[:, 2], Ja2f[:, 3]], axis=1)  # (E,4,2,n)
        self.face_s = np.linalg.norm(nJ, axis=2)
        self.face_n = nJ / self.face_s[:, :, None, :]
        self.face_X = _face_traces(X)
        self.h = self.mesh.edge_lengths()
        # subcell interface metrics for the blended first-order volume term
        D, w = ref.diff_matrix, ref.weights
        dJa1 = np.einsum("ik,evkj->evij", D, self.Ja1) * w[None, None, :, None]
        dJa2 = np.einsum("jk,evik->evij", D, self.Ja2) * w[None, None, None, :]
        self.sub1 = np.concatenate([self.Ja1[:, :, :1, :],
                                    self.Ja1[:, :, :1, :] + np.cumsum(dJa1, axis=2)], axis=2)
        self.sub2 = np.concatenate([self.Ja2[:, :, :, :1],
                                    self.Ja2[:, :, :, :1] + np.cumsum(dJa2, axis=3)], axis=3)

    def _build_connectivity(self):
        mesh = self.mesh
        conf, mort, bnd = [], [], {}
        for e, leaf in enumerate(mesh.leaves):
            for f in range(4):
                nb = mesh.neighbor(leaf, f)
                if nb.kind == "boundary":
                    tag = mesh.boundary_tag(leaf, f)
                    bnd.setdefault(tag, []).append((e, f))
                elif nb.kind == "same":
                    e2 = mesh.index(nb.leaves[0])
                    if (e, f) < (e2, nb.face):
                        conf.append((e, f, e2, nb.face, nb.flip))
                elif nb.kind == "finer":
                    e2 = [mesh.index(k) for k in nb.leaves]
                    mort.append((e, f, e2[0], e2[1], nb.face, nb.flip))
                elif nb.kind == "coarser":
                    par = mesh.index(nb.leaves[0])
                    back = mesh.neighbor(nb.leaves[0], nb.face)
                    if back.kind != "finer" or leaf not in back.leaves:
                        raise TopologyError(f"inconsistent 2:1 connectivity at element {e} face {f}")
        self.conf = np.array(conf, dtype=int).reshape(-1, 5)
        self.mort = np.array(mort, dtype=int).reshape(-1, 6)
        self.bnd = {tag: np.array(v, dtype=int) for tag, v in bnd.items()}
        for tag in self.bnd:
            if tag not in self.bcs:
                raise ConfigurationError(f"no boundary condition for tag {tag!r}")

    # helpers -----------------------------------------------------------------------
    @property
    def n_elem(self):
        return len(self.mesh.leaves)

    def uniform(self, state):
        state = np.asarray(state, dtype=float)
        return np.broadcast_to(state[None, :, None, None],
                               (self.n_elem, 4, self.ref.n, self.ref.n)).copy()

    def project_function(self, fn):
        """Nodal interpolation of fn(x, y) -> (4, ...) conservative field."""
        out = fn(self.X[:, 0], self.X[:, 1])
        return np.ascontiguousarray(np.moveaxis(np.asarray(out, dtype=float), 0, 1))

    def integrals(self, U):
        return np.einsum("eij,evij->v", self.wJ, U)

    def element_means(self, U):
        return np.einsum("eij,evij->ev", self.wJ, U) / self.wJ.sum(axis=(1, 2))[:, None]

    def check(self, U):
        try:
            gd.check_state(np.moveaxis(U, 1, 0), self.gas)
        except InvalidStateError as err:
            e, i, j = err.where
            x, y = self.X[e, :, i, j]
            raise InvalidStateError(err.component, err.value,
                                    f"element {e} node ({i},{j}) x={x:.6g} y={y:.6g}") from None

    def limit(self, U):
        return gd.positivity_limit(U, self.wJ, self.gas, self.floor_rho, self.floor_p)

    def max_wave_speed(self, U):
        lam = gd.max_wave_speed(np.moveaxis(U, 1, 0), self.gas, check=False)
        return float(np.max(lam))

    def _boundary_data(self, U, Uf, t):
        """Interior traces and ghost states per boundary tag."""
        out = {}
        for tag, ef in self.bnd.items():
            bc = self.bcs[tag]
            e, f = ef[:, 0], ef[:, 1]
            Uin = Uf[e, f]  # (K, 4, n)
            K, _, n = Uin.shape
            Uv = np.moveaxis(Uin, 1, 0).reshape(4, -1)
            nrm = np.moveaxis(self.face_n[e, f], 1, 0).reshape(2, -1)
            wall_v = wall_rho = None
            if bc.kind == "jet_wall":
                if self.actuation is None or not self.actuation.resolves(bc.jet):
                    raise ConfigurationError(f"unresolvable jet reference {bc.jet!r}")
                xy = np.moveaxis(self.face_X[e, f], 1, 0).reshape(2, -1)
                wall_v, wall_rho = self.actuation.wall_state(bc.jet, xy, nrm, Uv, t)
            g = ghost_state(bc, Uv, nrm, self.gas, wall_v, wall_rho, t)
            gc = g
            if bc.kind in WALL_KINDS:
                # the convective flux sees a slip mirror; no-slip enters through the viscous terms
                gc = slip_mirror(Uv, nrm)
                if wall_v is not None:
                    active = (wall_v[0] != 0) | (wall_v[1] != 0)
                    gc = np.where(active, g, gc)
            out[tag] = (e, f, Uin, np.moveaxis(g.reshape(4, K, n), 0, 1), bc,
                        np.moveaxis(gc.reshape(4, K, n), 0, 1))
        return out

    # BR1 gradients -------------------------------------------------------------------
    def gradients(self, U, t=0.0, _bdata=None, _Uf=None):
        ref = self.ref
        D, w = ref.diff_matrix, ref.weights
        Uf = _face_traces(U) if _Uf is None else _Uf
        bdata = self._boundary_data(U, Uf, t) if _bdata is None else _bdata
        Uhat = Uf.copy()
        c = self.conf
        if len(c):
            eL, fL, eR, fR, fl = c.T
            fl = fl.astype(bool)
            UL, UR = Uf[eL, fL], _flip_rows(Uf[eR, fR], fl)
            avg = 0.5 * (UL + UR)
            Uhat[eL, fL] = avg
            Uhat[eR, fR] = _flip_rows(avg, fl)
        m = self.mort
        if len(m):
            ec, fc, e0, e1, ff, fl = m.T
            fl = fl.astype(bool)
            Uc = Uf[ec, fc]
            acc = 0.0
            for k, ek in enumerate((e0, e1)):
                Uh = np.einsum("ab,kvb->kva", ref.to_half[k], Uc)
                Ufine = _flip_rows(Uf[ek, ff], fl)
                avg = 0.5 * (Uh + Ufine)
                Uhat[ek, ff] = _flip_rows(avg, fl)
                acc = acc + np.einsum("ab,kvb->kva", ref.from_half[k], avg)
            Uhat[ec, fc] = acc
        for tag, (e, f, Uin, G, bc, _) in bdata.items():
            Uhat[e, f] = 0.5 * (Uin + G)

        Ja1, Ja2 = self.Ja1, self.Ja2
        grads = []
        for d in (0, 1):
            vol = D @ (Ja1[:, d:d + 1] * U) + (Ja2[:, d:d + 1] * U) @ D.T
            corr = (Uhat - Uf) * self.face_n[:, :, d:d + 1, :] * self.face_s[:, :, None, :]
            vol[:, :, 0, :] += corr[:, 0] / w[0]
            vol[:, :, -1, :] += corr[:, 1] / w[-1]
            vol[:, :, :, 0] += corr[:, 2] / w[0]
            vol[:, :, :, -1] += corr[:, 3] / w[-1]
            grads.append(vol / self.J[:, None])
        return grads[0], grads[1]

    # shock sensor --------------------------------------------------------------------
    def indicator(self, U):
        from ..mesh import lohner_indicator
        return lohner_indicator(self.mesh, self.ref, U[:, 0], self.lohner_epsilon, X=self.X)

    def blending(self, U):
        sc = self.shock_capturing
        if sc is None:
            return None
        alpha = sc.alpha(self.indicator(U))
        if sc.smooth_neighbors and np.any(alpha > 0):
            a2 = alpha.copy()
            for e, f, e2, f2, _ in self.conf:
                a2[e] = max(a2[e], 0.5 * alpha[e2])
                a2[e2] = max(a2[e2], 0.5 * alpha[e])
            for ec, fc, e0, e1, _, _ in self.mort:
                for ek in (e0, e1):
                    a2[ec] = max(a2[ec], 0.5 * alpha[ek])
                    a2[ek] = max(a2[ek], 0.5 * alpha[ec])
            alpha = a2
        return alpha

    def _subcell_volume(self, U, idx):
        """First-order Rusanov divergence on GLL subcells for elements ``idx``."""
        g = self.gas
        w = self.ref.weights
        Us = U[idx]
        Uv = np.moveaxis(Us, 1, 0)  # (4, k, n, n)
        F, G = gd.inviscid_flux(Uv, g, check=False)
        out = np.zeros_like(Us)
        for direction in (0, 1):
            Ja = (self.Ja1 if direction == 0 else self.Ja2)[idx]
            sub = (self.sub1 if direction == 0 else self.sub2)[idx]
            ft = F * Ja[:, 0][None] + G * Ja[:, 1][None]  # contravariant flux (4,k,n,n)
            if direction == 0:
                Um, Up = Uv[:, :, :-1, :], Uv[:, :, 1:, :]
                m = sub[:, :, 1:-1, :]
                edge_lo, edge_hi = ft[:, :, :1, :], ft[:, :, -1:, :]
            else:
                Um, Up = Uv[:, :, :, :-1], Uv[:, :, :, 1:]
                m = sub[:, :, :, 1:-1]
                edge_lo, edge_hi = ft[:, :, :, :1], ft[:, :, :, -1:]
            s = np.sqrt(m[:, 0] ** 2 + m[:, 1] ** 2)
            nrm = (m[:, 0] / s, m[:, 1] / s)
            fs = gd.rusanov_flux(Um, Up, nrm, g, check=False) * s[None]
            ax = 2 + direction
            fbar = np.concatenate([edge_lo, fs, edge_hi], axis=ax)
            diff = np.diff(fbar, axis=ax)
            wshape = (1, 1, -1, 1) if direction == 0 else (1, 1, 1, -1)
            out += np.moveaxis(diff / w.reshape(wshape), 0, 1)
        return out

    # residual ------------------------------------------------------------------------
    def residual(self, U, t=0.0, check=True):
        """dU/dt for nodal solution U."""
        if check:
            self.check(U)
        ref = self.ref
        g = self.gas
        D, w = ref.diff_matrix, ref.weights
        Uv = np.moveaxis(U, 1, 0)
        Uf = _face_traces(U)
        bdata = self._boundary_data(U, Uf, t)
        viscous = g.mu > 0

        F, G = gd.inviscid_flux(Uv, g, check=False)
        F = np.moveaxis(F, 0, 1)
        G = np.moveaxis(G, 0, 1)
        if viscous:
            Sx, Sy = self.gradients(U, t, bdata, Uf)
            Fv, Gv = gd.viscous_flux(Uv, np.moveaxis(Sx, 1, 0), np.moveaxis(Sy, 1, 0), g)
            Fv = np.moveaxis(Fv, 0, 1)
            Gv = np.moveaxis(Gv, 0, 1)
            Svf = (_face_traces(Sx), _face_traces(Sy))
        Ja1, Ja2 = self.Ja1, self.Ja2

        def contravariant(A, B):
            f1 = A * Ja1[:, 0:1] + B * Ja1[:, 1:2]
            f2 = A * Ja2[:, 0:1] + B * Ja2[:, 1:2]
            return f1, f2

        def divergence(f1, f2):
            return D @ f1 + f2 @ D.T

        fi1, fi2 = contravariant(F, G)
        vol_inv = divergence(fi1, fi2)
        alpha = self.blending(U)
        self.last_alpha = alpha
        if alpha is not None and np.any(alpha > 0):
            idx = np.nonzero(alpha > 0)[0]
            a = alpha[idx][:, None, None, None]
            vol_inv[idx] = (1 - a) * vol_inv[idx] + a * self._subcell_volume(U, idx)
        if viscous:
            fv1, fv2 = contravariant(Fv, Gv)
            vol = vol_inv - divergence(fv1, fv2)
            h1, h2 = fi1 - fv1, fi2 - fv2
        else:
            vol = vol_inv
            h1, h2 = fi1, fi2

        # own outward normal flux times surface measure, (E, 4, 4, n)
        own = np.stack([-h1[:, :, 0, :], h1[:, :, -1, :], -h2[:, :, :, 0], h2[:, :, :, -1]], axis=1)
        star = np.empty_like(own)  # physical outward numerical flux per unit length
        n = self.face_n

        def visc_normal(e, f, Ustate=None, adiabatic=False):
            Ux = Uf[e, f] if Ustate is None else Ustate
            sx, sy = Svf[0][e, f], Svf[1][e, f]
            nn = n[e, f]  # (K, 2, n)
            fvx, fvy = gd.viscous_flux(np.moveaxis(Ux, 1, 0), np.moveaxis(sx, 1, 0),
                                       np.moveaxis(sy, 1, 0), g,
                                       (nn[:, 0], nn[:, 1]) if adiabatic else None)
            return np.moveaxis(fvx * nn[:, 0] + fvy * nn[:, 1], 0, 1)

        c = self.conf
        if len(c):
            eL, fL, eR, fR, fl = c.T
            fl = fl.astype(bool)
            UL, UR = Uf[eL, fL], _flip_rows(Uf[eR, fR], fl)
            nL = n[eL, fL]
            fs = np.moveaxis(gd.rusanov_flux(np.moveaxis(UL, 1, 0), np.moveaxis(UR, 1, 0),
                                             (nL[:, 0], nL[:, 1]), g, check=False), 0, 1)
            if viscous:
                fs = fs - 0.5 * (visc_normal(eL, fL) - _flip_rows(visc_normal(eR, fR), fl))
            star[eL, fL] = fs
            star[eR, fR] = -_flip_rows(fs, fl)
        m = self.mort
        if len(m):
            ec, fc, e0, e1, ff, fl = m.T
            fl = fl.astype(bool)
            Uc = Uf[ec, fc]
            nc = n[ec, fc]
            vc = visc_normal(ec, fc) if viscous else None
            acc = 0.0
            for k, ek in enumerate((e0, e1)):
                Uh = np.einsum("ab,kvb->kva", ref.to_half[k], Uc)
                Ufine = _flip_rows(Uf[ek, ff], fl)
                fs = np.moveaxis(gd.rusanov_flux(np.moveaxis(Uh, 1, 0), np.moveaxis(Ufine, 1, 0),
                                                 (nc[:, 0], nc[:, 1]), g, check=False), 0, 1)
                if viscous:
                    vh = np.einsum("ab,kvb->kva", ref.to_half[k], vc)
                    fs = fs - 0.5 * (vh - _flip_rows(visc_normal(ek, ff), fl))
                star[ek, ff] = -_flip_rows(fs, fl)
                acc = acc + np.einsum("ab,kvb->kva", ref.from_half[k], fs)
            star[ec, fc] = acc
        for tag, (e, f, Uin, Gh, bc, Gc) in bdata.items():
            nn = n[e, f]
            fs = np.moveaxis(gd.rusanov_flux(np.moveaxis(Uin, 1, 0), np.moveaxis(Gc, 1, 0),
                                             (nn[:, 0], nn[:, 1]), g, check=False), 0, 1)
            if viscous:
                if bc.kind in WALL_KINDS:
                    fs = fs - visc_normal(e, f, 0.5 * (Uin + Gh), adiabatic=True)
                else:
                    fs = fs - visc_normal(e, f)
            star[e, f] = fs

        corr = star * self.face_s[:, :, None, :] - own
        vol[:, :, 0, :] += corr[:, 0] / w[0]
        vol[:, :, -1, :] += corr[:, 1] / w[-1]
        vol[:, :, :, 0] += corr[:, 2] / w[0]
        vol[:, :, :, -1] += corr[:, 3] / w[-1]
        return -vol / self.J[:, None]

    # point sampling --------------------------------------------------------------------
    def locate(self, points, tol: float = 1e-9):
        """Element index and reference coordinates of each physical point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        corners = self.X[:, :, [0, -1, 0, -1], [0, 0, -1, -1]]  # (E, 2, 4)
        lo = corners.min(axis=2)
        hi = corners.max(axis=2)
        out = []
        for k, (px, py) in enumerate(pts):
            cand = np.nonzero((lo[:, 0] - tol <= px) & (px <= hi[:, 0] + tol)
                              & (lo[:, 1] - tol <= py) & (py <= hi[:, 1] + tol))[0]
            found = None
            for e in cand:
                xi, eta = self._invert(e, px, py)
                if abs(xi) <= 1 + 1e-8 and abs(eta) <= 1 + 1e-8:
                    found = (int(e), float(np.clip(xi, -1, 1)), float(np.clip(eta, -1, 1)))
                    break
            if found is None:
                raise ProbeError(f"probe {k} at ({px:.6g}, {py:.6g}) lies outside the mesh")
            out.append(found)
        return out

    def _invert(self, e, px, py):
        c = self.X[e][:, [0, -1, 0, -1], [0, 0, -1, -1]]  # (2, 4) bilinear corners
        xi = eta = 0.0
        for _ in range(30):
            N = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                                 (1 - xi) * (1 + eta), (1 + xi) * (1 + eta)])
            dxi = 0.25 * np.array([-(1 - eta), (1 - eta), -(1 + eta), (1 + eta)])
            deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 - xi), (1 + xi)])
            r = c @ N - (px, py)
            Jm = np.stack([c @ dxi, c @ deta], axis=1)
            step = np.linalg.solve(Jm, r)
            xi -= step[0]
            eta -= step[1]
            if np.abs(step).max() < 1e-14:
                break
        return xi, eta

    def sampler(self, points):
        """Precomputed interpolation: returns f(U, var=None) -> values at points."""
        loc = self.locate(points)
        elems = np.array([l[0] for l in loc])
        Lx = np.stack([interpolation_matrix(self.ref.nodes, [l[1]])[0] for l in loc])
        Ly = np.stack([interpolation_matrix(self.ref.nodes, [l[2]])[0] for l in loc])

        def sample(field):
            # field: (E, ..., n, n)
            f = field[elems]
            return np.einsum("ki,kj,k...ij->k...", Lx, Ly, f)

        return sample


class ProbeError(ValueError):
    pass
