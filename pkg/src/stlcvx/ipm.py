"""Primal-dual interior-point method on the homogeneous self-dual embedding.

Standard form (after stacking and equilibration)::

    minimize 1/2 x'Px + q'x   s.t.  Ax + s = b,  s in K

with ``K`` a product of the zero cone (equalities), the nonnegative orthant
and second-order cones. Search directions use Nesterov-Todd scaling and a
Mehrotra predictor-corrector; the embedding variables ``tau``/``kappa``
certify infeasibility when ``tau`` vanishes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import qp


class _Cones:
    """Row layout ``[zero | orthant | soc groups]`` and cone algebra."""

    def __init__(self, m_zero, m_orth, soc_dims):
        self.m0 = m_zero
        self.ml = m_orth
        self.off = m_zero + m_orth
        self.groups = []          # (row index matrix (k, d)) per dimension
        start = self.off
        by_dim = {}
        for d in soc_dims:
            by_dim.setdefault(int(d), []).append(np.arange(start, start + d))
            start += d
        for d in sorted(by_dim):
            self.groups.append(np.array(by_dim[d], dtype=np.int64))
        self.m = start
        self.degree = m_orth + len(soc_dims)

    @property
    def orth(self):
        return slice(self.m0, self.off)

    def identity(self):
        e = np.zeros(self.m)
        e[self.orth] = 1.0
        for idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def min_eig(self, u):
        """Smallest 'eigenvalue' of ``u`` over the non-zero cones."""
        vals = [np.min(u[self.orth], initial=np.inf)]
        for idx in self.groups:
            blk = u[idx]
            vals.append(np.min(blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1),
                               initial=np.inf))
        return min(vals)

    def max_step(self, u, du):
        """Largest ``a`` with ``u + a du`` in the cone (capped at 1e10)."""
        amax = 1e10
        o = self.orth
        neg = du[o] < 0
        if np.any(neg):
            amax = min(amax, float(np.min(-u[o][neg] / du[o][neg])))
        for idx in self.groups:
            x = u[idx]
            d = du[idx]
            a = d[:, 0] ** 2 - np.sum(d[:, 1:] ** 2, axis=1)
            b = 2.0 * (x[:, 0] * d[:, 0] - np.sum(x[:, 1:] * d[:, 1:], axis=1))
            c = np.maximum(x[:, 0] ** 2 - np.sum(x[:, 1:] ** 2, axis=1), 0.0)
            steps = np.full(len(x), np.inf)
            # smallest positive root of a t^2 + b t + c
            disc = b * b - 4 * a * c
            lin = np.abs(a) < 1e-300
            with np.errstate(divide="ignore", invalid="ignore"):
                r_lin = np.where(lin & (b < 0), -c / b, np.inf)
                sq = np.sqrt(np.maximum(disc, 0.0))
                r1 = (-b - sq) / (2 * a)
                r2 = (-b + sq) / (2 * a)
            for r in (r1, r2):
                ok = ~lin & (disc >= 0) & (r > 0)
                steps = np.where(ok, np.minimum(steps, r), steps)
            steps = np.minimum(steps, r_lin)
            # the t-component must also stay nonnegative
            with np.errstate(divide="ignore", invalid="ignore"):
                r_t = np.where(d[:, 0] < 0, -x[:, 0] / d[:, 0], np.inf)
            steps = np.minimum(steps, r_t)
            if steps.size:
                amax = min(amax, float(np.min(steps)))
        return max(amax, 0.0)


class _Scaling:
    """Nesterov-Todd scaling point ``W`` with ``W z = W^{-1} s = lambda``."""

    def __init__(self, cones, s, z):
        self.cones = cones
        o = cones.orth
        self.w = np.sqrt(s[o] / z[o])
        self.soc = []
        for idx in cones.groups:
            sb, zb = s[idx], z[idx]
            sj = np.sqrt(np.maximum(sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1), 1e-300))
            zj = np.sqrt(np.maximum(zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1), 1e-300))
            sn = sb / sj[:, None]
            zn = zb / zj[:, None]
            gamma = np.sqrt(np.maximum((1.0 + np.sum(sn * zn, axis=1)) / 2.0, 1e-300))
            zjn = zn.copy()
            zjn[:, 1:] *= -1.0
            wbar = (sn + zjn) / (2.0 * gamma[:, None])
            eta = np.sqrt(sj / zj)
            self.soc.append((wbar, eta))
        self.lam = self.apply(z)

    def _soc_apply(self, wbar, eta, v, inverse):
        w0 = wbar[:, 0]
        w1 = wbar[:, 1:]
        t = np.sum(w1 * v[:, 1:], axis=1)
        out = np.empty_like(v)
        if inverse:
            out[:, 0] = w0 * v[:, 0] - t
            out[:, 1:] = v[:, 1:] + ((-v[:, 0] + t / (1.0 + w0))[:, None]) * w1
            return out / eta[:, None]
        out[:, 0] = w0 * v[:, 0] + t
        out[:, 1:] = v[:, 1:] + ((v[:, 0] + t / (1.0 + w0))[:, None]) * w1
        return out * eta[:, None]

    def apply(self, v, inverse=False):
        c = self.cones
        out = np.zeros_like(v)
        o = c.orth
        out[o] = v[o] / self.w if inverse else v[o] * self.w
        for idx, (wbar, eta) in zip(c.groups, self.soc):
            out[idx] = self._soc_apply(wbar, eta, v[idx], inverse)
        return out

    def hessian_blocks(self):
        """Entries of ``W'W`` for the KKT (orthant diagonal, SOC dense blocks)."""
        blocks = []
        for wbar, eta in self.soc:
            d = wbar.shape[1]
            J = -np.eye(d)
            J[0, 0] = 1.0
            H = 2.0 * wbar[:, :, None] * wbar[:, None, :] - J[None]
            blocks.append(H * (eta ** 2)[:, None, None])
        return self.w ** 2, blocks


def _jordan(cones, u, v):
    out = np.zeros_like(u)
    o = cones.orth
    out[o] = u[o] * v[o]
    for idx in cones.groups:
        a, b = u[idx], v[idx]
        blk = np.empty_like(a)
        blk[:, 0] = np.sum(a * b, axis=1)
        blk[:, 1:] = a[:, :1] * b[:, 1:] + b[:, :1] * a[:, 1:]
        out[idx] = blk
    return out


def _jordan_div(cones, lam, v):
    """Solve ``lam o x = v`` for ``x``."""
    out = np.zeros_like(v)
    o = cones.orth
    out[o] = v[o] / lam[o]
    for idx in cones.groups:
        l, w = lam[idx], v[idx]
        det = l[:, 0] ** 2 - np.sum(l[:, 1:] ** 2, axis=1)
        x0 = (l[:, 0] * w[:, 0] - np.sum(l[:, 1:] * w[:, 1:], axis=1)) / det
        blk = np.empty_like(w)
        blk[:, 0] = x0
        blk[:, 1:] = (w[:, 1:] - x0[:, None] * l[:, 1:]) / l[:, :1]
        out[idx] = blk
    return out


def _standard_form(form):
    """Turn a stacked ``M z in C`` form into ``A x + s = b`` rows.

    Returns ``(A, b, cones, rows, signs)``: standard row ``i`` is
    ``signs[i]`` times stacked row ``rows[i]``, which maps duals back.
    """
    M = sp.csr_matrix(form.M)
    eq = np.flatnonzero(form.lo == form.hi)
    box = np.setdiff1d(np.arange(form.m_lin), eq)
    lo_rows = box[np.isfinite(form.lo[box])]
    hi_rows = box[np.isfinite(form.hi[box])]
    cone_rows = np.arange(form.m_lin, form.m)
    rows = np.concatenate([eq, lo_rows, hi_rows, cone_rows])
    signs = np.concatenate([np.ones(eq.size), -np.ones(lo_rows.size),
                            np.ones(hi_rows.size), -np.ones(cone_rows.size)])
    A = sp.diags(signs) @ M[rows]
    b = np.concatenate([form.lo[eq], -form.lo[lo_rows], form.hi[hi_rows], form.h])
    cones = _Cones(eq.size, lo_rows.size + hi_rows.size, form.cone_dims)
    return sp.csr_matrix(A), b, cones, rows, signs


class InteriorPoint:
    """Homogeneous self-dual IPM on an equilibrated stacked problem."""

    def __init__(self, problem, scale_iterations=25, static_reg=1e-8,
                 refine_steps=3):
        self.problem = problem
        self.form = qp.stack(problem)
        self.scaled, self.scaling = qp.equilibrate(self.form, scale_iterations)
        A, b, cones, rows, signs = _standard_form(self.scaled)
        self.A = A
        self.b = b
        self.cones = cones
        self.rows = rows
        self.signs = signs
        self.P = self.scaled.P
        self.q = self.scaled.c
        self.reg = static_reg
        self.refine_steps = refine_steps
        self._pattern()

    # -- KKT -----------------------------------------------------------
    def _pattern(self):
        n, c = self.q.size, self.cones
        A = sp.coo_matrix(self.A)
        r = [np.arange(n), A.row + n, A.col]
        cidx = [np.arange(n), A.col, A.row + n]
        # H block: orthant + zero diagonal, then dense SOC blocks
        diag_rows = np.arange(c.off) + n
        r.append(diag_rows)
        cidx.append(diag_rows)
        for idx in c.groups:
            d = idx.shape[1]
            rr = np.repeat(idx, d, axis=1) + n
            cc = np.tile(idx, (1, d)) + n
            r.append(rr.ravel())
            cidx.append(cc.ravel())
        self._kr = np.concatenate(r)
        self._kc = np.concatenate(cidx)
        self._adata = A.data
        self._dim = n + c.m

    def _factor(self, Wsc):
        c = self.cones
        w2, blocks = Wsc.hessian_blocks()
        hdiag = np.concatenate([np.zeros(c.m0), w2])
        vals = [self.P + self.reg, self._adata, self._adata, -(hdiag + self.reg)]
        for H in blocks:
            d = H.shape[1]
            vals.append(-(H + self.reg * np.eye(d)[None]).ravel())
        data = np.concatenate(vals)
        K = sp.csc_matrix((data, (self._kr, self._kc)), shape=(self._dim, self._dim))
        # exact operator (without the static regularization) for refinement
        vals[0] = self.P
        vals[3] = -hdiag
        for i, H in enumerate(blocks):
            vals[4 + i] = -H.ravel()
        K0 = sp.csc_matrix((np.concatenate(vals), (self._kr, self._kc)),
                           shape=(self._dim, self._dim))
        try:
            lu = spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError:
            lu = spla.splu(K, permc_spec="COLAMD")
        return lu, K0

    def _kkt_solve(self, lu, K0, rhs):
        sol = lu.solve(rhs)
        for _ in range(self.refine_steps):
            res = rhs - K0 @ sol
            if np.max(np.abs(res)) <= 1e-14 * (1 + np.max(np.abs(rhs))):
                break
            sol = sol + lu.solve(res)
        return sol

    # -- main loop -----------------------------------------------------
    def _initial_point(self):
        n, c = self.q.size, self.cones
        e = c.identity()
        Wsc = _Scaling.__new__(_Scaling)
        Wsc.cones = c
        Wsc.w = np.ones(c.ml)
        Wsc.soc = []
        for idx in c.groups:
            wbar = np.zeros(idx.shape)
            wbar[:, 0] = 1.0
            Wsc.soc.append((wbar, np.ones(idx.shape[0])))
        lu, K0 = self._factor(Wsc)
        # primal: min 1/2 x'Px + 1/2 ||s||^2 with Ax + s = b
        sol = self._kkt_solve(lu, K0, np.concatenate([np.zeros(n), self.b]))
        x = sol[:n]
        s = -sol[n:]
        # dual: min 1/2 ||z||^2 with P x + A'z + q = 0
        sol = self._kkt_solve(lu, K0, np.concatenate([-self.q, np.zeros(c.m)]))
        z = sol[n:]
        s[:c.m0] = 0.0
        for vec in (s, z):
            a = c.min_eig(vec)
            if a < 1e-8:
                vec += (1.0 - min(a, 0.0)) * e
        return x, s, z

    def solve(self, tol=1e-8, max_iter=100, tol_infeasible=1e-8):
        n, c = self.q.size, self.cones
        A, b, P, q = self.A, self.b, self.P, self.q
        x, s, z = self._initial_point()
        self.history = []
        tau = kappa = 1.0
        e = c.identity()
        status = qp.MAX_ITER
        it = 0
        pres = dres = np.inf
        for it in range(1, max_iter + 1):
            Px = P * x
            xPx = float(x @ Px)
            r_x = Px + A.T @ z + q * tau
            r_z = A @ x + s - b * tau
            r_tau = kappa + q @ x + b @ z + xPx / tau

            # -- termination on the unscaled iterate
            pres, dres, gap, ok = self._check(x / tau, s / tau, z / tau, tol)
            self.history.append((pres, dres, gap, tau, kappa))
            if ok:
                status = qp.OPTIMAL
                break
            btz = float(b @ z)
            if btz < 0:
                cert = np.max(np.abs(self._unscale_rows_T(z)), initial=0.0) / -btz
                if cert <= tol_infeasible and tau < 1e-3 * kappa + 1e-6:
                    status = qp.INFEASIBLE
                    break
            qtx = float(q @ x)
            if qtx < 0 and tau < 1e-3 * kappa + 1e-6:
                ax = np.max(np.abs(A @ x + s), initial=0.0) / -qtx
                if ax <= tol_infeasible and np.max(np.abs(Px), initial=0.0) / -qtx <= tol_infeasible:
                    status = qp.UNBOUNDED
                    break

            mu = (float(s @ z) + tau * kappa) / (c.degree + 1)
            Wsc = _Scaling(c, s, z)
            lam = Wsc.lam
            try:
                lu, K0 = self._factor(Wsc)
            except RuntimeError:
                status = qp.MAX_ITER
                break
            # direction for the tau column
            sol2 = self._kkt_solve(lu, K0, np.concatenate([-q, b]))
            dx2, dz2 = sol2[:n], sol2[n:]

            def direction(eta, d_s, d_kappa):
                v = _jordan_div(c, lam, d_s)
                v[:c.m0] = 0.0
                rhs_z = -eta * r_z + Wsc.apply(v)
                sol1 = self._kkt_solve(lu, K0, np.concatenate([-eta * r_x, rhs_z]))
                dx1, dz1 = sol1[:n], sol1[n:]
                num = -eta * r_tau + d_kappa / tau - q @ dx1 - b @ dz1 - 2 * (Px @ dx1) / tau
                den = -kappa / tau + q @ dx2 + b @ dz2 + 2 * (Px @ dx2) / tau - xPx / tau ** 2
                dtau = num / den
                dx = dx1 + dtau * dx2
                dz = dz1 + dtau * dz2
                ds = -Wsc.apply(v) - Wsc.apply(Wsc.apply(dz))
                ds[:c.m0] = 0.0
                dkappa = -(d_kappa + kappa * dtau) / tau
                return dx, ds, dz, dtau, dkappa

            def steplen(ds, dz, dtau, dkappa):
                a = min(c.max_step(s, ds), c.max_step(z, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            # predictor
            dx, ds, dz, dtau, dkappa = direction(1.0, _jordan(c, lam, lam), tau * kappa)
            a_aff = min(1.0, steplen(ds, dz, dtau, dkappa))
            sigma = (1.0 - a_aff) ** 3
            # corrector
            ds_s = Wsc.apply(ds, inverse=True)
            dz_s = Wsc.apply(dz)
            d_s = _jordan(c, lam, lam) + _jordan(c, ds_s, dz_s) - sigma * mu * e
            d_k = tau * kappa + dtau * dkappa - sigma * mu
            dx, ds, dz, dtau, dkappa = direction(1.0 - sigma, d_s, d_k)
            a = min(1.0, 0.99 * steplen(ds, dz, dtau, dkappa))
            x = x + a * dx
            s = s + a * ds
            z = z + a * dz
            tau = tau + a * dtau
            kappa = kappa + a * dkappa
            s[:c.m0] = 0.0
            if not (np.all(np.isfinite(x)) and np.isfinite(tau)):
                raise qp.SubproblemFailure("interior-point iterate diverged")
        return self._solution(x, s, z, tau, status, pres, dres, it)

    # -- helpers -------------------------------------------------------
    def _unscale_rows_T(self, z):
        """``A'z`` mapped back to the original variable units."""
        return (self.A.T @ z) / self.scaling.D

    def _stacked_dual(self, z):
        """Map standard-form duals to stacked-row duals (``P x + c + M'y = 0``)."""
        y = np.zeros(self.form.m)
        np.add.at(y, self.rows, self.signs * z)
        return y

    def _check(self, x, s, z, tol):
        sc = self.scaling
        form = self.form
        xu = sc.unscale_x(x)
        yu = sc.unscale_y(self._stacked_dual(z))
        Mx = form.M @ xu
        # primal: distance of M x from the constraint set
        v = Mx.copy()
        v[:form.m_lin] = np.clip(Mx[:form.m_lin], form.lo, form.hi)
        pres_lin = np.max(np.abs(Mx[:form.m_lin] - v[:form.m_lin]), initial=0.0)
        s_u = s / sc.E[self.rows]
        cone = slice(self.cones.off, self.cones.m)
        Mc = Mx[form.m_lin:]
        pres_cone = np.max(np.abs(-Mc + s_u[cone] - form.h), initial=0.0)
        pres = max(pres_lin, pres_cone)
        Px = form.P * xu
        Mty = form.M.T @ yu
        dres = np.max(np.abs(Px + form.c + Mty), initial=0.0)
        xPx = float(x @ (self.P * x))
        pobj = (0.5 * xPx + float(self.q @ x)) / sc.cost
        dobj = (-0.5 * xPx - float(self.b @ z)) / sc.cost
        gap = abs(pobj - dobj)
        scale_p = 1 + max(np.max(np.abs(Mx), initial=0.0), np.max(np.abs(form.h), initial=0.0),
                          np.max(np.abs(form.lo[np.isfinite(form.lo)]), initial=0.0),
                          np.max(np.abs(form.hi[np.isfinite(form.hi)]), initial=0.0))
        scale_d = 1 + max(np.max(np.abs(form.c), initial=0.0), np.max(np.abs(Px), initial=0.0),
                          np.max(np.abs(Mty), initial=0.0))
        ok = (pres <= tol * scale_p and dres <= tol * scale_d
              and np.isfinite(gap) and gap <= tol * (1 + min(abs(pobj), abs(dobj))))
        return pres, dres, gap, ok

    def _solution(self, x, s, z, tau, status, pres, dres, it):
        sc = self.scaling
        t = max(tau, 1e-300)
        xz = sc.unscale_x(x / t)
        y = sc.unscale_y(self._stacked_dual(z / t))
        return qp.ConicSolution(xz, status, float(pres), float(dres), it,
                                self.problem.objective(xz), y, 0.0)


def solve(problem, tol=1e-8, max_iter=100, **kwargs):
    return InteriorPoint(problem, **kwargs).solve(tol=tol, max_iter=max_iter)
