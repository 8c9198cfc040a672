"""Newton corrector and pseudo-arclength continuation in the rainfall rate.

The stationary coupled system is continued in the rainfall parameter with a
tangent predictor and a bordered Newton corrector, so branches are traced
through folds.  Arclength mixes the state and the parameter with the state
scaled by 1/sqrt(2N), making both contribute comparably to step lengths.
Folds are detected from sign changes of dA/ds between accepted points and
refined with a local quadratic model of A(s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import Operators
from .errors import NewtonDiverged, SingularJacobian
from .kinetics import ModelParams

NEWTON_BLOWUP = 1e8


def newton(fun, jac, x0: np.ndarray, tol: float = 1e-10,
           max_iter: int = 50):
    """Plain Newton iteration on a callable residual; returns (x, iterations).

    Raises NewtonDiverged on the iteration cap or on a runaway iterate and
    SingularJacobian when the direct solve fails.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    for it in range(max_iter + 1):
        r = np.atleast_1d(fun(x))
        nr = float(np.linalg.norm(r))
        if not math.isfinite(nr) or float(np.abs(x).max()) > NEWTON_BLOWUP:
            raise NewtonDiverged(f"iterate blew up at iteration {it}")
        if nr <= tol:
            return x, it
        if it == max_iter:
            break
        j = np.atleast_2d(jac(x))
        try:
            dx = np.linalg.solve(j, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        x += dx
    raise NewtonDiverged(
        f"no convergence in {max_iter} iterations (residual {nr:.3e})")


class StationaryResidual:
    """Residual and analytic Jacobian of the stationary coupled system.

    Unknowns are the concatenated node vectors u = (v, w).  Water boundary
    values are enforced as explicit constraint rows (and vegetation boundary
    values too in the local variant); the rainfall rate enters only the
    interior water rows.
    """

    def __init__(self, ops: Operators, params: ModelParams):
        self.ops = ops
        self.params = params
        n = ops.grid.n_nodes
        self.n_nodes = n
        self.n_unknowns = 2 * n
        self._lap = ops.laplacian.dense()
        if ops.variant == "local":
            self._mv = 0.5 * params.d_v * self._lap
        else:
            self._mv = params.d_v * (ops.dispersal.matrix - np.eye(n))
        self._mw = params.d_w * self._lap
        # Constraint rows: value pinned to zero there.
        self._v_pinned = np.zeros(n, dtype=bool)
        if ops.variant == "local":
            self._v_pinned[[0, -1]] = True
        self._w_pinned = np.zeros(n, dtype=bool)
        self._w_pinned[[0, -1]] = True

    def split(self, u: np.ndarray):
        n = self.n_nodes
        return u[:n], u[n:]

    def join(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.concatenate([v, w])

    def residual(self, u: np.ndarray, A: float) -> np.ndarray:
        v, w = self.split(u)
        growth = v * v * w
        rv = self._mv @ v + growth - self.params.B * v
        rw = self._mw @ w - growth - w + A
        rv[self._v_pinned] = v[self._v_pinned]
        rw[self._w_pinned] = w[self._w_pinned]
        return np.concatenate([rv, rw])

    def jacobian(self, u: np.ndarray, A: float) -> np.ndarray:
        n = self.n_nodes
        v, w = self.split(u)
        jvv = self._mv + np.diag(2.0 * v * w - self.params.B)
        jvw = np.diag(v * v)
        jwv = np.diag(-2.0 * v * w)
        jww = self._mw - np.diag(v * v + 1.0)
        for i in np.flatnonzero(self._v_pinned):
            jvv[i, :] = 0.0
            jvw[i, :] = 0.0
            jvv[i, i] = 1.0
        for i in np.flatnonzero(self._w_pinned):
            jwv[i, :] = 0.0
            jww[i, :] = 0.0
            jww[i, i] = 1.0
        top = np.hstack([jvv, jvw])
        bot = np.hstack([jwv, jww])
        return np.vstack([top, bot])

    def d_dA(self, u: np.ndarray, A: float) -> np.ndarray:
        out = np.zeros(self.n_unknowns)
        out[self.n_nodes:] = 1.0
        out[self.n_nodes:][self._w_pinned] = 0.0
        return out

    def free_mask(self) -> np.ndarray:
        return ~np.concatenate([self._v_pinned, self._w_pinned])

    def summarize(self, u: np.ndarray):
        """(max, integral mean, node mean) of the biomass component."""
        v = u[:self.n_nodes]
        weights = self.ops.grid.quad_weights
        return (float(v.max()),
                float(weights @ v) / (2.0 * self.ops.grid.half_width),
                float(v.mean()))


def solve_stationary(sr: StationaryResidual, A: float, guess: np.ndarray,
                     tol: float = 1e-10, max_iter: int = 50):
    """Newton-solve the stationary system at fixed rainfall."""
    return newton(lambda u: sr.residual(u, A),
                  lambda u: sr.jacobian(u, A), guess, tol, max_iter)


@dataclass(frozen=True)
class PalcControls:
    ds0: float = 0.01
    ds_min: float = 1e-6
    ds_max: float = 0.1
    point_cap: int = 20_000
    newton_tol: float = 1e-10
    corrector_cap: int = 8
    growth: float = 1.3
    grow_below: int = 4        # grow ds when the corrector took <= this
    direction: float = -1.0    # initial sign of dA/ds
    fold_cap: int | None = None


@dataclass
class BranchPoint:
    index: int
    A: float
    s: float
    max_v: float
    avg_v: float          # integral (trapezoid) mean over the habitat
    avg_v_nodes: float    # arithmetic node mean, emitted alongside
    tangent_A: float
    snapshot: np.ndarray
    snapshot_id: str
    stable: bool | None = None


@dataclass(frozen=True)
class Fold:
    s: float
    A: float
    after_index: int      # fold lies between this accepted point and the next


@dataclass
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    folds: list[Fold] = field(default_factory=list)
    termination: str = ""
    label: str = ""


def _scaled_dot(du1, da1, du2, da2, scale):
    return float(du1 @ du2) * scale + da1 * da2


def _tangent(sr: StationaryResidual, u, A, prev_u, prev_a, scale):
    """Unit tangent of the branch through (u, A), oriented like the previous."""
    n = sr.n_unknowns
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = sr.jacobian(u, A)
    m[:n, n] = sr.d_dA(u, A)
    m[n, :n] = prev_u * scale
    m[n, n] = prev_a
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    try:
        t = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(f"tangent system singular: {exc}") from exc
    norm = math.sqrt(_scaled_dot(t[:n], t[n], t[:n], t[n], scale))
    return t[:n] / norm, t[n] / norm


def _corrector(sr, u0, a0, tu, ta, ds, scale, tol, cap):
    """Newton on the bordered system; returns (u, A, iterations) or None."""
    u = u0 + ds * tu
    a = a0 + ds * ta
    for it in range(cap + 1):
        r = sr.residual(u, a)
        g = _scaled_dot(u - u0, a - a0, tu, ta, scale) - ds
        nr = float(np.linalg.norm(r))
        if not math.isfinite(nr) or float(np.abs(u).max()) > NEWTON_BLOWUP:
            return None
        if nr <= tol and abs(g) <= tol * max(1.0, abs(ds)):
            return u, a, it
        if it == cap:
            return None
        n = sr.n_unknowns
        m = np.zeros((n + 1, n + 1))
        m[:n, :n] = sr.jacobian(u, a)
        m[:n, n] = sr.d_dA(u, a)
        m[n, :n] = tu * scale
        m[n, n] = ta
        try:
            step = np.linalg.solve(m, -np.concatenate([r, [g]]))
        except np.linalg.LinAlgError:
            return None
        u = u + step[:n]
        a = a + step[n]
    return None


def _fold_quadratic(a0, ta0, a1, ta1, s0, s1):
    """Fold location from a quadratic model of A(s) between two points."""
    ds = s1 - s0
    if ds <= 0 or ta0 == ta1:
        return 0.5 * (a0 + a1)
    kappa = (ta1 - ta0) / ds
    delta = -ta0 / kappa
    return a0 + ta0 * delta + 0.5 * kappa * delta * delta


def _locate_fold(sr, u0, a0, tu, ta, ds_full, ta_end, scale, tol):
    """Refine a fold bracketed between arclength offsets 0 and ds_full.

    Secant iteration on dA/ds as a function of the arclength offset from the
    last pre-fold point, each evaluation being an actual corrector step plus
    a tangent solve.  Falls back to the quadratic estimate if a corrector
    refuses to converge inside the bracket.
    """
    d_lo, f_lo = 0.0, ta
    d_hi, f_hi = ds_full, ta_end
    best = None
    for _ in range(16):
        denom = f_hi - f_lo
        d_mid = (d_hi - f_hi * (d_hi - d_lo) / denom) if denom != 0.0 else None
        if d_mid is None or not (d_lo < d_mid < d_hi):
            d_mid = 0.5 * (d_lo + d_hi)
        res = _corrector(sr, u0, a0, tu, ta, d_mid, scale, tol, cap=12)
        if res is None:
            break
        u_m, a_m, _ = res
        try:
            _, ta_m = _tangent(sr, u_m, a_m, tu, ta, scale)
        except SingularJacobian:
            return float(a_m)
        best = float(a_m)
        if abs(ta_m) < 1e-10 or (d_hi - d_lo) < 1e-14:
            return best
        if (ta_m > 0) == (f_lo > 0):
            d_lo, f_lo = d_mid, ta_m
        else:
            d_hi, f_hi = d_mid, ta_m
    if best is not None:
        return best
    return _fold_quadratic(a0, ta, a0, ta_end, 0.0, ds_full)


def palc_continue(sr: StationaryResidual, A_start: float,
                  A_range: tuple[float, float], initial: np.ndarray,
                  controls: PalcControls = PalcControls(),
                  label: str = "branch") -> Branch:
    """Trace one solution branch by pseudo-arclength continuation.

    The initial vector must already solve the stationary system at A_start
    to the Newton tolerance.  The trace stops when the rainfall leaves
    A_range, the point cap or fold cap is reached, or the step size
    underflows after repeated corrector failures.
    """
    scale = 1.0 / sr.n_unknowns   # state inner-product weight 1/(2N)
    a_lo, a_hi = min(A_range), max(A_range)
    u = np.asarray(initial, dtype=float).copy()
    r0 = float(np.linalg.norm(sr.residual(u, A_start)))
    if r0 > controls.newton_tol:
        raise NewtonDiverged(
            f"initial point residual {r0:.3e} exceeds tolerance "
            f"{controls.newton_tol:.1e}; solve it first")

    branch = Branch(label=label)

    def record(u, a, s, ta) -> BranchPoint:
        if hasattr(sr, "summarize"):
            mx, avg, avg_nodes = sr.summarize(u)
        else:
            mx, avg, avg_nodes = float(u.max()), float(u.mean()), float(u.mean())
        point = BranchPoint(
            index=len(branch.points), A=float(a), s=float(s),
            max_v=mx, avg_v=avg, avg_v_nodes=avg_nodes,
            tangent_A=float(ta), snapshot=u.copy(),
            snapshot_id=f"{label}-p{len(branch.points):05d}")
        branch.points.append(point)
        return point

    tu, ta = _tangent(sr, u, A_start, np.zeros(sr.n_unknowns),
                      controls.direction, scale)
    a = A_start
    s = 0.0
    record(u, a, s, ta)
    ds = controls.ds0

    while True:
        if len(branch.points) >= controls.point_cap:
            branch.termination = "point_cap"
            break
        result = _corrector(sr, u, a, tu, ta, ds, scale,
                            controls.newton_tol, controls.corrector_cap)
        if result is None:
            ds *= 0.5
            if ds < controls.ds_min:
                branch.termination = "step_failure"
                break
            continue
        u_new, a_new, iters = result
        # Independent re-verification of the accepted solution.
        if float(np.linalg.norm(sr.residual(u_new, a_new))) > controls.newton_tol:
            ds *= 0.5
            if ds < controls.ds_min:
                branch.termination = "step_failure"
                break
            continue
        try:
            tu_new, ta_new = _tangent(sr, u_new, a_new, tu, ta, scale)
        except SingularJacobian:
            ds *= 0.5
            if ds < controls.ds_min:
                branch.termination = "step_failure"
                break
            continue
        s_new = s + ds
        if ta * ta_new < 0.0:
            fold_a = _locate_fold(sr, u, a, tu, ta, ds, ta_new, scale,
                                  controls.newton_tol)
            branch.folds.append(Fold(s=s + 0.5 * ds, A=float(fold_a),
                                     after_index=len(branch.points) - 1))
        u, a, s, tu, ta = u_new, a_new, s_new, tu_new, ta_new
        record(u, a, s, ta)
        if (controls.fold_cap is not None
                and len(branch.folds) >= controls.fold_cap):
            branch.termination = "fold_count_cap"
            break
        if not (a_lo <= a <= a_hi):
            branch.termination = "parameter_exit"
            break
        if iters <= controls.grow_below:
            ds = min(ds * controls.growth, controls.ds_max)
    return branch


def stability_flag(sr: StationaryResidual, A: float, u: np.ndarray,
                   threshold: float = -1e-8, max_iter: int = 3000,
                   tol: float = 1e-9, dense_fallback_limit: int = 1500):
    """Sign of the rightmost eigenvalue of the linearization, or None.

    Power iteration runs first on the free-unknown Jacobian shifted by its
    infinity norm.  That settles quickly when the dominant shifted
    eigenvalue is real and separated, but the coupled Jacobian is strongly
    nonsymmetric and its shifted spectrum is often clustered or led by a
    complex pair; in that case the iteration cannot settle and the rightmost
    eigenvalue is taken from a dense eigensolve instead (cheap at the
    problem sizes used here).  None is returned only when both routes are
    unavailable; the flag never blocks continuation.
    """
    free = sr.free_mask()
    j = sr.jacobian(u, A)[np.ix_(free, free)]
    sigma = float(np.abs(j).sum(axis=1).max())
    m = j + sigma * np.eye(j.shape[0])
    x = np.ones(m.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(max_iter):
        y = m @ x
        rho = float(x @ y)
        resid = float(np.linalg.norm(y - rho * x))
        if resid <= tol * max(abs(rho), 1.0):
            return bool(rho - sigma < threshold)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return None
        x = y / ny
    if j.shape[0] <= dense_fallback_limit:
        rightmost = float(np.linalg.eigvals(j).real.max())
        return bool(rightmost < threshold)
    return None


def rightmost_eigenvalue_dense(sr: StationaryResidual, A: float,
                               u: np.ndarray) -> float:
    """Dense-eigensolve oracle for the rightmost Jacobian eigenvalue."""
    free = sr.free_mask()
    j = sr.jacobian(u, A)[np.ix_(free, free)]
    return float(np.linalg.eigvals(j).real.max())
