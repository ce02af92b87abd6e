"""Polytope machinery for feasible-set analysis of the longitudinal MPC.

Sets live in the 3-D state space (spacing deviation, speed difference,
acceleration). H-representation is primary; degenerate (lower-dimensional)
sets carry explicit equality rows, which matters because the terminal sets
of interest are a point and a line segment. Vertex enumeration and hulls are
exact at this dimension.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

DEDUP_TOL = 1e-9
FEAS_TOL = 1e-9


@dataclass
class InputInterval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError("input interval is empty")


class Polytope:
    """Convex set {x : A x <= b, A_eq x = b_eq} in R^3."""

    def __init__(self, A=None, b=None, A_eq=None, b_eq=None, dim: int = 3):
        self.A = np.zeros((0, dim)) if A is None else np.atleast_2d(np.asarray(A, float))
        self.b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, float))
        self.A_eq = np.zeros((0, dim)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
        self.b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, float))
        self.dim = dim
        if self.A.shape[0] != self.b.shape[0] or (self.A.size and self.A.shape[1] != dim):
            raise ValueError("inequality rows inconsistent")
        if self.A_eq.shape[0] != self.b_eq.shape[0] or (self.A_eq.size and self.A_eq.shape[1] != dim):
            raise ValueError("equality rows inconsistent")
        self._vertices: np.ndarray | None = None

    # -- constructors

    @classmethod
    def from_box(cls, lower, upper) -> "Polytope":
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        dim = lower.shape[0]
        eye = np.eye(dim)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]), dim=dim)

    @classmethod
    def from_point(cls, point) -> "Polytope":
        point = np.asarray(point, float)
        return cls(A_eq=np.eye(point.shape[0]), b_eq=point, dim=point.shape[0])

    @classmethod
    def from_vertices(cls, points: np.ndarray) -> "Polytope":
        """Hull of a point cloud; detects the affine dimension and emits
        equality rows for the flat directions."""
        points = np.atleast_2d(np.asarray(points, float))
        dim = points.shape[1]
        center = points.mean(axis=0)
        spread = points - center
        u, s, vt = np.linalg.svd(spread, full_matrices=True)
        scale = max(1.0, float(np.max(np.abs(points))))
        keep = s > 1e-9 * scale
        rank = int(np.sum(keep))
        basis = vt[:rank].T                    # dim x rank
        normals = vt[rank:]                    # flat directions
        A_eq = normals
        b_eq = normals @ center
        if rank == 0:
            poly = cls(A_eq=np.eye(dim), b_eq=center, dim=dim)
            poly._vertices = center[None, :]
            return poly
        coords = spread @ basis                # project to the affine hull
        if rank == 1:
            t_lo, t_hi = float(np.min(coords[:, 0])), float(np.max(coords[:, 0]))
            A = np.vstack([basis[:, 0], -basis[:, 0]])
            b = np.array([t_hi + basis[:, 0] @ center, -(t_lo + basis[:, 0] @ center)])
            poly = cls(A, b, A_eq, b_eq, dim)
            poly._vertices = np.vstack([center + t_lo * basis[:, 0],
                                        center + t_hi * basis[:, 0]])
            return poly
        try:
            hull = ConvexHull(coords)
        except QhullError as exc:
            raise ValueError(f"degenerate point cloud for rank {rank}: {exc}") from exc
        # lift facet inequalities back to R^dim: n.y <= c with y = basis'(x-center)
        facet_n = hull.equations[:, :rank]
        facet_c = -hull.equations[:, rank]
        A = facet_n @ basis.T
        b = facet_c + A @ center
        poly = cls(A, b, A_eq, b_eq, dim)
        poly._vertices = coords[hull.vertices] @ basis.T + center
        return poly

    # -- queries

    def copy(self) -> "Polytope":
        p = Polytope(self.A.copy(), self.b.copy(), self.A_eq.copy(),
                     self.b_eq.copy(), self.dim)
        p._vertices = None if self._vertices is None else self._vertices.copy()
        return p

    def contains(self, x, tol: float = 1e-7):
        """Membership test; x may be one point or a stack of points."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        ok = np.ones(pts.shape[0], dtype=bool)
        if self.A.shape[0]:
            ok &= np.all(pts @ self.A.T <= self.b + tol, axis=1)
        if self.A_eq.shape[0]:
            ok &= np.all(np.abs(pts @ self.A_eq.T - self.b_eq) <= tol, axis=1)
        return bool(ok[0]) if single else ok

    def is_empty(self, tol: float = FEAS_TOL) -> bool:
        res = linprog(np.zeros(self.dim),
                      A_ub=self.A if self.A.shape[0] else None,
                      b_ub=self.b if self.A.shape[0] else None,
                      A_eq=self.A_eq if self.A_eq.shape[0] else None,
                      b_eq=self.b_eq if self.A_eq.shape[0] else None,
                      bounds=[(None, None)] * self.dim, method="highs")
        return res.status == 2

    def support(self, direction) -> float:
        """max direction.x over the set; inf when unbounded, -inf when empty."""
        res = linprog(-np.asarray(direction, float),
                      A_ub=self.A if self.A.shape[0] else None,
                      b_ub=self.b if self.A.shape[0] else None,
                      A_eq=self.A_eq if self.A_eq.shape[0] else None,
                      b_eq=self.b_eq if self.A_eq.shape[0] else None,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 2:
            return -math.inf
        if res.status == 3:
            return math.inf
        return float(-res.fun)

    def extent(self, axis: int) -> tuple[float, float]:
        e = np.zeros(self.dim)
        e[axis] = 1.0
        return (-self.support(-e), self.support(e))

    def vertices(self) -> np.ndarray:
        """Vertex enumeration through the affine hull of the equality rows.

        Assumes the set is bounded (everything in this pipeline is clipped to
        the state box); an unbounded 1-D set is detected and rejected.
        """
        if self._vertices is not None:
            return self._vertices
        if self.A_eq.shape[0]:
            x_p, *_ = np.linalg.lstsq(self.A_eq, self.b_eq, rcond=None)
            if np.max(np.abs(self.A_eq @ x_p - self.b_eq), initial=0.0) > 1e-7:
                self._vertices = np.zeros((0, self.dim))
                return self._vertices
            u, s, vt = np.linalg.svd(self.A_eq)
            rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if s.size else 1.0)))
            basis = vt[rank:].T
        else:
            x_p = np.zeros(self.dim)
            basis = np.eye(self.dim)
        d = basis.shape[1]
        if d == 0:
            pts = x_p[None, :]
            self._vertices = pts if self.contains(x_p, 1e-7) else np.zeros((0, self.dim))
            return self._vertices
        G = self.A @ basis
        h = self.b - self.A @ x_p
        verts_z: list[np.ndarray] = []
        m = G.shape[0]
        if d == 1:
            lo, hi = -math.inf, math.inf
            for i in range(m):
                gi = float(G[i, 0])
                if abs(gi) < 1e-12:
                    if h[i] < -1e-9:
                        lo, hi = 1.0, 0.0
                        break
                elif gi > 0:
                    hi = min(hi, h[i] / gi)
                else:
                    lo = max(lo, h[i] / gi)
            if lo <= hi and math.isfinite(lo) and math.isfinite(hi):
                verts_z = [np.array([lo]), np.array([hi])]
            elif lo <= hi:
                raise ValueError("unbounded set has no vertex representation")
        else:
            for idx in itertools.combinations(range(m), d):
                M = G[list(idx)]
                if abs(np.linalg.det(M)) < 1e-10:
                    continue
                z = np.linalg.solve(M, h[list(idx)])
                if np.all(G @ z <= h + 1e-7):
                    verts_z.append(z)
        if not verts_z:
            self._vertices = np.zeros((0, self.dim))
            return self._vertices
        Z = np.vstack(verts_z)
        # dedupe
        keep: list[int] = []
        for i in range(Z.shape[0]):
            if all(np.linalg.norm(Z[i] - Z[j]) > 1e-7 for j in keep):
                keep.append(i)
        self._vertices = Z[keep] @ basis.T + x_p
        return self._vertices

    # -- operations

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.A, other.A]),
                        np.concatenate([self.b, other.b]),
                        np.vstack([self.A_eq, other.A_eq]),
                        np.concatenate([self.b_eq, other.b_eq]), self.dim)

    def reduce(self) -> "Polytope":
        """Normalize rows, drop duplicates and LP-redundant inequalities."""
        A, b = self.A, self.b
        if A.shape[0] == 0 or self.is_empty():
            return self.copy()
        norms = np.linalg.norm(A, axis=1)
        good = norms > 1e-12
        A, b, norms = A[good], b[good], norms[good]
        A = A / norms[:, None]
        b = b / norms
        keep: list[int] = []
        for i in range(A.shape[0]):
            dup = any(np.linalg.norm(A[i] - A[j]) < DEDUP_TOL
                      and abs(b[i] - b[j]) < DEDUP_TOL for j in keep)
            if not dup:
                keep.append(i)
        A, b = A[keep], b[keep]
        essential = np.ones(A.shape[0], dtype=bool)
        for i in range(A.shape[0]):
            rows = essential.copy()
            rows[i] = False
            sub = Polytope(A[rows], b[rows], self.A_eq, self.b_eq, self.dim)
            if sub.support(A[i]) <= b[i] + 1e-9:
                essential[i] = False
        return Polytope(A[essential], b[essential], self.A_eq.copy(),
                        self.b_eq.copy(), self.dim)


def minkowski_sum_segment(S: Polytope, direction, lo: float, hi: float) -> Polytope:
    """S + {t * direction : t in [lo, hi]}, via the vertex representation."""
    if lo > hi:
        raise ValueError("segment interval is empty")
    direction = np.asarray(direction, float)
    if lo == hi:
        shift = lo * direction
        out = S.copy()
        out.b = S.b + S.A @ shift
        out.b_eq = S.b_eq + S.A_eq @ shift
        out._vertices = None if S._vertices is None else S._vertices + shift
        return out
    verts = S.vertices()
    if verts.shape[0] == 0:
        raise ValueError("cannot Minkowski-sum an empty set")
    pts = np.vstack([verts + lo * direction, verts + hi * direction])
    return Polytope.from_vertices(pts)


def preimage_linear(S: Polytope, M: np.ndarray) -> Polytope:
    """{x : M x in S}; each halfspace/equality normal maps through M'."""
    M = np.asarray(M, float)
    return Polytope(S.A @ M, S.b.copy(), S.A_eq @ M, S.b_eq.copy(), S.dim)


def pre_set(S: Polytope, A: np.ndarray, B: np.ndarray,
            inputs: InputInterval) -> Polytope:
    """States that some admissible input drives into S in one step:
    (S + (-B) . [lo, hi]) through the preimage of A."""
    if S.is_empty():
        return S.copy()
    summed = minkowski_sum_segment(S, -np.asarray(B, float), inputs.lo, inputs.hi)
    return preimage_linear(summed, np.asarray(A, float))


def pre_set_membership(x, S: Polytope, A: np.ndarray, B: np.ndarray,
                       inputs: InputInterval, tol: float = 1e-9) -> bool:
    """Exact membership oracle: does some gamma in [lo, hi] put A x + B gamma
    inside S? Each constraint row restricts gamma to a half-line; the
    intersection is a 1-D interval check."""
    x = np.asarray(x, float)
    base = np.asarray(A, float) @ x
    B = np.asarray(B, float)
    lo, hi = inputs.lo, inputs.hi
    for row, off in zip(S.A, S.b):
        coef = float(row @ B)
        rest = float(row @ base) - off
        if abs(coef) < 1e-14:
            if rest > tol:
                return False
        elif coef > 0:
            hi = min(hi, (-rest + tol) / coef)
        else:
            lo = max(lo, (-rest - tol) / coef)
    for row, off in zip(S.A_eq, S.b_eq):
        coef = float(row @ B)
        rest = float(row @ base) - off
        if abs(coef) < 1e-14:
            if abs(rest) > tol:
                return False
        else:
            pinned = -rest / coef
            lo = max(lo, pinned - tol)
            hi = min(hi, pinned + tol)
    return lo <= hi


def controllable_set(target: Polytope, n_steps: int, A: np.ndarray,
                     B: np.ndarray, inputs: InputInterval,
                     state_box: Polytope) -> tuple[Polytope, int | None]:
    """N-step controllable set: iterate pre-images intersected with the state
    box. Returns the final set and, if it collapsed, the step where it did."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    current = target.copy()
    for j in range(1, n_steps + 1):
        current = pre_set(current, A, B, inputs).intersect(state_box).reduce()
        if current.is_empty():
            return current, j
    return current, None


ZERO_TERMINAL = "zero"
INVARIANT_TERMINAL = "invariant"
PROPOSED_TERMINAL = "proposed"


def terminal_set_variant(kind: str, limits, invariant_set: Polytope | None = None) -> Polytope:
    """Terminal constraint set of each controller design under a
    constant-speed leader: the origin point, a caller-supplied invariant set,
    or the proposed line segment (any bounded spacing deviation with zero
    speed difference and zero acceleration)."""
    if kind == ZERO_TERMINAL:
        return Polytope.from_point([0.0, 0.0, 0.0])
    if kind == INVARIANT_TERMINAL:
        if invariant_set is None:
            raise ValueError("invariant-set variant requires the set")
        return invariant_set.copy()
    if kind == PROPOSED_TERMINAL:
        seg = Polytope(
            A=np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
            b=np.array([limits.spacing_dev_max, -limits.spacing_dev_min]),
            A_eq=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            b_eq=np.zeros(2),
        )
        return seg
    raise ValueError(f"unknown terminal-set variant {kind!r}")


@dataclass
class VariantReport:
    kind: str
    feasible_set: Polytope
    became_empty_at: int | None
    volume: float
    volume_ci: tuple[float, float]     # 95% binomial interval
    extents: list[tuple[float, float]]


@dataclass
class FeasibleSetReport:
    variants: list[VariantReport]
    n_samples: int
    state_box: Polytope


def feasible_set_report(limits, horizon: int, variants: list[str],
                        time_step: float, speed_diff_bound: float = 3.0,
                        accel_bound: float = 3.0,
                        invariant_set: Polytope | None = None,
                        n_samples: int = 1_000_000,
                        seed: int = 0) -> FeasibleSetReport:
    """Initial-feasible-set comparison across terminal-constraint designs.

    The state box uses the scenario bounds for the comparison (spacing
    deviation from limits; speed difference and acceleration from the given
    symmetric bounds); volumes are Monte Carlo estimates over that box.
    """
    from .stability import platoon_matrices

    A, B, _ = platoon_matrices(time_step)
    lower = np.array([limits.spacing_dev_min, -speed_diff_bound, -accel_bound])
    upper = np.array([limits.spacing_dev_max, speed_diff_bound, accel_bound])
    box = Polytope.from_box(lower, upper)
    inputs = InputInterval(limits.jerk_min, limits.jerk_max)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(lower, upper, size=(n_samples, 3))
    box_volume = float(np.prod(upper - lower))
    out = []
    for kind in variants:
        target = terminal_set_variant(kind, limits, invariant_set)
        feasible, empty_at = controllable_set(target, horizon, A, B, inputs, box)
        inside = feasible.contains(samples)
        frac = float(np.mean(inside))
        half = 1.96 * math.sqrt(max(frac * (1 - frac), 1e-12) / n_samples)
        out.append(VariantReport(
            kind, feasible, empty_at, frac * box_volume,
            ((frac - half) * box_volume, (frac + half) * box_volume),
            [feasible.extent(axis) for axis in range(3)],
        ))
    return FeasibleSetReport(out, n_samples, box)
