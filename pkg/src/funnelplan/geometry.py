"""Ellipsoid algebra, containment and obstacle-overlap primitives.

An ellipsoid is the closed set ``{x : (x - c)^T M (x - c) <= 1}`` with ``M``
symmetric positive definite.  Membership is boundary-inclusive everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Union

import numpy as np

from .config import TOL
from .errors import NumericalFailure


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        m = np.asarray(self.shape, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"shape matrix must be square, got {m.shape}")
        if m.shape[0] != c.size:
            raise ValueError(f"center has dimension {c.size}, shape has order {m.shape[0]}")
        if np.max(np.abs(m - m.T)) > TOL.symmetry * max(1.0, np.max(np.abs(m))):
            raise ValueError("shape matrix is not symmetric")
        m = 0.5 * (m + m.T)
        if np.linalg.eigvalsh(m)[0] <= TOL.min_eigenvalue:
            raise ValueError("shape matrix is not positive definite (degenerate ellipsoid)")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", m)

    @property
    def dim(self) -> int:
        return self.center.size

    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.shape)

    @cached_property
    def semi_axes(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.eig[0])

    @property
    def max_semi_axis(self) -> float:
        return float(self.semi_axes[0])

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower factor ``L`` with ``M = L L^T``."""
        return np.linalg.cholesky(self.shape)

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.shape @ d)

    def translated(self, delta) -> "Ellipsoid":
        return Ellipsoid(self.center + np.asarray(delta, dtype=float), self.shape)

    def allclose(self, other: "Ellipsoid", atol: float = 1e-12) -> bool:
        return (
            self.dim == other.dim
            and np.allclose(self.center, other.center, rtol=0.0, atol=atol)
            and np.allclose(self.shape, other.shape, rtol=0.0, atol=atol)
        )

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Ellipsoid":
        c = np.asarray(data["center"], dtype=float)
        return cls(c, np.asarray(data["shape"], dtype=float).reshape(c.size, c.size))


@dataclass(frozen=True, eq=False)
class Circle:
    id: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")

    @property
    def bounding_circle(self) -> tuple[np.ndarray, float]:
        return self.center, float(self.radius)

    def contains(self, q) -> bool:
        d = np.asarray(q, dtype=float) - self.center
        return float(d @ d) < self.radius * self.radius

    def area(self) -> float:
        return math.pi * self.radius**2

    def to_dict(self) -> dict:
        return {"kind": "circle", "id": self.id, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Rectangle:
    id: int
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(2)
        hi = np.asarray(self.hi, dtype=float).reshape(2)
        if not np.all(lo < hi):
            raise ValueError("rectangle min corner must be below max corner")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def bounding_circle(self) -> tuple[np.ndarray, float]:
        return 0.5 * (self.lo + self.hi), 0.5 * float(np.linalg.norm(self.hi - self.lo))

    @property
    def corners(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def contains(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q > self.lo) and np.all(q < self.hi))

    def area(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def to_dict(self) -> dict:
        return {"kind": "rectangle", "id": self.id, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


Obstacle = Union[Circle, Rectangle]


def obstacle_from_dict(data: dict) -> Obstacle:
    if data["kind"] == "circle":
        return Circle(int(data["id"]), data["center"], float(data["radius"]))
    if data["kind"] == "rectangle":
        return Rectangle(int(data["id"]), data["lo"], data["hi"])
    raise ValueError(f"unknown obstacle kind {data['kind']!r}")


def _check_dim(E: Ellipsoid, n: int):
    if E.dim != n:
        raise ValueError(f"dimension mismatch: ellipsoid is {E.dim}-D, argument is {n}-D")


def contains_point(E: Ellipsoid, x) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_dim(E, x.size)
    return E.value(x) <= 1.0 + TOL.membership


def _max_over_unit_ball(H: np.ndarray, b: np.ndarray) -> float:
    """Upper bound (tight to the multiplier tolerance) of ``max z^T H z + 2 b^T z`` over ``|z| <= 1``.

    ``H`` must be symmetric PSD.  Uses the dual ``g(mu) = mu + b^T (mu I - H)^{-1} b``,
    valid for every ``mu > lambda_max(H)``, minimised by a safeguarded Newton/bisection
    root-find on the secular equation ``|(mu I - H)^{-1} b| = 1``.
    """
    h, V = np.linalg.eigh(H)
    beta = V.T @ b
    hmax = h[-1]
    bnorm = float(np.linalg.norm(beta))
    scale = max(1.0, abs(hmax), bnorm)
    if bnorm <= 1e-15 * scale:
        return float(hmax)

    top = h >= hmax - 1e-12 * scale
    if np.all(np.abs(beta[top]) <= 1e-14 * scale):
        # hard case: optimum may sit at mu = hmax
        rest = ~top
        tail = float(np.sum(beta[rest] ** 2 / (hmax - h[rest]) ** 2)) if rest.any() else 0.0
        if tail <= 1.0:
            return float(hmax + (np.sum(beta[rest] ** 2 / (hmax - h[rest])) if rest.any() else 0.0))

    def znorm2(mu):
        return float(np.sum(beta**2 / (mu - h) ** 2))

    def dual(mu):
        return float(mu + np.sum(beta**2 / (mu - h)))

    lo, hi = hmax, hmax + bnorm
    mu = hi
    for _ in range(TOL.max_iterations):
        if hi - lo <= TOL.multiplier * max(1.0, abs(hi)):
            return dual(hi)
        n2 = znorm2(mu)
        if n2 > 1.0:
            lo = mu
        else:
            hi = mu
        # Newton on 1 - 1/|z(mu)|, which is nearly linear in mu
        nz = math.sqrt(n2)
        dn2 = -2.0 * float(np.sum(beta**2 / (mu - h) ** 3))
        step = (1.0 - 1.0 / nz) / (0.5 * dn2 / nz**3) if dn2 != 0.0 else 0.0
        cand = mu - step
        mu = cand if lo < cand < hi else 0.5 * (lo + hi)
        if mu in (lo, hi):
            mu = 0.5 * (lo + hi)
    raise NumericalFailure("ellipsoid containment root-find did not converge")


def max_outer_value(outer: Ellipsoid, inner: Ellipsoid) -> float:
    """Maximum of the outer quadratic form over the inner ellipsoid (an upper bound to 1e-9)."""
    if outer.dim != inner.dim:
        raise ValueError(f"dimension mismatch: {outer.dim} vs {inner.dim}")
    G = np.linalg.solve(inner.cholesky.T, np.eye(inner.dim))  # x = c_i + G z
    d = inner.center - outer.center
    H = G.T @ outer.shape @ G
    H = 0.5 * (H + H.T)
    b = G.T @ (outer.shape @ d)
    return _max_over_unit_ball(H, b) + float(d @ outer.shape @ d)


def contains_ellipsoid(outer: Ellipsoid, inner: Ellipsoid) -> bool:
    return max_outer_value(outer, inner) <= 1.0 + TOL.membership


def extreme_points(E: Ellipsoid, k_per_axis: int = 2) -> np.ndarray:
    """Boundary points: the ``2n`` principal-axis endpoints plus arc samples.

    ``k_per_axis`` counts points along each quarter arc between adjacent
    principal-axis endpoints, both endpoints included, so ``k_per_axis=2``
    returns the axis endpoints only.
    """
    if k_per_axis < 2:
        raise ValueError("k_per_axis must be >= 2")
    lam, V = E.eig
    axes = V / np.sqrt(lam)  # column i is the semi-axis vector i
    n = E.dim
    pts = [E.center + s * axes[:, i] for i in range(n) for s in (1.0, -1.0)]
    inner = k_per_axis - 2
    if inner > 0:
        theta = np.arange(1, inner + 1) * (0.5 * np.pi / (inner + 1))
        quarter = np.concatenate([theta + q * 0.5 * np.pi for q in range(4)])
        cos, sin = np.cos(quarter), np.sin(quarter)
        for i in range(n):
            for j in range(i + 1, n):
                pts.extend(E.center + np.outer(cos, axes[:, i]) + np.outer(sin, axes[:, j]))
    return np.asarray(pts)


def hull_contains(outer: Ellipsoid, inner: Ellipsoid, k_per_axis: int = 32) -> bool:
    """Point-sampled containment test.  Sound when it rejects, may falsely accept."""
    pts = extreme_points(inner, k_per_axis) - outer.center
    vals = np.einsum("ij,jk,ik->i", pts, outer.shape, pts)
    return bool(np.all(vals <= 1.0 + TOL.membership))


def selection_matrix(n: int, idx) -> np.ndarray:
    idx = list(idx)
    B = np.zeros((n, len(idx)))
    B[idx, range(len(idx))] = 1.0
    return B


def project(E: Ellipsoid, B: np.ndarray) -> Ellipsoid:
    """Exact shadow of ``E`` on the subspace spanned by the orthonormal columns of ``B``."""
    B = np.asarray(B, dtype=float)
    n, d = B.shape
    _check_dim(E, n)
    if d >= n:
        raise ValueError("projection must reduce dimension (d < n)")
    if not np.allclose(B.T @ B, np.eye(d), atol=1e-9):
        raise ValueError("basis columns must be orthonormal")
    try:
        W = np.linalg.solve(E.shape, B)
        S = np.linalg.inv(B.T @ W)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular shape matrix in projection: {exc}") from exc
    return Ellipsoid(B.T @ E.center, 0.5 * (S + S.T))


def _min_value_over_disc(c, M, p, r) -> float:
    """min of (x-c)^T M (x-c) over the disc |x - p| <= r (trust-region dual)."""
    delta_world = c - p
    dist2 = float(delta_world @ delta_world)
    if dist2 <= r * r:
        return 0.0
    lam, V = np.linalg.eigh(M)
    delta = V.T @ delta_world

    lam_l = [float(v) for v in lam]
    ld = [float(a * b) for a, b in zip(lam, delta)]

    def step2(mu):
        return sum((a / (l + mu)) ** 2 for a, l in zip(ld, lam_l))

    lo, hi = 0.0, max(float(lam[-1]) * math.sqrt(dist2) / r, 1e-300)
    while step2(hi) > r * r:
        hi *= 2.0
    for _ in range(TOL.max_iterations):
        mu = 0.5 * (lo + hi)
        if step2(mu) > r * r:
            lo = mu
        else:
            hi = mu
        if hi - lo <= TOL.multiplier * max(1.0, hi):
            break
    else:
        raise NumericalFailure("ellipse-circle distance root-find did not converge")
    # evaluate at both ends; the true minimiser multiplier lies in [lo, hi]
    vals = []
    for mu in (lo, hi):
        x_minus_p = lam * delta / (lam + mu)  # eigen-coordinates
        nrm = math.sqrt(float(x_minus_p @ x_minus_p))
        if nrm > r:
            x_minus_p *= r / nrm
        e = x_minus_p - delta  # x - c = (x - p) - (c - p)
        vals.append(float(np.sum(lam * e * e)))
    return min(vals)


def ellipse_circle_overlap(c, M, p, r) -> bool:
    return _min_value_over_disc(np.asarray(c, float), np.asarray(M, float), np.asarray(p, float), float(r)) <= 1.0 + TOL.membership


def _disc_polygon_overlap(poly) -> bool:
    """Unit disc at the origin vs convex polygon (vertices in order)."""
    pts = [(float(x), float(y)) for x, y in poly]
    n = len(pts)
    pos = neg = False
    for i in range(n):
        (ax, ay), (bx, by) = pts[i], pts[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        cr = dx * (-ay) - dy * (-ax)
        pos |= cr > 0
        neg |= cr < 0
        t = min(1.0, max(0.0, -(ax * dx + ay * dy) / (dx * dx + dy * dy)))
        cx, cy = ax + t * dx, ay + t * dy
        if cx * cx + cy * cy <= 1.0 + TOL.membership:
            return True
    return not (pos and neg)


def ellipse_rectangle_overlap(c, M, lo, hi) -> bool:
    L = np.linalg.cholesky(np.asarray(M, float))
    (x0, y0), (x1, y1) = lo, hi
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) - np.asarray(c, float)
    return _disc_polygon_overlap(corners @ L)  # rows are L^T (x - c)


def overlaps_obstacle(E: Ellipsoid, obs: Obstacle) -> bool:
    _check_dim(E, 2)
    oc, orad = obs.bounding_circle
    gap = float(np.linalg.norm(E.center - oc)) - E.max_semi_axis - orad
    if gap > 0.0:
        return False
    if isinstance(obs, Circle):
        return ellipse_circle_overlap(E.center, E.shape, obs.center, obs.radius)
    return ellipse_rectangle_overlap(E.center, E.shape, obs.lo, obs.hi)


def radical_inverse(i: int, base: int = 2) -> float:
    inv, f = 0.0, 1.0 / base
    while i:
        inv += f * (i % base)
        i //= base
        f /= base
    return inv


def van_der_corput_order(n: int) -> list[int]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return list(_vdc_cached(n))


@lru_cache(maxsize=256)
def _vdc_cached(n: int) -> tuple:
    return tuple(sorted(range(n), key=lambda i: (radical_inverse(i), i)))
