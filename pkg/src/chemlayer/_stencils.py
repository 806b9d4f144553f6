"""Shared finite-difference building blocks on nonuniform 1D meshes.

Internal module: three-point Laplacian coefficients, banded backward-Euler
system assembly, and one-sided cubic-fit boundary derivative weights. All
solvers in the package go through these helpers so that identical inputs
produce identical floats everywhere.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "laplacian_coeffs",
    "assemble_backward_euler",
    "solve_tridiagonal",
    "end_derivative_weights",
    "gradient_weights",
    "apply_gradient",
    "cumtrapz0",
]


def laplacian_coeffs(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Second-derivative stencil on a nonuniform mesh.

    Returns (sub, diag, sup) such that for interior i

        (d2f)_i = sub[i] * f[i-1] + diag[i] * f[i] + sup[i] * f[i+1],

    the standard three-point formula exact on quadratics. Boundary rows
    are zeroed; callers impose boundary conditions there.
    """
    x = np.asarray(nodes, dtype=np.float64)
    n = x.size
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    sub[1:-1] = 2.0 / (hm * (hm + hp))
    sup[1:-1] = 2.0 / (hp * (hm + hp))
    diag[1:-1] = -2.0 / (hm * hp)
    return sub, diag, sup


def assemble_backward_euler(
    lap: tuple[np.ndarray, np.ndarray, np.ndarray],
    dt: float,
    diffusivity: float = 1.0,
    reaction: np.ndarray | None = None,
) -> np.ndarray:
    """Banded matrix of I - dt*diffusivity*Lap + dt*diag(reaction).

    Returned in scipy ``solve_banded`` (1, 1) layout with identity rows at
    both ends, so the right-hand side entries 0 and -1 are read as Dirichlet
    values by the solve.
    """
    sub, diag, sup = lap
    n = diag.size
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 - dt * diffusivity * diag
    ab[0, 2:] = -dt * diffusivity * sup[1:-1]
    ab[2, :-2] = -dt * diffusivity * sub[1:-1]
    if reaction is not None:
        ab[1, 1:-1] += dt * reaction[1:-1]
    ab[1, 0] = 1.0
    ab[1, -1] = 1.0
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    return ab


def solve_tridiagonal(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the banded system produced by :func:`assemble_backward_euler`."""
    return solve_banded(
        (1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True, check_finite=False
    )


def end_derivative_weights(nodes: np.ndarray, end: str) -> tuple[np.ndarray, np.ndarray]:
    """One-sided first/second derivative weights at a mesh endpoint.

    Fits a cubic through the four nodes nearest the requested end and
    differentiates it there, so the weights are exact on polynomials up
    to degree three. Returns (w1, w2) with

        f'(end)  = w1 @ f[:4]   (left)  or  w1 @ f[-4:]  (right),
        f''(end) = w2 @ f[:4]           or  w2 @ f[-4:].
    """
    x = np.asarray(nodes, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"need at least 4 nodes for end stencils, got {x.size}")
    if end == "left":
        d = x[:4] - x[0]
    elif end == "right":
        d = x[-4:] - x[-1]
    else:
        raise ValueError(f"end must be 'left' or 'right', got {end!r}")
    scale = np.max(np.abs(d))
    ds = d / scale
    vander = np.vander(ds, 4, increasing=True).T  # vander[j, k] = ds[k]**j
    w1 = np.linalg.solve(vander, np.array([0.0, 1.0, 0.0, 0.0])) / scale
    w2 = np.linalg.solve(vander, np.array([0.0, 0.0, 2.0, 0.0])) / scale**2
    return w1, w2


def gradient_weights(nodes):
    """Precompute first-derivative stencil weights for a fixed node set.

    Interior nodes use the three-point centered formula for nonuniform
    spacing; the two end nodes use one-sided three-point formulas of the
    same (second) order. Returns an opaque tuple for apply_gradient.
    """
    x = np.asarray(nodes, dtype=np.float64)
    n = x.size
    if n < 3:
        raise ValueError(f"gradient stencils need at least 3 nodes, got {n}")
    lo = np.zeros(n)
    di = np.zeros(n)
    up = np.zeros(n)
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    lo[1:-1] = -hp / (hm * (hm + hp))
    di[1:-1] = (hp - hm) / (hm * hp)
    up[1:-1] = hm / (hp * (hm + hp))

    def one_sided(offsets):
        vander = np.vander(offsets, 3, increasing=True).T
        return np.linalg.solve(vander, np.array([0.0, 1.0, 0.0]))

    w_left = one_sided(x[:3] - x[0])
    w_right = one_sided(x[-3:] - x[-1])
    return lo, di, up, w_left, w_right


def apply_gradient(weights, values):
    """Differentiate nodal values with weights from gradient_weights."""
    lo, di, up, w_left, w_right = weights
    out = di * values
    out[1:-1] += lo[1:-1] * values[:-2] + up[1:-1] * values[2:]
    out[0] = w_left @ values[:3]
    out[-1] = w_right @ values[-3:]
    return out


def cumtrapz0(values, nodes):
    """Cumulative trapezoid antiderivative pinned to zero at the first node.

    Single shared implementation so that wall series recorded during a
    march and profile integrals computed afterwards agree bit for bit.
    """
    out = np.empty(values.size, dtype=np.float64)
    out[0] = 0.0
    np.cumsum(np.diff(nodes) * (values[1:] + values[:-1]) / 2.0, out=out[1:])
    return out
