"""Parameter validation, derived convergence exponents, and mesh construction.

The model dial set couples a small diffusion parameter ``eps`` with two
tuning exponents: ``alpha`` controls the corner-corrector time scale
``eps**alpha`` and ``nu`` controls the decay rate ``exp(-x/eps**nu)`` of the
boundary homogenizers. Their admissible ranges interlock, and the single
derived exponent ``iota0`` aggregates them into the convergence rates the
study harness checks. Meshes come in two kinds: a layer-resolving
piecewise-uniform mesh on [0, 1] and a truncated uniform mesh for the
stretched half-line profile problems.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "RateExponents",
    "derive_iota0",
    "ModelParams",
    "Grid1D",
    "build_layer_grid",
    "HalfLineGrid",
    "build_half_line_grid",
    "TimeField",
    "interp_eval",
    "interp_space",
]


@dataclass(frozen=True)
class RateExponents:
    """The aggregate exponent and the three error-rate exponents it induces.

    ``phi_sup`` governs the sup-norm rate of the cell-density potential,
    ``phi_grad_weighted`` the time-weighted rate of its gradient, and
    ``v_sup`` the sup-norm rate of the chemical concentration.
    """

    iota0: float
    phi_sup: float
    phi_grad_weighted: float
    v_sup: float


def derive_iota0(alpha: float, nu: float) -> RateExponents:
    """Validate the exponent pair and derive the convergence exponents.

    ``iota0`` is the minimum of five competing terms; the admissible
    rectangle 1 < alpha < 5/4, 0 < nu < 1/4 with 1 + nu > alpha keeps it
    inside (1/2, 7/12).

    Raises ValueError naming the violated inequality.
    """
    alpha = float(alpha)
    nu = float(nu)
    if not 1.0 < alpha < 1.25:
        raise ValueError(f"alpha must satisfy 1 < alpha < 5/4, got {alpha}")
    if not 0.0 < nu < 0.25:
        raise ValueError(f"nu must satisfy 0 < nu < 1/4, got {nu}")
    if not 1.0 + nu > alpha:
        raise ValueError(f"exponents must satisfy 1 + nu > alpha, got 1 + {nu} <= {alpha}")
    iota0 = min(
        0.75 - nu,
        0.5 * alpha,
        1.0 + 0.5 * (nu - alpha),
        1.0 - 2.0 * nu / 3.0,
        1.25 - 0.5 * alpha,
    )
    return RateExponents(
        iota0=iota0,
        phi_sup=1.5 * iota0 - 0.375,
        phi_grad_weighted=2.0 * iota0 - 1.0,
        v_sup=iota0 - 0.25,
    )


@dataclass(frozen=True)
class ModelParams:
    """Dial set of one run: diffusion, boundary data, mass, exponents, horizon.

    ``eps`` may be exactly 0 (the vanishing-diffusion limit system) or any
    positive value. ``iota0`` is derived, not supplied.
    """

    eps: float
    v_star: float
    M: float
    alpha: float
    nu: float
    T: float
    iota0: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "v_star", float(self.v_star))
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "T", float(self.T))
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.v_star <= 0.0:
            raise ValueError(f"v_star must be > 0, got {self.v_star}")
        if self.M <= 0.0:
            raise ValueError(f"M must be > 0, got {self.M}")
        if self.T <= 0.0:
            raise ValueError(f"T must be > 0, got {self.T}")
        rates = derive_iota0(self.alpha, self.nu)
        object.__setattr__(self, "iota0", rates.iota0)

    @property
    def rates(self) -> RateExponents:
        return derive_iota0(self.alpha, self.nu)


@dataclass(frozen=True)
class Grid1D:
    """Strictly increasing mesh on [0, 1], uniform or layer-resolving.

    ``sigma_left``/``sigma_right`` are the transition-zone widths (0 for a
    plain uniform mesh). Node arrays are frozen read-only.
    """

    nodes: np.ndarray
    kind: str
    sigma_left: float = 0.0
    sigma_right: float = 0.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError(f"nodes must be a 1D array of >= 2 points, got shape {nodes.shape}")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError(
                f"nodes must span [0, 1] exactly, got [{nodes[0]}, {nodes[-1]}]"
            )
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if self.kind not in ("uniform", "shishkin"):
            raise ValueError(f"kind must be 'uniform' or 'shishkin', got {self.kind!r}")
        nodes = nodes.copy()
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1


def build_layer_grid(N: int, eps: float, c: float = 4.0) -> Grid1D:
    """Piecewise-uniform mesh resolving sqrt(eps)-wide boundary zones.

    For eps > 0 the transition width is sigma = min(1/4, c*sqrt(eps)*ln N),
    with N/4 cells in each boundary zone and N/2 cells in the interior.
    When the cap at 1/4 engages (or eps = 0) the construction degenerates
    to the uniform mesh and is labeled as such.

    N below 16 is rejected; N not divisible by 4 is rounded up to the next
    multiple of 4 (logged), so cell counts stay integral.
    """
    N = int(N)
    eps = float(eps)
    c = float(c)
    if N < 16:
        raise ValueError(f"N must be >= 16, got {N}")
    if N % 4 != 0:
        rounded = N + (4 - N % 4)
        logger.info("rounding N up from %d to %d (multiple of 4 required)", N, rounded)
        N = rounded
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if c <= 0.0:
        raise ValueError(f"c must be > 0, got {c}")

    if eps == 0.0:
        return Grid1D(nodes=np.linspace(0.0, 1.0, N + 1), kind="uniform")

    sigma = min(0.25, c * math.sqrt(eps) * math.log(N))
    if sigma >= 0.25:
        # Cap engaged: the three-piece construction would be uniform anyway.
        return Grid1D(
            nodes=np.linspace(0.0, 1.0, N + 1),
            kind="uniform",
            sigma_left=0.25,
            sigma_right=0.25,
        )
    left = np.linspace(0.0, sigma, N // 4 + 1)
    mid = np.linspace(sigma, 1.0 - sigma, N // 2 + 1)
    right = np.linspace(1.0 - sigma, 1.0, N // 4 + 1)
    nodes = np.concatenate([left, mid[1:], right[1:]])
    return Grid1D(nodes=nodes, kind="shishkin", sigma_left=sigma, sigma_right=sigma)


@dataclass(frozen=True)
class HalfLineGrid:
    """Uniform truncated mesh for a stretched boundary-layer coordinate.

    side 'left' lives on [0, z_max] with the boundary datum at node 0;
    side 'right' lives on [-z_max, 0] with the datum at the last node.
    The origin node is present exactly in both cases.
    """

    side: str
    z_max: float
    nodes: np.ndarray

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        origin = nodes[0] if self.side == "left" else nodes[-1]
        if origin != 0.0:
            raise ValueError(f"origin node must be exactly 0, got {origin}")
        nodes = nodes.copy()
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "z_max", float(self.z_max))

    @property
    def data_index(self) -> int:
        """Index of the node carrying the boundary datum (the origin)."""
        return 0 if self.side == "left" else self.nodes.size - 1

    @property
    def far_index(self) -> int:
        """Index of the truncation node standing in for infinity."""
        return self.nodes.size - 1 if self.side == "left" else 0


def build_half_line_grid(n_cells: int, z_max: float = 20.0, side: str = "left") -> HalfLineGrid:
    """Uniform mesh with ``n_cells`` cells truncating the half-line at ``z_max``.

    Profiles decay exponentially in the stretched coordinate, so the default
    truncation at 20 leaves tails below 1e-8; halving/doubling z_max is the
    standard sensitivity check.
    """
    n_cells = int(n_cells)
    z_max = float(z_max)
    if n_cells < 8:
        raise ValueError(f"n_cells must be >= 8, got {n_cells}")
    if z_max <= 0.0:
        raise ValueError(f"z_max must be > 0, got {z_max}")
    if z_max < 10.0:
        logger.warning("z_max=%g is small; profile tails may not have decayed", z_max)
    if side == "left":
        nodes = np.linspace(0.0, z_max, n_cells + 1)
    else:
        nodes = np.linspace(-z_max, 0.0, n_cells + 1)
    return HalfLineGrid(side=side, z_max=z_max, nodes=nodes)


@dataclass(frozen=True)
class TimeField:
    """A scalar field sampled on a fixed mesh at a sequence of time levels.

    ``values[k, i]`` is the field at time ``times[k]`` and node ``i``.
    Both arrays are frozen read-only; interpolation is piecewise linear in
    space and time, with extension by zero outside the spatial hull (layer
    profiles decay, so truncated tails read as 0).
    """

    grid: Union[Grid1D, HalfLineGrid]
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.ndim != 1 or times.size < 1:
            raise ValueError(f"times must be a nonempty 1D array, got shape {times.shape}")
        if times[0] != 0.0:
            raise ValueError(f"first time level must be 0, got {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if values.shape != (times.size, self.grid.nodes.size):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"(times, nodes) = ({times.size}, {self.grid.nodes.size})"
            )
        times = times.copy()
        values = values.copy()
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


def _time_bracket(times: np.ndarray, t: float) -> tuple[int, int, float]:
    """Indices (k0, k1) and weight theta with t = (1-theta)*t_k0 + theta*t_k1."""
    t = float(t)
    t0, t1 = times[0], times[-1]
    slack = 1e-12 * max(1.0, abs(t1))
    if t < t0 - slack or t > t1 + slack:
        raise ValueError(f"t={t} outside time range [{t0}, {t1}]")
    t = min(max(t, t0), t1)
    k = int(np.searchsorted(times, t, side="right") - 1)
    if k >= times.size - 1:
        return times.size - 1, times.size - 1, 0.0
    theta = (t - times[k]) / (times[k + 1] - times[k])
    return k, k + 1, theta

def interp_eval(field: TimeField, x, t: float):
    """Evaluate a TimeField at (x, t), linear in both variables.

    ``x`` may be a scalar or array; outside the spatial hull the value is 0
    (decaying-profile convention). ``t`` outside the stored range raises
    ValueError.
    """
    k0, k1, theta = _time_bracket(field.times, t)
    nodes = field.grid.nodes
    row = field.values[k0]
    if theta != 0.0:
        row = (1.0 - theta) * field.values[k0] + theta * field.values[k1]
    out = np.interp(x, nodes, row, left=0.0, right=0.0)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def interp_space(field: TimeField, x: np.ndarray) -> np.ndarray:
    """Sample every stored time level at the points ``x`` (zero-extended).

    Returns an array of shape (len(times), len(x)). This is the bulk
    evaluation used when re-expressing layer profiles on the interval mesh.
    """
    x = np.asarray(x, dtype=np.float64)
    nodes = field.grid.nodes
    out = np.empty((field.times.size, x.size))
    for k in range(field.times.size):
        out[k] = np.interp(x, nodes, field.values[k], left=0.0, right=0.0)
    return out
