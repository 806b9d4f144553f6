"""Corner-corrector time functions and the smooth cutoff they are built from.

The regularized layer problems replace the raw boundary datum with one
shifted by a corrector Lambda(t): a pair of Gaussian-kernel time integrals
living on the scale eps**alpha that restore corner compatibility at t = 0.
The inner Gaussian integrals are evaluated exactly through erf/erfc,
removing the stiff inner quadrature; only the outer time integral is done
numerically, on a mesh resolving eps**alpha.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import erf, erfc

logger = logging.getLogger(__name__)

__all__ = [
    "chi",
    "CorrectorSeries",
    "corrector_value",
    "build_corrector_series",
    "corrector_bound_check",
]

# The erfc factor is below 2e-29 past this many eps**alpha units, and the
# cutoff factor is identically zero past one unit, so the corrector is
# constant beyond the window for every practical purpose.
_PLATEAU_UNITS = 8.0
_POINTS_PER_UNIT = 2048


def chi(s):
    """Smooth cutoff: exp(1 - 1/(1 - s^2)) on [0, 1), zero for s >= 1.

    Defined for s >= 0 only; negative arguments raise. The concrete bump is
    an implementation choice (any smooth cutoff with chi(0) = 1 and support
    in [0, 1] serves); it is fixed so results are reproducible bit for bit.
    """
    arr = np.asarray(s, dtype=np.float64)
    if np.any(arr < 0.0):
        raise ValueError(f"chi is defined for s >= 0, got min {np.min(arr)}")
    out = np.zeros_like(arr)
    inside = arr < 1.0
    si = arr[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CorrectorSeries:
    """Corrector sampled on solver time levels, plus its magnitude summary.

    ``values[0]`` must vanish (both integrals start empty) and the reported
    ``bound_constant`` is sup |Lambda| / eps**alpha, the quantity whose
    uniform boundedness the magnitude law asserts.
    """

    side: str
    eps: float
    alpha: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be matching 1D arrays")
        if values[0] != 0.0:
            raise ValueError(f"corrector must vanish at t=0, got {values[0]}")
        times = times.copy()
        values = values.copy()
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def bound_constant(self) -> float:
        return self.sup_abs / self.eps**self.alpha


def _fine_evaluation(
    trace_times: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    u0_boundary: float,
    v_star: float,
    eps: float,
    alpha: float,
    t_end: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative corrector on a mesh resolving the eps**alpha scale.

    Returns (t_fine, lambda_fine) on [0, min(t_end, plateau)]; beyond the
    window the corrector is constant at lambda_fine[-1].
    """
    scale = eps**alpha
    span = min(float(t_end), _PLATEAU_UNITS * scale)
    n = max(257, int(_POINTS_PER_UNIT * span / scale) + 1)
    t_fine = np.linspace(0.0, span, n)
    A_fine = np.interp(t_fine, trace_times, A)
    B_fine = np.interp(t_fine, trace_times, B)
    w = t_fine / scale
    integrand1 = A_fine * B_fine * erfc(w)
    integrand2 = chi(w) * erf(w)
    lam = -cumulative_trapezoid(integrand1, t_fine, initial=0.0)
    lam -= u0_boundary * v_star * cumulative_trapezoid(integrand2, t_fine, initial=0.0)
    return t_fine, lam


def corrector_value(
    t: float,
    trace_times: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    u0_boundary: float,
    v_star: float,
    eps: float,
    alpha: float,
) -> float:
    """Corrector value at a single time.

    ``A`` and ``B`` are the boundary traces of the limit density and
    chemical (density trace includes the mass M) on ``trace_times``;
    ``u0_boundary`` is the initial density at the same boundary point.
    ``t`` outside [0, trace_times[-1]] raises.
    """
    t = float(t)
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError(f"corrector requires eps > 0, got {eps}")
    t_max = float(trace_times[-1])
    if t < 0.0 or t > t_max * (1.0 + 1e-12):
        raise ValueError(f"t={t} outside trace range [0, {t_max}]")
    if t == 0.0:
        return 0.0
    t_fine, lam = _fine_evaluation(
        trace_times, A, B, float(u0_boundary), float(v_star), eps, float(alpha), t
    )
    return float(np.interp(t, t_fine, lam))


def build_corrector_series(
    side: str,
    trace_times: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    u0_boundary: float,
    v_star: float,
    eps: float,
    alpha: float,
    sample_times: np.ndarray | None = None,
) -> CorrectorSeries:
    """Corrector sampled on ``sample_times`` (default: the trace times).

    One fine-mesh evaluation covers the active window; outside it the
    series continues with the plateau constant, which np.interp's edge
    clamping supplies directly.
    """
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError(f"corrector requires eps > 0, got {eps}")
    trace_times = np.asarray(trace_times, dtype=np.float64)
    if sample_times is None:
        sample_times = trace_times
    sample_times = np.asarray(sample_times, dtype=np.float64)
    t_fine, lam = _fine_evaluation(
        trace_times, A, B, float(u0_boundary), float(v_star), eps, float(alpha),
        float(trace_times[-1]),
    )
    values = np.interp(sample_times, t_fine, lam)
    if sample_times[0] == 0.0:
        values[0] = 0.0
    return CorrectorSeries(
        side=side, eps=eps, alpha=float(alpha), times=sample_times, values=values
    )


def corrector_bound_check(series_list) -> float:
    """Fit log sup|Lambda| against log eps and enforce the magnitude law.

    Requires at least three series at distinct eps sharing one alpha.
    Returns the fitted slope; raises if the fit is degenerate or the slope
    falls below alpha - 0.05.
    """
    series_list = list(series_list)
    if len(series_list) < 3:
        raise ValueError(f"need >= 3 corrector series, got {len(series_list)}")
    alphas = {s.alpha for s in series_list}
    if len(alphas) != 1:
        raise ValueError(f"series mix different alpha values: {sorted(alphas)}")
    alpha = series_list[0].alpha
    eps_arr = np.array([s.eps for s in series_list])
    sup_arr = np.array([s.sup_abs for s in series_list])
    if len(set(eps_arr.tolist())) < 3:
        raise ValueError("need >= 3 distinct eps values for a slope fit")
    if np.any(sup_arr <= 0.0):
        raise ValueError("corrector magnitudes must be positive for a log fit")
    slope = float(np.polyfit(np.log(eps_arr), np.log(sup_arr), 1)[0])
    if slope < alpha - 0.05:
        raise ValueError(
            f"corrector magnitude slope {slope:.4f} below alpha - 0.05 = {alpha - 0.05:.4f}"
        )
    return slope
