"""Nonlinear least squares and the two science fits (power law, patch model).

:func:`nlls_fit` is a damped Gauss-Newton (Levenberg-Marquardt) solver:

* the damping term is ``lam * diag(J^T W J)`` so the iteration does not care
  about parameter units;
* ``lam`` starts at zero (a plain Gauss-Newton step), grows x10 on every
  rejected step (from ``LAMBDA_FLOOR`` when zero) and shrinks x10 on every
  accepted step, dropping back to zero below ``LAMBDA_FLOOR``;
* trial points are projected into the parameter bounds;
* it stops when the projected gradient falls below ``gtol`` times its
  initial norm, when an undamped step moves every parameter by less than
  ``XTOL`` relative or lowers the cost by less than ``FTOL`` relative (the
  optimum is resolved to double precision), when no step can lower the cost
  any more, or after ``max_iter`` iterations (``converged=False``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import CONSTANTS
from .forces import PatchParams, derivative_kernel, sinh_kernel_derivative_integral

LAMBDA_FLOOR = 1e-6
LAMBDA_CEIL = 1e16
MAX_ITER = 200
GTOL = 1e-10
XTOL = 1e-13
FTOL = 1e-15
POWER_GTOL = 1e-14


class FitError(RuntimeError):
    """A fit could not produce a usable answer."""


class DegenerateFitError(FitError):
    pass


@dataclass(frozen=True)
class ModelFamily:
    """A parameterised curve y = f(params, x) with optional analytic Jacobian."""

    name: str
    param_names: tuple[str, ...]
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


@dataclass
class FitProblem:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    model: ModelFamily
    initial_params: np.ndarray
    bounds: Sequence[tuple[float, float]] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.y.shape).copy()
        self.initial_params = np.asarray(self.initial_params, dtype=float)
        p = self.initial_params.size
        if self.bounds is None:
            self.bounds = [(-math.inf, math.inf)] * p
        self.bounds = [(float(lo), float(hi)) for lo, hi in self.bounds]
        if self.x.shape != self.y.shape:
            raise FitError("x and y must have the same shape")
        if self.y.size < p + 1:
            raise FitError(f"need at least {p + 1} data points for {p} parameters, got {self.y.size}")
        if len(self.bounds) != p or len(self.model.param_names) != p:
            raise FitError("bounds, parameter names and initial params disagree in length")
        for (lo, hi), v, name in zip(self.bounds, self.initial_params, self.model.param_names):
            if not lo <= hi:
                raise FitError(f"bounds for {name} are inverted")
            if not lo <= v <= hi:
                raise FitError(f"initial {name}={v!r} outside bounds [{lo!r}, {hi!r}]")
        if np.any(self.sigma < 0) or not np.all(np.isfinite(self.sigma)):
            raise FitError("sigma must be finite and >= 0")

    @property
    def weights(self) -> np.ndarray:
        """1/sigma; points with sigma == 0 all get unit weight instead."""
        if np.all(self.sigma > 0):
            return 1.0 / self.sigma
        return np.ones_like(self.sigma)

    @property
    def absolute_sigma(self) -> bool:
        return bool(np.all(self.sigma > 0))


@dataclass
class TraceStep:
    iteration: int
    params: np.ndarray
    cost: float
    damping: float
    accepted: bool


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2_reduced: float
    converged: bool
    n_iterations: int
    param_names: tuple[str, ...] = ()
    residuals: np.ndarray | None = None
    message: str = ""
    trace: list[TraceStep] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def as_record(self) -> dict:
        rec = {
            "params": {n: float(v) for n, v in zip(self.param_names, self.params)},
            "errors": {n: float(v) for n, v in zip(self.param_names, self.errors)},
            "covariance": self.covariance.tolist(),
            "chi2_reduced": float(self.chi2_reduced),
            "converged": bool(self.converged),
            "n_iterations": int(self.n_iterations),
            "message": self.message,
        }
        rec.update(self.extra)
        return rec


def finite_difference_jacobian(f, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Central differences with step max(|p|, 1) * 1e-7."""
    params = np.asarray(params, dtype=float)
    cols = []
    for i, p in enumerate(params):
        h = max(abs(p), 1.0) * 1e-7
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        cols.append((f(up, x) - f(dn, x)) / (2 * h))
    return np.column_stack(cols)


def _project(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(p, lo), hi)


def _projected_gradient(g: np.ndarray, p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    g = g.copy()
    # descent direction is -g: blocked at a lower bound if g > 0, at an upper bound if g < 0
    g[(p <= lo) & (g > 0)] = 0.0
    g[(p >= hi) & (g < 0)] = 0.0
    return g


def nlls_fit(
    problem: FitProblem,
    max_iter: int = MAX_ITER,
    gtol: float = GTOL,
    record_trace: bool = False,
) -> FitResult:
    model = problem.model
    x, y, w = problem.x, problem.y, problem.weights
    lo = np.array([b[0] for b in problem.bounds])
    hi = np.array([b[1] for b in problem.bounds])

    def residuals(p):
        return (model.f(p, x) - y) * w

    def jacobian(p):
        J = model.jac(p, x) if model.jac is not None else finite_difference_jacobian(model.f, p, x)
        return J * w[:, None]

    p = problem.initial_params.copy()
    r = residuals(p)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise FitError("model is not finite at the initial parameters")
    J = jacobian(p)
    g = _projected_gradient(J.T @ r, p, lo, hi)
    g0 = float(np.linalg.norm(g))
    lam = 0.0
    trace = []
    converged = g0 == 0.0
    message = "initial point is stationary" if converged else ""
    it = 0
    while not converged and it < max_iter:
        it += 1
        JTJ = J.T @ J
        scale = np.diag(JTJ).copy()
        scale[scale <= 0] = max(float(np.max(scale)), 1.0) * 1e-30
        accepted = False
        while True:
            A = JTJ + lam * np.diag(scale)
            try:
                step = -np.linalg.solve(A, J.T @ r)
                ok = np.all(np.isfinite(step))
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                trial = _project(p + step, lo, hi)
                r_trial = residuals(trial)
                cost_trial = float(r_trial @ r_trial)
                if record_trace:
                    trace.append(TraceStep(it, trial.copy(), cost_trial, lam, cost_trial < cost))
                # strict decrease: equal-cost steps at rounding level would cycle forever
                if math.isfinite(cost_trial) and cost_trial < cost:
                    accepted = True
                    break
                if np.array_equal(trial, p):
                    break
            lam = LAMBDA_FLOOR if lam == 0 else lam * 10
            if lam > LAMBDA_CEIL:
                break
        if not accepted:
            if not ok and lam > LAMBDA_CEIL:
                raise DegenerateFitError("normal equations stay singular under maximal damping")
            converged = True
            message = "no further decrease possible at machine precision"
            break
        undamped = lam == 0.0
        tiny_step = bool(np.all(np.abs(trial - p) <= XTOL * np.abs(p)))
        stalled = tiny_step or cost_trial >= cost * (1 - FTOL)
        p, r, cost = trial, r_trial, cost_trial
        J = jacobian(p)
        g = _projected_gradient(J.T @ r, p, lo, hi)
        lam = lam / 10 if lam / 10 >= LAMBDA_FLOOR else 0.0
        if np.linalg.norm(g) <= gtol * g0:
            converged = True
            message = "gradient tolerance reached"
        elif stalled and (undamped or cost == 0.0):
            converged = True
            message = "exact fit" if cost == 0.0 else "optimum resolved to machine precision"
    if not converged:
        message = f"iteration cap {max_iter} reached; |g|/|g0| = {np.linalg.norm(g) / g0:.3g}"

    n, k = y.size, p.size
    chi2 = cost / (n - k)
    JTJ = J.T @ J
    try:
        cov = np.linalg.inv(JTJ)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(JTJ)
    if not problem.absolute_sigma:
        cov = cov * chi2
    cov = 0.5 * (cov + cov.T)
    raw = model.f(p, x) - y
    return FitResult(
        params=p,
        covariance=cov,
        chi2_reduced=chi2,
        converged=converged,
        n_iterations=it,
        param_names=model.param_names,
        residuals=raw,
        message=message,
        trace=trace,
    )


# --- model families ---------------------------------------------------------------


def _linear_f(p, x):
    return p[0] * x


LINEAR = ModelFamily("linear", ("a",), _linear_f, lambda p, x: x[:, None].astype(float))


def _power_f(p, x):
    return p[0] / x ** p[1]


def _power_jac(p, x):
    y = x ** (-p[1])
    return np.column_stack([y, -p[0] * y * np.log(x)])


POWER_LAW = ModelFamily("power_law", ("A", "n"), _power_f, _power_jac)


def _scaled_power_family(d_ref: float) -> ModelFamily:
    def f(p, x):
        return p[0] * (x / d_ref) ** (-p[1])

    def jac(p, x):
        s = (x / d_ref) ** (-p[1])
        return np.column_stack([s, -p[0] * s * np.log(x / d_ref)])

    return ModelFamily("power_law_scaled", ("B", "n"), f, jac)


def _positive_data(d, y):
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(d <= 0):
        raise FitError("all separations must be positive")
    if np.any(y <= 0):
        raise FitError("power-law fit needs y > 0 everywhere (log-log initialisation)")
    return d, y


def fit_power_law(d, y, sigma=0.0, **kwargs) -> FitResult:
    """Fit y = A / d**n; returns a result over (A, n).

    Internally the amplitude is referred to the geometric-mean distance so
    that A and n are decorrelated; A and its covariance are mapped back.
    """
    d, y = _positive_data(d, y)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    d_ref = float(np.exp(np.mean(np.log(d))))
    lx = np.log(d / d_ref)
    ly = np.log(y)
    # log-space weights: sigma(log y) = sigma / y
    wts = y / sigma if np.all(sigma > 0) else np.ones_like(y)
    slope, intercept = np.polyfit(lx, ly, 1, w=wts)
    start = np.array([math.exp(intercept), -slope])
    problem = FitProblem(d, y, sigma, _scaled_power_family(d_ref), start)
    # two parameters are cheap: iterate to the machine-precision optimum so the
    # answer does not depend on how close the log-log start happened to be
    kwargs.setdefault("gtol", POWER_GTOL)
    res = nlls_fit(problem, **kwargs)
    B, n = res.params
    A = B * d_ref**n
    T = np.array([[d_ref**n, B * d_ref**n * math.log(d_ref)], [0.0, 1.0]])
    res.params = np.array([A, n])
    res.covariance = T @ res.covariance @ T.T
    res.param_names = POWER_LAW.param_names
    res.extra["d_ref_m"] = d_ref
    res.extra["log_log_start"] = {"A": float(start[0] * d_ref ** start[1]), "n": float(start[1])}
    return res


# --- patch model ------------------------------------------------------------------


def patch_derivative_family(L: float, lambda_max: float) -> ModelFamily:
    """|dF/dd| of the two-scale patch force over (sigma_S, sigma_L, lambda_min)."""
    eps0 = CONSTANTS.eps0
    k_min = 2 * math.pi / lambda_max
    pref = eps0 * L**2

    # the quadrature depends on lambda_min only, so sigma-only steps reuse it
    cache: dict = {}

    def kernel(k_max, x):
        key = (k_max, x.tobytes())
        if key not in cache:
            if len(cache) > 256:
                cache.clear()
            cache[key] = np.array([sinh_kernel_derivative_integral(k_min, k_max, d) for d in x])
        return cache[key]

    def parts(p, x):
        sS, sL, lmin = p
        k_max = 2 * math.pi / lmin
        band = k_max**2 - k_min**2
        K = kernel(k_max, np.asarray(x, dtype=float))
        return sS, sL, lmin, k_max, band, K

    def f(p, x):
        sS, sL, lmin, k_max, band, K = parts(p, x)
        return pref * (sL**2 / x**3 + 4 * sS**2 / band * K)

    def jac(p, x):
        sS, sL, lmin, k_max, band, K = parts(p, x)
        d_sS = pref * 8 * sS / band * K
        d_sL = pref * 2 * sL / x**3
        # K depends on k_max through its upper limit: dK/dk_max = k_max^4 cosh/sinh^3 at k_max d
        dK = np.array([derivative_kernel(k_max * d) / (k_max * d) ** 4 for d in x]) * k_max**4
        d_kmax = pref * 4 * sS**2 * (dK / band - 2 * k_max * K / band**2)
        d_lmin = d_kmax * (-2 * math.pi / lmin**2)
        return np.column_stack([d_sS, d_sL, d_lmin])

    return ModelFamily("patch_derivative", ("sigma_S", "sigma_L", "lambda_min"), f, jac)


def patch_bounds(lambda_max: float) -> list[tuple[float, float]]:
    return [(0.0, 1.0), (0.0, 1.0), (0.1e-6, lambda_max / 2)]


DEFAULT_STARTS = {
    "sigma_S": (0.02, 0.1, 0.4),
    "sigma_L": (0.02, 0.1, 0.4),
    "lambda_min": (1e-6, 3e-6, 10e-6),
}


@dataclass
class StartDiagnostic:
    start: tuple[float, float, float]
    cost: float
    converged: bool | None = None
    message: str = ""


def _start_grid(lambda_max: float):
    lo, hi = patch_bounds(lambda_max)[2]
    for sS in DEFAULT_STARTS["sigma_S"]:
        for sL in DEFAULT_STARTS["sigma_L"]:
            for lm in DEFAULT_STARTS["lambda_min"]:
                yield np.array([sS, sL, min(max(lm, lo), hi)])


def fit_patch_model(
    d,
    y,
    sigma=0.0,
    L: float = 1e-2,
    lambda_max: float = 100e-6,
    n_refine: int = 4,
    starts=None,
    record_trace: bool = False,
    sensitivity: bool = True,
) -> FitResult:
    """Fit |dF/dd| of the patch force to force-derivative data (N/m).

    The coarse start grid is ranked by cost and the ``n_refine`` best starts
    are refined with :func:`nlls_fit`. ``lambda_max`` is held fixed; the
    result's ``extra['lambda_max_sensitivity']`` reports refits at half and
    twice its value.
    """
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(d <= 0):
        raise FitError("all separations must be positive")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    family = patch_derivative_family(L, lambda_max)
    bounds = patch_bounds(lambda_max)
    template = FitProblem(d, y, sigma, family, np.array([0.1, 0.1, 3e-6]), bounds)
    w = template.weights

    candidates = [np.asarray(s, dtype=float) for s in (starts if starts is not None else _start_grid(lambda_max))]
    diagnostics = []
    for s in candidates:
        r = (family.f(s, d) - y) * w
        diagnostics.append(StartDiagnostic(tuple(float(v) for v in s), float(r @ r)))
    order = sorted(range(len(candidates)), key=lambda i: diagnostics[i].cost)

    best = None
    for i in order[:n_refine]:
        problem = FitProblem(d, y, sigma, family, candidates[i], bounds)
        try:
            res = nlls_fit(problem, record_trace=record_trace)
        except FitError as exc:
            diagnostics[i].message = str(exc)
            continue
        diagnostics[i].converged = res.converged
        diagnostics[i].message = res.message
        cost = res.chi2_reduced
        if res.converged and (best is None or cost < best.chi2_reduced):
            best = res
    if best is None:
        detail = "; ".join(f"start={dg.start} cost={dg.cost:.3g} {dg.message}" for dg in diagnostics if dg.converged is not None or dg.message)
        raise FitError(f"no convergent start ({detail})")

    best.extra["L_m"] = L
    best.extra["lambda_max_m"] = lambda_max
    best.extra["starts"] = [
        {"start": list(dg.start), "cost": dg.cost, "converged": dg.converged, "message": dg.message} for dg in diagnostics
    ]
    if sensitivity:
        best.extra["lambda_max_sensitivity"] = _lambda_max_sensitivity(d, y, sigma, L, lambda_max, best)
    return best


def _lambda_max_sensitivity(d, y, sigma, L, lambda_max, best: FitResult) -> list[dict]:
    report = []
    for factor in (0.5, 2.0):
        lm = lambda_max * factor
        bounds = patch_bounds(lm)
        start = best.params.copy()
        start[2] = min(max(start[2], bounds[2][0]), bounds[2][1])
        try:
            res = nlls_fit(FitProblem(d, y, sigma, patch_derivative_family(L, lm), start, bounds))
            report.append(
                {
                    "lambda_max_m": lm,
                    "params": {n: float(v) for n, v in zip(res.param_names, res.params)},
                    "chi2_reduced": float(res.chi2_reduced),
                }
            )
        except FitError as exc:
            report.append({"lambda_max_m": lm, "error": str(exc)})
    return report


def patch_params_from_fit(res: FitResult, lambda_max: float) -> PatchParams:
    return PatchParams(sigma_L=res["sigma_L"], sigma_S=res["sigma_S"], lambda_min=res["lambda_min"], lambda_max=lambda_max)
