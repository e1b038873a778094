"""Steering ensembles to targets by gradient descent through the discretized flow.

The loss is the mean squared endpoint error; its gradient is the exact
discrete adjoint of the RK4 map (reverse mode through every stage and
segment), so it matches finite differences of the *discretized* loss.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .ensemble import Ensemble
from .families import ControlFamily, cubic_quadratic_family, family_from_spec, origin_fixed_family
from .flow import DEFAULT_BLOWUP, DEFAULT_STEP, ControlSchedule, flow_points, step_grid

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "Adam",
    "loss",
    "grad",
    "loss_and_grad",
    "train",
    "fit_points",
    "affine_least_squares_residual",
    "shrink_then_interpolate",
    "ShrinkInterpolateResult",
]


class TrainingError(RuntimeError):
    """Raised when training cannot proceed; ``stage`` names the failing stage."""

    def __init__(self, message: str, stage: str = "train"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class Dataset:
    inputs: Ensemble
    targets: Ensemble

    def __init__(self, inputs, targets):
        X = inputs if isinstance(inputs, Ensemble) else Ensemble(np.asarray(inputs, dtype=float))
        Y = targets if isinstance(targets, Ensemble) else Ensemble(np.asarray(targets, dtype=float))
        if X.points.shape != Y.points.shape:
            raise ValueError(f"inputs {X.points.shape} and targets {Y.points.shape} differ in shape")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @property
    def N(self) -> int:
        return self.inputs.N

    @property
    def d(self) -> int:
        return self.inputs.d

    @classmethod
    def random(cls, N: int, d: int, seed: int, low: float = -1.0, high: float = 1.0) -> "Dataset":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, high, (N, d)), rng.uniform(low, high, (N, d)))

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.points.tolist(), "targets": self.targets.points.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Dataset":
        extra = set(data) - {"inputs", "targets"}
        if extra:
            raise ValueError(f"unknown dataset fields: {sorted(extra)}")
        return cls(data["inputs"], data["targets"])


@dataclass
class TrainConfig:
    family: ControlFamily
    num_segments: int = 12
    segment_duration: float = 0.5
    learning_rate: float = 1e-2
    lr_final: float | None = None  # exponential decay to this rate at max_iters; None = constant
    max_iters: int = 5000
    grad_tol: float = 0.0
    seed: int = 0
    step_size: float = DEFAULT_STEP
    loss_target: float = 1e-2  # max-norm interpolation tolerance
    init_scale: float = 0.1
    train_durations: bool = False
    steps_per_segment: int | None = None  # fixed step count used when durations are trained
    blowup_threshold: float = DEFAULT_BLOWUP
    max_reseeds: int = 10
    time_limit: float | None = None  # seconds; None = unlimited
    optimizer: str = "adam"  # "adam" | "lm" (Levenberg-Marquardt on the residuals)
    restarts: int = 0  # fresh seeded initialisations tried after a non-converged run
    param_penalty: float = 0.0  # adds param_penalty * |theta|^2 to the objective

    def __post_init__(self):
        if self.num_segments < 1:
            raise ValueError("num_segments must be >= 1")
        for name in ("segment_duration", "learning_rate", "step_size", "loss_target", "init_scale", "blowup_threshold"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")
        if self.optimizer not in ("adam", "lm"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "lm" and self.train_durations:
            raise ValueError("duration training is only available with the adam optimizer")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("lr_final must be positive")
        if self.max_iters < 0 or self.grad_tol < 0 or self.max_reseeds < 0 or self.restarts < 0 or self.param_penalty < 0:
            raise ValueError("max_iters, grad_tol and max_reseeds must be non-negative")

    @property
    def total_time(self) -> float:
        return self.num_segments * self.segment_duration

    _SCALARS = (
        "num_segments", "segment_duration", "learning_rate", "lr_final", "max_iters", "grad_tol", "seed",
        "step_size", "loss_target", "init_scale", "train_durations", "steps_per_segment",
        "blowup_threshold", "max_reseeds", "time_limit", "optimizer", "restarts", "param_penalty",
    )

    def to_dict(self) -> dict:
        out = {"family": self.family.describe()}
        out.update({k: getattr(self, k) for k in self._SCALARS})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        extra = set(data) - set(cls._SCALARS) - {"family"}
        if extra:
            raise ValueError(f"unknown train config fields: {sorted(extra)}")
        fam = family_from_spec(data.pop("family"))
        return cls(family=fam, **data)


@dataclass
class TrainReport:
    final_params: ControlSchedule
    final_max_error: float
    final_loss: float
    loss_history: list[float]
    best_loss_history: list[float]
    iterations_used: int
    converged: bool
    stop_reason: str
    reseeds: int = 0
    lr_cuts: int = 0
    diagnostics: list[str] = field(default_factory=list)
    restarts_used: int = 0

    def to_dict(self) -> dict:
        return {
            "final_params": self.final_params.to_dict(),
            "final_max_error": self.final_max_error,
            "final_loss": self.final_loss,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "reseeds": self.reseeds,
            "lr_cuts": self.lr_cuts,
            "restarts_used": self.restarts_used,
            "diagnostics": list(self.diagnostics),
        }

    def save(self, path) -> Path:
        """JSON report plus ``<stem>_loss.csv`` with the loss history."""
        path = Path(path)
        sidecar = path.with_name(path.stem + "_loss.csv")
        data = self.to_dict()
        data["loss_history_csv"] = sidecar.name
        path.write_text(json.dumps(data, indent=2))
        write_loss_csv(sidecar, self.loss_history, self.best_loss_history)
        return sidecar


def write_loss_csv(path, losses, best) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "best_loss"])
        for i, (a, b) in enumerate(zip(losses, best)):
            w.writerow([i, repr(float(a)), repr(float(b))])


class Adam:
    """Adam with bias correction, operating on flat float arrays."""

    def __init__(self, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- loss and exact discrete gradient ---------------------------------------------

@dataclass
class _Eval:
    loss: float
    max_error: float
    grad_params: np.ndarray | None  # (k, p)
    grad_durations: np.ndarray | None  # (k,) d loss / d duration for a fixed step count
    diagnostic: str = ""


def _grid(durations, step, steps_per_segment):
    if steps_per_segment is None:
        return step_grid(durations, step)
    n = int(steps_per_segment)
    hs = np.repeat(np.asarray(durations, dtype=float) / n, n)
    segs = np.repeat(np.arange(len(durations), dtype=np.int64), n)
    return hs, segs


def _evaluate(
    family: ControlFamily,
    schedule: ControlSchedule,
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray,
    step: float,
    threshold: float = DEFAULT_BLOWUP,
    with_grad: bool = True,
    steps_per_segment: int | None = None,
) -> _Eval:
    kp = family.kernel_params(schedule.params)
    hs, segs = _grid(schedule.durations, step, steps_per_segment)
    XT, traj, st, idx = _kernels.forward(*kp.args(), hs, segs, X, threshold, with_grad)
    if st:
        t = float(np.sum(hs[:idx]))
        return _Eval(math.inf, math.inf, None, None, f"trajectory blow-up in the step starting at t={t:.6g}")
    R = XT - Y
    L = float(np.sum(w * np.sum(R * R, axis=1)))
    maxerr = float(np.max(np.abs(R))) if R.size else 0.0
    if not with_grad:
        return _Eval(L, maxerr, None, None)
    Xbar = 2.0 * w[:, None] * R
    _, G1, G2, G3, hbar = _kernels.adjoint(*kp.args(), hs, segs, traj, Xbar)
    gp = family.project_grads(G1, G2, G3)
    gd = None
    if steps_per_segment is not None:
        gd = np.bincount(segs, weights=hbar, minlength=len(schedule.durations)) / steps_per_segment
    return _Eval(L, maxerr, gp, gd)


def _arrays(dataset: Dataset):
    X = np.ascontiguousarray(dataset.inputs.points)
    Y = np.ascontiguousarray(dataset.targets.points)
    return X, Y, np.full(X.shape[0], 1.0 / X.shape[0])


def loss(family: ControlFamily, schedule: ControlSchedule, dataset: Dataset, step: float = DEFAULT_STEP,
         blowup_threshold: float = DEFAULT_BLOWUP) -> float:
    """``(1/N) sum_i |phi(x_i) - y_i|_2^2``; ``inf`` when any trajectory blows up."""
    X, Y, w = _arrays(dataset)
    ev = _evaluate(family, schedule, X, Y, w, step, blowup_threshold, with_grad=False)
    if ev.diagnostic:
        log.info("loss: %s", ev.diagnostic)
    return ev.loss


def loss_and_grad(family, schedule, dataset, step=DEFAULT_STEP, blowup_threshold=DEFAULT_BLOWUP):
    X, Y, w = _arrays(dataset)
    ev = _evaluate(family, schedule, X, Y, w, step, blowup_threshold)
    if ev.grad_params is None:
        raise TrainingError(ev.diagnostic, stage="grad")
    return ev.loss, ev.grad_params


def grad(family: ControlFamily, schedule: ControlSchedule, dataset: Dataset, step: float = DEFAULT_STEP,
         blowup_threshold: float = DEFAULT_BLOWUP) -> np.ndarray:
    """Gradient of :func:`loss` with respect to ``schedule.params`` (same shape)."""
    return loss_and_grad(family, schedule, dataset, step, blowup_threshold)[1]


def residual_jacobian(family, schedule, X, Y, w, step, threshold=DEFAULT_BLOWUP):
    """Weighted residuals ``r = sqrt(w_i) (phi(x_i) - y_i)`` (flattened) and their
    Jacobian with respect to the flattened schedule parameters.

    Point ``i`` only sees its own trajectory, so row ``(i, j)`` is one reverse
    sweep over that single trajectory seeded with ``e_j``.
    """
    kp = family.kernel_params(schedule.params)
    hs, segs = step_grid(schedule.durations, step)
    XT, traj, st, _ = _kernels.forward(*kp.args(), hs, segs, X, threshold, True)
    if st:
        return None, None
    n, d = X.shape
    sw = np.sqrt(w)
    r = (sw[:, None] * (XT - Y)).ravel()
    Jac = np.empty((n * d, schedule.params.size))
    for i in range(n):
        ti = np.ascontiguousarray(traj[:, i:i + 1, :])
        for j in range(d):
            seed = np.zeros((1, d))
            seed[0, j] = sw[i]
            _, G1, G2, G3, _ = _kernels.adjoint(*kp.args(), hs, segs, ti, seed)
            Jac[i * d + j] = family.project_grads(G1, G2, G3).ravel()
    return r, Jac


# -- optimisation -------------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(t):
    return t + np.log(-np.expm1(-t))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_points(
    config: TrainConfig,
    X,
    Y,
    weights=None,
    init: ControlSchedule | None = None,
    stop_on_max_error: bool = True,
    callback: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Minimise ``sum_i w_i |phi(x_i) - y_i|^2`` (``w_i = 1/N`` by default).

    Unlike :func:`train` this accepts repeated targets and weights, which the
    quadrature-weighted objectives need.  With ``config.restarts > 0`` a run
    that misses the tolerance is repeated from the next seeded initialisation;
    the report with the lowest loss is returned, its ``loss_history`` holding
    every run back to back.
    """
    rng = np.random.default_rng(config.seed)
    reports = []
    for attempt in range(config.restarts + 1):
        rep = _fit_once(config, X, Y, weights, init if attempt == 0 else None, stop_on_max_error,
                        callback, rng)
        reports.append(rep)
        if rep.converged and stop_on_max_error:
            break
    if len(reports) == 1:
        return reports[0]
    chosen = next((r for r in reports if r.converged), None) or min(reports, key=lambda r: r.final_loss)
    losses = [v for r in reports for v in r.loss_history]
    bests = list(np.minimum.accumulate(losses))
    diags = [f"run {i}: {r.stop_reason}, max error {r.final_max_error:.3g}" for i, r in enumerate(reports)]
    return TrainReport(
        final_params=chosen.final_params,
        final_max_error=chosen.final_max_error,
        final_loss=chosen.final_loss,
        loss_history=losses,
        best_loss_history=bests,
        iterations_used=sum(r.iterations_used for r in reports),
        converged=chosen.converged,
        stop_reason=chosen.stop_reason,
        reseeds=sum(r.reseeds for r in reports),
        lr_cuts=sum(r.lr_cuts for r in reports),
        diagnostics=diags + [d for r in reports for d in r.diagnostics],
        restarts_used=len(reports) - 1,
    )


def _fit_once(
    config: TrainConfig,
    X,
    Y,
    weights,
    init: ControlSchedule | None,
    stop_on_max_error: bool,
    callback,
    rng: np.random.Generator,
) -> TrainReport:
    """One optimisation run.  If an Adam iterate blows up the optimiser returns
    to the last finite iterate and halves the learning rate."""
    import time

    fam = config.family
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    Y = np.ascontiguousarray(np.atleast_2d(np.asarray(Y, dtype=float)))
    if X.shape != Y.shape or X.shape[1] != fam.dimension:
        raise ValueError(f"inputs {X.shape} / targets {Y.shape} do not match family dimension {fam.dimension}")
    w = np.full(X.shape[0], 1.0 / X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    k, p = config.num_segments, fam.num_params
    spseg = config.steps_per_segment
    if config.train_durations and spseg is None:
        spseg = max(1, int(math.ceil(config.segment_duration / config.step_size)))
    diagnostics: list[str] = []

    def ev_at(theta, z, with_grad=True):
        durs = _softplus(z) if config.train_durations else np.full(k, config.segment_duration)
        sched = ControlSchedule(durs, theta)
        ev = _evaluate(fam, sched, X, Y, w, config.step_size, config.blowup_threshold, with_grad, spseg)
        if config.param_penalty:
            ev.loss += config.param_penalty * float(np.sum(theta * theta))
        return sched, ev

    z = np.full(k, _softplus_inv(config.segment_duration))
    reseeds = 0
    while True:
        if init is not None and reseeds == 0:
            if init.num_segments != k:
                raise ValueError("init schedule has the wrong number of segments")
            theta = np.array(init.params, dtype=float)
            if config.train_durations:
                z = _softplus_inv(np.asarray(init.durations))
        else:
            theta = config.init_scale * rng.standard_normal((k, p))
        sched, ev = ev_at(theta, z)
        if math.isfinite(ev.loss):
            break
        diagnostics.append(f"initialisation {reseeds}: {ev.diagnostic}")
        reseeds += 1
        if reseeds > config.max_reseeds:
            raise TrainingError(
                f"blow-up at initialisation persisted over {config.max_reseeds} reseeds", stage="init"
            )

    if config.optimizer == "lm":
        return _fit_lm(config, X, Y, w, theta, ev, reseeds, diagnostics, stop_on_max_error, callback)

    opt = Adam(config.learning_rate)
    x = np.concatenate([theta.ravel(), z]) if config.train_durations else theta.ravel().copy()
    best = (ev.loss, sched, ev.max_error)
    losses, bests = [], []
    lr_cuts = 0
    stop = "max_iters"
    last_good = (x.copy(), ev)
    t0 = time.perf_counter()
    it = 0
    while True:
        losses.append(ev.loss)
        if ev.loss < best[0]:
            best = (ev.loss, sched, ev.max_error)
        bests.append(best[0])
        if callback is not None:
            callback(it, ev.loss)
        if stop_on_max_error and ev.max_error <= config.loss_target:
            best = (ev.loss, sched, ev.max_error)
            stop = "loss_target"
            break
        g = ev.grad_params.ravel() + 2.0 * config.param_penalty * x[: k * p]
        if config.train_durations:
            g = np.concatenate([g, ev.grad_durations * _sigmoid(x[k * p:])])
        if np.max(np.abs(g)) <= config.grad_tol:
            stop = "grad_tol"
            break
        if it >= config.max_iters:
            break
        if config.time_limit is not None and time.perf_counter() - t0 > config.time_limit:
            stop = "time_limit"
            break
        if config.lr_final is not None and config.max_iters > 0:
            frac = min(it / config.max_iters, 1.0)
            opt.lr = config.learning_rate * (config.lr_final / config.learning_rate) ** frac * 0.5**lr_cuts
        x_new = opt.step(x, g)
        theta = x_new[: k * p].reshape(k, p)
        zz = x_new[k * p:] if config.train_durations else z
        sched_new, ev_new = ev_at(theta, zz)
        it += 1
        if not math.isfinite(ev_new.loss):
            # step overshot into a blow-up region: back off
            lr_cuts += 1
            opt.lr *= 0.5
            diagnostics.append(f"iteration {it}: {ev_new.diagnostic}; learning rate -> {opt.lr:.3g}")
            if lr_cuts > 60:
                stop = "blow_up"
                break
            x = last_good[0].copy()
            ev = last_good[1]
            continue
        x, sched, ev = x_new, sched_new, ev_new
        last_good = (x.copy(), ev)

    final_loss, final_sched, final_err = best
    return TrainReport(
        final_params=final_sched,
        final_max_error=final_err,
        final_loss=final_loss,
        loss_history=losses,
        best_loss_history=bests,
        iterations_used=it,
        converged=final_err <= config.loss_target,
        stop_reason=stop,
        reseeds=reseeds,
        lr_cuts=lr_cuts,
        diagnostics=diagnostics,
    )


def _fit_lm(config, X, Y, w, theta, ev, reseeds, diagnostics, stop_on_max_error, callback):
    """Levenberg-Marquardt with Nielsen's damping update."""
    import time

    fam = config.family
    k = config.num_segments
    durs = np.full(k, config.segment_duration)
    x = theta.ravel().copy()
    sched = ControlSchedule(durs, theta)
    lam = config.param_penalty
    r, Jac = residual_jacobian(fam, sched, X, Y, w, config.step_size, config.blowup_threshold)
    cur = float(r @ r) + lam * float(x @ x)
    mu, nu = None, 2.0
    losses, bests = [], []
    best = (cur, sched, ev.max_error)
    maxerr = ev.max_error
    stop = "max_iters"
    t0 = time.perf_counter()
    it = 0
    while True:
        losses.append(cur)
        if cur < best[0]:
            best = (cur, sched, maxerr)
        bests.append(best[0])
        if callback is not None:
            callback(it, cur)
        if stop_on_max_error and maxerr <= config.loss_target:
            best = (cur, sched, maxerr)
            stop = "loss_target"
            break
        g = Jac.T @ r + lam * x
        if np.max(np.abs(g)) <= config.grad_tol:
            stop = "grad_tol"
            break
        if it >= config.max_iters:
            break
        if config.time_limit is not None and time.perf_counter() - t0 > config.time_limit:
            stop = "time_limit"
            break
        H = Jac.T @ Jac + lam * np.eye(x.size)
        if mu is None:
            mu = 1e-3 * float(np.max(np.diag(H)))
        it += 1
        delta = -np.linalg.solve(H + mu * np.eye(x.size), g)
        x_new = x + delta
        s_new = ControlSchedule(durs, x_new.reshape(theta.shape))
        r_new, J_new = residual_jacobian(fam, s_new, X, Y, w, config.step_size, config.blowup_threshold)
        pred = -(2.0 * g @ delta + delta @ (H @ delta))
        new = float(r_new @ r_new) + lam * float(x_new @ x_new) if r_new is not None else math.inf
        rho = (cur - new) / pred if pred > 0 else -1.0
        if math.isfinite(new) and rho > 0:
            x, sched, r, Jac, cur = x_new, s_new, r_new, J_new, new
            maxerr = float(np.max(np.abs(r.reshape(X.shape) / np.sqrt(w)[:, None])))
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            if not math.isfinite(new):
                diagnostics.append(f"iteration {it}: trial step blew up; damping increased")
            mu *= nu
            nu *= 2.0
            if mu > 1e16:
                stop = "stalled"
                break
    final_loss, final_sched, final_err = best
    return TrainReport(
        final_params=final_sched,
        final_max_error=final_err,
        final_loss=final_loss,
        loss_history=losses,
        best_loss_history=bests,
        iterations_used=it,
        converged=final_err <= config.loss_target,
        stop_reason=stop,
        reseeds=reseeds,
        diagnostics=diagnostics,
    )


def train(config: TrainConfig, dataset: Dataset, init: ControlSchedule | None = None) -> TrainReport:
    """Adam from a seeded ``N(0, init_scale^2)`` start.

    Stops when ``max_i |phi(x_i) - y_i|_inf <= loss_target``, when the gradient
    max-norm drops to ``grad_tol``, or after ``max_iters`` updates, and returns
    the best parameters seen.
    """
    if dataset.d != config.family.dimension:
        raise ValueError("dataset dimension does not match the family")
    X, Y, _ = _arrays(dataset)
    return fit_points(config, X, Y, init=init)


def affine_least_squares_residual(X, Y) -> float:
    """``min_{M, c} (1/N) sum_i |M x_i + c - y_i|^2``: the floor for any affine map."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    D = np.hstack([X, np.ones((X.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(D, Y, rcond=None)
    R = D @ coef - Y
    return float(np.sum(R * R) / X.shape[0])


# -- shrink, then interpolate cell centres ----------------------------------------------

@dataclass
class ShrinkInterpolateResult:
    schedule: ControlSchedule  # full composite on the 2-D family
    shrink_schedule: ControlSchedule
    interp_schedule: ControlSchedule
    lp_error: float
    p: float
    cells: int
    shrink_report: TrainReport
    interp_report: TrainReport

    def to_dict(self) -> dict:
        return {
            "lp_error": self.lp_error,
            "p": self.p,
            "cells_per_axis": self.cells,
            "shrink_loss": self.shrink_report.final_loss,
            "interp_max_error": self.interp_report.final_max_error,
            "interp_converged": self.interp_report.converged,
            "schedule": self.schedule.to_dict(),
        }


def lift_shared_1d(schedule_1d: ControlSchedule) -> ControlSchedule:
    """Embed a cubic-quadratic 1-D schedule ``(t1, t2)`` into the origin-fixed
    family as ``(t1, t2, 0, t1, t2, 0)``: both coordinates follow the same 1-D flow."""
    P = schedule_1d.params
    z = np.zeros((P.shape[0], 1))
    return ControlSchedule(schedule_1d.durations, np.hstack([P, z, P, z]))


def _cell_samples(centres, width, per_cell):
    """Midpoint samples of every cell plus the two outer edges of the interval."""
    offs = (np.arange(per_cell) + 0.5) / per_cell - 0.5
    inner = (centres[:, None] + width * offs[None, :]).ravel()
    lo, hi = centres[0] - width / 2, centres[-1] + width / 2
    xs = np.concatenate([[lo], inner, [hi]])
    owner = np.concatenate([[0], np.repeat(np.arange(centres.size), per_cell), [centres.size - 1]])
    return xs, owner


def _escaping_nodes(family, schedule, pts, step) -> np.ndarray:
    """Indices of the points whose flow blows up, by bisecting the batch."""
    if len(pts) == 0 or not flow_points(family, schedule, pts, step).blew_up:
        return np.zeros(0, dtype=int)
    if len(pts) == 1:
        return np.zeros(1, dtype=int)
    mid = len(pts) // 2
    left = _escaping_nodes(family, schedule, pts[:mid], step)
    right = _escaping_nodes(family, schedule, pts[mid:], step)
    return np.concatenate([left, right + mid])


def shrink_then_interpolate(
    target,
    cells: int,
    lo: float = -1.0,
    hi: float = 1.0,
    shrink_config: TrainConfig | None = None,
    interp_config: TrainConfig | None = None,
    shrink_samples: int = 16,
    interp_samples: int = 3,
    p: float = 1.0,
    resolution: int = 101,
    max_refits: int = 2,
) -> ShrinkInterpolateResult:
    """Approximate ``target`` on ``[lo, hi]^2`` with the origin-fixed family.

    Stage 1 trains one monotone 1-D flow (decoupled dynamics, the same flow in
    both coordinates) that pulls the samples of each of the ``cells``
    intervals towards the interval midpoint, so the square collapses towards
    the ``cells x cells`` grid of cell centres.  Stage 2 trains the full
    family to carry the stage-1 images of a small sample grid in every cell
    (``interp_samples`` per axis, box edges included) to ``target`` at that
    cell's centre.  The composite schedule is scored by the probability-
    normalised ``L^p`` error on a tensor trapezoid grid of the box.

    The default stage-2 config adds a small ``|theta|^2`` penalty; without it
    the fit can park large weights that blow up between the samples.  Any
    quadrature node that still escapes under the composite flow is added to
    the stage-2 samples (target: its cell's centre) and stage 2 is refit, up
    to ``max_refits`` times.

    Both stages train on the box edges as well: the cubic terms would
    otherwise let the quadrature nodes on the boundary escape to infinity.
    """
    from .approx import DomainSpec, TargetFunction, lp_error

    tgt = TargetFunction.coerce(target)
    edges = np.linspace(lo, hi, cells + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    width = (hi - lo) / cells

    sc = shrink_config or TrainConfig(cubic_quadratic_family(), num_segments=8, segment_duration=0.5,
                                      max_iters=100, optimizer="lm", step_size=0.02, seed=0)
    if sc.family.dimension != 1:
        raise ValueError("shrink stage needs a one-dimensional family")
    xs, owner = _cell_samples(centres, width, shrink_samples)
    try:
        rep1 = fit_points(sc, xs[:, None], centres[owner][:, None], stop_on_max_error=False)
    except TrainingError as exc:
        raise TrainingError(str(exc), stage="shrink") from exc
    if not math.isfinite(rep1.final_loss):
        raise TrainingError("shrink stage diverged", stage="shrink")
    s1 = lift_shared_1d(rep1.final_params)

    fam2 = origin_fixed_family()
    ic = interp_config or TrainConfig(fam2, num_segments=12, segment_duration=0.25, max_iters=150,
                                      optimizer="lm", step_size=sc.step_size, seed=0,
                                      param_penalty=1e-4)
    if ic.step_size != sc.step_size:
        raise ValueError("both stages must use the same integration step")
    ax, own = _cell_samples(centres, width, interp_samples)
    P = np.array([[a, b] for a in ax for b in ax])
    C = np.array([[centres[i], centres[j]] for i in own for j in own])
    bf = flow_points(fam2, s1, P, sc.step_size)
    if bf.blew_up:
        raise TrainingError("shrink flow blew up on the interpolation samples", stage="shrink")
    dom = DomainSpec.box([lo, lo], [hi, hi], resolution=resolution)
    nodes = dom.nodes()[0]
    src, dst = bf.X, tgt(C)
    notes = []
    for refit in range(max_refits + 1):
        try:
            rep2 = fit_points(ic, src, dst, stop_on_max_error=False)
        except TrainingError as exc:
            raise TrainingError(str(exc), stage="interpolate") from exc
        composite = s1 + rep2.final_params
        bad = _escaping_nodes(fam2, composite, nodes, sc.step_size)
        if bad.size == 0 or refit == max_refits:
            break
        extra = nodes[bad]
        img = flow_points(fam2, s1, extra, sc.step_size).X
        keep = np.all(np.isfinite(img), axis=1)
        cell = np.clip(np.floor((extra[keep] - lo) / width).astype(int), 0, cells - 1)
        src = np.vstack([src, img[keep]])
        dst = np.vstack([dst, tgt(centres[cell])])
        notes.append(f"{bad.size} quadrature nodes escaped; refitting with them as samples")
    rep2.diagnostics[:0] = notes
    err = lp_error(fam2, composite, tgt, dom, p=p, step=sc.step_size, normalize=True)
    return ShrinkInterpolateResult(composite, s1, rep2.final_params, err, p, cells, rep1, rep2)
