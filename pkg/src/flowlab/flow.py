"""Flow maps of piecewise-constant controls, integrated with fixed-step RK4."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .families import ControlFamily

__all__ = [
    "ControlSchedule",
    "FlowResult",
    "BatchFlow",
    "step_grid",
    "flow_points",
    "integrate",
    "integrate_with_jacobian",
    "gronwall_check",
    "monotone_1d_check",
    "DEFAULT_STEP",
    "DEFAULT_BLOWUP",
]

DEFAULT_STEP = 1e-2
DEFAULT_BLOWUP = 1e8
_BOUNDARY_EPS = 1e-12


@dataclass(frozen=True)
class ControlSchedule:
    """Ordered ``(duration, params)`` segments; the flow of segment 1 is applied first."""

    durations: tuple[float, ...]
    params: np.ndarray  # (k, p)

    def __init__(self, durations: Sequence[float], params):
        durs = tuple(float(t) for t in durations)
        p = np.array(params, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if not durs:
            raise ValueError("schedule needs at least one segment")
        if p.shape[0] != len(durs):
            raise ValueError(f"{len(durs)} durations but {p.shape[0]} parameter rows")
        if any(not (t > 0 and math.isfinite(t)) for t in durs):
            raise ValueError("segment durations must be positive and finite")
        p.setflags(write=False)
        object.__setattr__(self, "durations", durs)
        object.__setattr__(self, "params", p)

    @classmethod
    def constant(cls, params, total_time: float) -> "ControlSchedule":
        return cls([total_time], [params])

    @classmethod
    def uniform(cls, params_rows, total_time: float) -> "ControlSchedule":
        rows = np.atleast_2d(np.asarray(params_rows, dtype=float))
        k = rows.shape[0]
        return cls([total_time / k] * k, rows)

    @property
    def total_time(self) -> float:
        return float(sum(self.durations))

    @property
    def num_segments(self) -> int:
        return len(self.durations)

    def __add__(self, other: "ControlSchedule") -> "ControlSchedule":
        return ControlSchedule(self.durations + other.durations, np.vstack([self.params, other.params]))

    def reversed(self, negate: bool = True) -> "ControlSchedule":
        """Segments in reverse order, parameters negated (inverse flow for affine families)."""
        p = self.params[::-1]
        return ControlSchedule(self.durations[::-1], -p if negate else p)

    def to_dict(self) -> dict:
        return {
            "segments": [
                {"duration": t, "params": [float(v) for v in row]}
                for t, row in zip(self.durations, self.params)
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlSchedule":
        extra = set(data) - {"segments"}
        if extra:
            raise ValueError(f"unknown schedule fields: {sorted(extra)}")
        segs = data["segments"]
        for s in segs:
            bad = set(s) - {"duration", "params"}
            if bad:
                raise ValueError(f"unknown segment fields: {sorted(bad)}")
        return cls([s["duration"] for s in segs], [s["params"] for s in segs])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ControlSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def step_grid(durations: Sequence[float], step: float) -> tuple[np.ndarray, np.ndarray]:
    """Step lengths and owning segment index for every RK4 step.

    Each segment is cut into full steps of length ``step``; a shorter last
    step lands exactly on the segment boundary.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    hs: list[float] = []
    segs: list[int] = []
    for s, tau in enumerate(durations):
        n_full = int(math.floor(tau / step + _BOUNDARY_EPS))
        rem = tau - n_full * step
        hs.extend([step] * n_full)
        segs.extend([s] * n_full)
        if rem > _BOUNDARY_EPS * max(tau, 1.0):
            hs.append(rem)
            segs.append(s)
    return np.asarray(hs, dtype=float), np.asarray(segs, dtype=np.int64)


@dataclass
class FlowResult:
    endpoint: np.ndarray
    step_size: float
    blew_up: bool = False
    blowup_time: float | None = None
    diagnostic: str = ""
    jacobian: np.ndarray | None = None
    logdet: float | None = None
    nonsmooth: bool = False
    trajectory: list[tuple[float, np.ndarray]] | None = None

    def to_dict(self) -> dict:
        out = {
            "endpoint": self.endpoint.tolist(),
            "step_size": self.step_size,
            "blew_up": self.blew_up,
            "blowup_time": self.blowup_time,
            "diagnostic": self.diagnostic,
        }
        if self.jacobian is not None:
            out["jacobian"] = self.jacobian.tolist()
            out["logdet"] = self.logdet
            out["nonsmooth"] = self.nonsmooth
        return out

    def write_trajectory_csv(self, path) -> None:
        if self.trajectory is None:
            raise ValueError("trajectory was not recorded")
        d = self.endpoint.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for t, x in self.trajectory:
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


@dataclass
class BatchFlow:
    """Endpoints of many points under one schedule (the ensemble flow)."""

    X: np.ndarray
    status: int
    fail_time: float | None
    fail_step: int | None
    hs: np.ndarray = field(repr=False)
    segs: np.ndarray = field(repr=False)
    traj: np.ndarray | None = field(default=None, repr=False)

    @property
    def blew_up(self) -> bool:
        return self.status != 0


def _fail_time(hs, idx) -> float:
    return float(np.sum(hs[:idx]))


def flow_points(
    family: ControlFamily,
    schedule: ControlSchedule,
    X0,
    step: float = DEFAULT_STEP,
    blowup_threshold: float = DEFAULT_BLOWUP,
    store: bool = False,
) -> BatchFlow:
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != family.dimension:
        raise ValueError(f"points have dimension {X0.shape[1]}, family has {family.dimension}")
    kp = family.kernel_params(schedule.params)
    hs, segs = step_grid(schedule.durations, step)
    X, traj, st, idx = _kernels.forward(*kp.args(), hs, segs, X0, blowup_threshold, store)
    return BatchFlow(
        X=X,
        status=int(st),
        fail_time=_fail_time(hs, idx) if st else None,
        fail_step=int(idx) if st else None,
        hs=hs,
        segs=segs,
        traj=traj if store else None,
    )


def _diagnostic(status: int, t) -> str:
    if status == 1:
        return f"state exceeded blow-up threshold in the step starting at t={t:.6g}"
    if status == 2:
        return f"non-finite state in the step starting at t={t:.6g}"
    return ""


def integrate(
    family: ControlFamily,
    schedule: ControlSchedule,
    x0,
    step: float = DEFAULT_STEP,
    blowup_threshold: float = DEFAULT_BLOWUP,
    record_every: int | None = None,
) -> FlowResult:
    """Endpoint of the flow from ``x0``.  ``record_every=k`` keeps every k-th state."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    bf = flow_points(family, schedule, x0[None, :], step, blowup_threshold, store=record_every is not None)
    traj = None
    if record_every is not None:
        k = max(int(record_every), 1)
        times = np.concatenate([[0.0], np.cumsum(bf.hs)])
        last = bf.traj.shape[0] - 1 if not bf.blew_up else bf.fail_step + 1
        idx = list(range(0, last + 1, k))
        if idx[-1] != last:
            idx.append(last)
        traj = [(float(times[i]), bf.traj[i, 0].copy()) for i in idx]
    return FlowResult(
        endpoint=bf.X[0].copy(),
        step_size=float(step),
        blew_up=bf.blew_up,
        blowup_time=bf.fail_time,
        diagnostic=_diagnostic(bf.status, bf.fail_time),
        trajectory=traj,
    )


def integrate_with_jacobian(
    family: ControlFamily,
    schedule: ControlSchedule,
    x0,
    step: float = DEFAULT_STEP,
    blowup_threshold: float = DEFAULT_BLOWUP,
) -> FlowResult:
    """Endpoint plus the flow Jacobian ``J`` (``J' = Df J``) and the integrated
    divergence ``L`` (``L' = div f``), which is ``log det J`` for the exact flow.

    ReLU families use the a.e. derivative with ``relu'(0) = 0`` and are
    flagged ``nonsmooth``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != family.dimension:
        raise ValueError(f"x0 has dimension {x0.shape[1]}, family has {family.dimension}")
    kp = family.kernel_params(schedule.params)
    hs, segs = step_grid(schedule.durations, step)
    X, J, L, st, idx = _kernels.variational(*kp.args(), hs, segs, x0, blowup_threshold)
    t = _fail_time(hs, idx) if st else None
    return FlowResult(
        endpoint=X[0].copy(),
        step_size=float(step),
        blew_up=bool(st),
        blowup_time=t,
        diagnostic=_diagnostic(st, t),
        jacobian=J[0].copy(),
        logdet=float(L[0]),
        nonsmooth=not family.smooth,
    )


@dataclass
class GronwallReport:
    applicable: bool
    bound_norm_ok: bool
    bound_lip_ok: bool
    norm_margin: float  # min over steps of (bound - |x(t)|_1); >= 0 when the bound holds
    lip_margin: float  # min over steps and companions of (bound - |x(t) - x~(t)|_1)
    max_lip_ratio: float  # max of |dx(t)|_1 / (exp(L t) |dx(0)|_1)
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def gronwall_check(
    family: ControlFamily,
    schedule: ControlSchedule,
    x0,
    step: float,
    c1: float,
    c2: float,
    L: float,
    delta: float = 1e-3,
    rtol: float = 1e-9,
    blowup_threshold: float = DEFAULT_BLOWUP,
) -> GronwallReport:
    """Check ``|x(t)|_1 <= (|x0|_1 + c1 t) e^{c2 t}`` and
    ``|x(t) - x~(t)|_1 <= e^{L t} |x0 - x~0|_1`` at every RK4 step.

    Companions ``x~0`` are ``x0`` shifted by ``delta`` along one coordinate at a
    time.  ``rtol`` absorbs round-off when a bound is attained with equality.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.shape[0]
    starts = np.vstack([x0[None, :], x0[None, :] + delta * np.eye(d)])
    bf = flow_points(family, schedule, starts, step, blowup_threshold, store=True)
    if bf.blew_up:
        return GronwallReport(False, False, False, float("nan"), float("nan"), float("nan"),
                              _diagnostic(bf.status, bf.fail_time))
    times = np.concatenate([[0.0], np.cumsum(bf.hs)])
    traj = bf.traj  # (nsteps+1, d+1, d)
    norm = np.abs(traj[:, 0, :]).sum(axis=1)
    bound = (np.abs(x0).sum() + c1 * times) * np.exp(c2 * times)
    norm_gap = bound - norm
    norm_ok = bool(np.all(norm_gap >= -rtol * np.maximum(bound, 1.0)))

    dist = np.abs(traj[:, 1:, :] - traj[:, :1, :]).sum(axis=2)  # (steps, d)
    dist0 = np.abs(starts[1:] - starts[:1]).sum(axis=1)
    lbound = np.exp(L * times)[:, None] * dist0[None, :]
    lip_gap = lbound - dist
    lip_ok = bool(np.all(lip_gap >= -rtol * lbound))
    return GronwallReport(
        applicable=True,
        bound_norm_ok=norm_ok,
        bound_lip_ok=lip_ok,
        norm_margin=float(norm_gap.min()),
        lip_margin=float(lip_gap.min()),
        max_lip_ratio=float((dist / lbound).max()),
    )


def monotone_1d_check(
    family: ControlFamily,
    schedule: ControlSchedule,
    points,
    step: float = DEFAULT_STEP,
    blowup_threshold: float = DEFAULT_BLOWUP,
) -> bool | None:
    """True iff the one-dimensional flow keeps strictly increasing points strictly
    increasing; ``None`` (indeterminate) when any point blows up."""
    if family.dimension != 1:
        raise ValueError("monotone_1d_check needs a one-dimensional family")
    pts = np.asarray(points, dtype=float).reshape(-1)
    if np.any(np.diff(pts) <= 0):
        raise ValueError("points must be strictly increasing")
    bf = flow_points(family, schedule, pts[:, None], step, blowup_threshold)
    if bf.blew_up:
        return None
    return bool(np.all(np.diff(bf.X[:, 0]) > 0))
