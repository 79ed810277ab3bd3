"""Tracking tasks, hierarchy ordering, costs and priority bounds.

A task maps robot states to a tracking error vector over the horizon; a
hierarchy is a strictly ordered list of tasks. After a higher-priority
stage is solved, its per-step, per-component absolute errors become bounds
that later stages may not exceed, which is what makes the cascade
lexicographic rather than weighted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin

EE_POSITION = "ee_position"
BASE_POSE = "base_pose"
CONFIGURATION_HOLD = "configuration_hold"


@dataclass(frozen=True)
class Task:
    """One tracking task with references over the horizon.

    ``reference`` has N+1 rows (one per step). For ``ee_position`` rows are
    2D workspace targets; for ``base_pose`` rows are (x, y) or (x, y,
    heading); for ``configuration_hold`` rows hold targets for the
    configuration indices in ``config_indices``. ``stage_weight`` and
    ``terminal_weight`` are PSD matrices of the error dimension.
    """

    kind: str
    reference: np.ndarray
    stage_weight: np.ndarray
    terminal_weight: np.ndarray | None = None
    config_indices: tuple[int, ...] = ()
    name: str = "task"
    role: str = ""

    def __post_init__(self):
        if self.kind not in (EE_POSITION, BASE_POSE, CONFIGURATION_HOLD):
            raise ValueError(f"unknown task kind {self.kind!r}")
        object.__setattr__(self, "reference", np.atleast_2d(np.asarray(self.reference, float)))
        object.__setattr__(self, "stage_weight", np.asarray(self.stage_weight, dtype=float))
        tw = self.stage_weight if self.terminal_weight is None else np.asarray(
            self.terminal_weight, dtype=float
        )
        object.__setattr__(self, "terminal_weight", tw)
        if self.kind == CONFIGURATION_HOLD and not self.config_indices:
            raise ValueError("configuration_hold requires config_indices")
        for w in (self.stage_weight, self.terminal_weight):
            if w.shape != (self.dim, self.dim):
                raise ValueError(f"weight must be ({self.dim}, {self.dim})")
            if not np.allclose(w, w.T, atol=1e-12):
                raise ValueError("weights must be symmetric")
            if np.linalg.eigvalsh(w).min() < -1e-10:
                raise ValueError("weights must be PSD")

    @property
    def dim(self) -> int:
        if self.kind == EE_POSITION:
            return 2
        if self.kind == BASE_POSE:
            return self.reference.shape[1]
        return len(self.config_indices)

    @property
    def horizon(self) -> int:
        return self.reference.shape[0] - 1

    @property
    def tracks_heading(self) -> bool:
        return self.kind == BASE_POSE and self.reference.shape[1] == 3


@dataclass(frozen=True)
class TaskHierarchy:
    """Strictly ordered tasks (index 0 = highest priority) plus the effort
    regularizer weight applied to every stage."""

    tasks: tuple[Task, ...]
    effort_weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "effort_weight", np.asarray(self.effort_weight, dtype=float))
        if len(self.tasks) < 1:
            raise ValueError("hierarchy needs at least one task")
        w = self.effort_weight
        if not np.allclose(w, w.T, atol=1e-12) or np.linalg.eigvalsh(w).min() < -1e-10:
            raise ValueError("effort weight must be symmetric PSD")


@dataclass(frozen=True)
class LexBounds:
    """Per prior task: array of |e*| bounds, shape (N+1, task dim)."""

    bounds: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(np.asarray(b, float) for b in self.bounds))
        for b in self.bounds:
            if np.any(b < 0):
                raise ValueError("lexicographic bounds must be nonnegative")

    @property
    def total_count(self) -> int:
        return sum(b.size for b in self.bounds)


def evaluate_task_error(task: Task, model: kin.RobotModel, state: kin.RobotState, k: int):
    """Tracking error e_k of one task at horizon step k."""
    if not 0 <= k <= task.horizon:
        raise ValueError(f"step {k} outside horizon 0..{task.horizon}")
    ref = task.reference[k]
    if task.kind == EE_POSITION:
        fk = kin.forward_kinematics(model, state.q)
        return fk.ee_position - ref
    if task.kind == BASE_POSE:
        err = state.q[:2] - ref[:2]
        if task.tracks_heading:
            err = np.append(err, kin.wrap_angle(state.q[2] - ref[2]))
        return err
    return state.q[list(task.config_indices)] - ref


def task_cost(task: Task, model: kin.RobotModel, trajectory) -> float:
    """Accumulated weighted tracking cost over a state trajectory:
    half the stage-weighted sum over steps 0..N-1 plus the unhalved
    terminal term."""
    trajectory = list(trajectory)
    if len(trajectory) != task.horizon + 1:
        raise ValueError(f"trajectory must have {task.horizon + 1} states")
    total = 0.0
    for k, state in enumerate(trajectory[:-1]):
        e = evaluate_task_error(task, model, state, k)
        total += 0.5 * float(e @ task.stage_weight @ e)
    e_n = evaluate_task_error(task, model, trajectory[-1], task.horizon)
    total += float(e_n @ task.terminal_weight @ e_n)
    return total


def effort_cost(controls, weight) -> float:
    """Half the weighted squared control magnitudes summed over the horizon."""
    weight = np.asarray(weight, dtype=float)
    total = 0.0
    for u in controls:
        u = np.asarray(u, dtype=float)
        total += 0.5 * float(u @ weight @ u)
    return total


def lexicographic_bounds(prior_trajectories, prior_tasks, model: kin.RobotModel) -> LexBounds:
    """Bounds |e*| from each prior task evaluated on its own solved
    trajectory, per step and per component (never aggregated)."""
    if len(prior_trajectories) != len(prior_tasks):
        raise ValueError("one solved trajectory required per prior task")
    out = []
    for task, traj in zip(prior_tasks, prior_trajectories):
        traj = list(traj)
        if len(traj) != task.horizon + 1:
            raise ValueError(
                f"missing prior solution steps for task {task.name!r}"
            )
        rows = [
            np.abs(evaluate_task_error(task, model, state, k))
            for k, state in enumerate(traj)
        ]
        out.append(np.asarray(rows))
    return LexBounds(tuple(out))
