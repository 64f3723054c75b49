"""Adam and the alternating per-group optimization schedule."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import accel, grad, metrics, render
from .sampling import mix64
from .scene import RenderConfig, Scene, ViewObservation

log = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = {"diffuse": 0.1, "geometry": 0.5, "lights": 0.05, "specular": 0.01}
DEFAULT_STAGE_ORDER = ("diffuse", "geometry", "lights", "specular")
# geometry learning rates are in units of this fraction of the bounding radius
GEOMETRY_LR_UNIT = 1e-3


@dataclass
class AdamState:
    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, shape, learning_rate: float, **kw) -> "AdamState":
        return cls(learning_rate, np.zeros(shape), np.zeros(shape), **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns new params and advances ``state``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    state.step_count += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.v / (1.0 - state.beta2 ** state.step_count)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def project_group(scene: Scene, group: str, values: np.ndarray) -> np.ndarray:
    """Feasible values for one group with every other group held fixed."""
    if group == "diffuse":
        return np.clip(values, 0.0, 1.0 - scene.mesh.specular)
    if group == "specular":
        return np.clip(values, 0.0, 1.0 - scene.mesh.diffuse)
    if group == "lights":
        return np.maximum(values, 0.0)
    return values


def group_values(scene: Scene, group: str) -> np.ndarray:
    if group == "diffuse":
        return scene.mesh.diffuse
    if group == "specular":
        return scene.mesh.specular
    if group == "lights":
        return scene.light_intensities()
    if group == "geometry":
        return scene.mesh.vertices
    raise ValueError(f"unknown parameter group {group!r}")


def with_group(scene: Scene, group: str, values: np.ndarray) -> Scene:
    if group == "diffuse":
        return scene.with_mesh(scene.mesh.with_albedo(diffuse=values))
    if group == "specular":
        return scene.with_mesh(scene.mesh.with_albedo(specular=values))
    if group == "lights":
        return scene.with_light_intensities(values)
    if group == "geometry":
        return scene.with_mesh(scene.mesh.with_vertices(values))
    raise ValueError(f"unknown parameter group {group!r}")


@dataclass
class Schedule:
    stage_order: tuple = DEFAULT_STAGE_ORDER
    inner_iterations: int = 400
    outer_cycles: int = 1
    view_batch: int = 1
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LEARNING_RATES))
    laplacian_weight: float = 0.1
    # fraction of a stage's final iterates averaged into the stage result
    tail_average: float = 0.5
    eval_spp: int = 16
    tolerance: float = 1e-3
    # reuse config.seed every iteration and take the residual from the same
    # render, so each stage minimizes one fixed deterministic objective
    fixed_samples: bool = False
    # learning rates of cycle c are scaled by cycle_decay ** c
    cycle_decay: float = 0.5

    def __post_init__(self):
        order = tuple(self.stage_order)
        if len(set(order)) != len(order):
            raise ValueError("a group may appear only once per cycle")
        for g in order:
            if g not in grad.GROUPS:
                raise ValueError(f"unknown parameter group {g!r}")
        if self.view_batch < 1:
            raise ValueError("view_batch must be >= 1")
        if not 0.0 < self.cycle_decay <= 1.0:
            raise ValueError("cycle_decay must lie in (0, 1]")
        if not 0.0 <= self.tail_average < 1.0:
            raise ValueError("tail_average must lie in [0, 1)")
        self.stage_order = order


@dataclass
class TraceRow:
    iteration: int
    stage: str
    objective: float
    held_out_psnr: Optional[float] = None


def iteration_seed(base: int, counter: int, stream: int = 0) -> int:
    return int(mix64(np.uint64(base) ^ np.uint64(counter * 2 + stream + 1)))


def effective_learning_rate(scene: Scene, group: str, schedule: Schedule, cycle: int = 0) -> float:
    lr = float(schedule.learning_rates[group]) * schedule.cycle_decay ** cycle
    if group == "geometry":
        lr *= GEOMETRY_LR_UNIT * scene.mesh.bounding_sphere()[1]
    return lr


def run_stage(scene: Scene, observations: Sequence[ViewObservation], group: str, schedule: Schedule,
              config: RenderConfig, rng: np.random.Generator, counter: int = 0,
              rest_vertices: Optional[np.ndarray] = None, backend: Optional[str] = None, cycle: int = 0):
    """Optimize one parameter group with the others frozen.

    Each iteration samples ``view_batch`` views, renders them with a fresh
    seed, takes the residual from an independent render and applies one Adam
    step to the group. For geometry the Laplacian penalty acts on the
    displacement from ``rest_vertices`` (defaults to the stage start). Learning
    rates shrink by ``schedule.cycle_decay`` per outer ``cycle``.
    Returns ``(scene, trace, counter)``.
    """
    lr = effective_learning_rate(scene, group, schedule, cycle)
    values = group_values(scene, group).copy()
    state = AdamState.zeros(values.shape, lr)
    trace = []
    iters = schedule.inner_iterations
    if iters <= 0 or lr == 0.0:
        return scene, trace, counter
    bvh = accel.build_bvh(scene.mesh)
    lap = None
    if group == "geometry":
        lap = grad.uniform_laplacian(scene.mesh.num_vertices, scene.mesh.faces)
        rest = scene.mesh.vertices.copy() if rest_vertices is None else rest_vertices
    tail_start = iters - int(round(schedule.tail_average * iters))
    tail_sum = np.zeros_like(values)
    tail_n = 0
    n_views = len(observations)
    for it in range(iters):
        batch = rng.choice(n_views, size=min(schedule.view_batch, n_views), replace=False)
        if schedule.fixed_samples:
            cfg, residual_seed = config, None
        else:
            cfg = RenderConfig(config.spp, config.max_bounces, iteration_seed(config.seed, counter), config.downsample)
            residual_seed = iteration_seed(config.seed, counter, 1)
        res = grad.backward(scene, [observations[i] for i in batch], cfg, groups=[group], bvh=bvh,
                            residual_seed=residual_seed, backend=backend)
        g = res.gradients.group(group)
        if lap is not None and schedule.laplacian_weight > 0.0:
            _, g_lap = grad.laplacian_regularizer(scene.mesh.vertices - rest, scene.mesh.faces,
                                                  schedule.laplacian_weight, operator=lap)
            g = g + g_lap
        values = project_group(scene, group, adam_step(state, values, g))
        scene = with_group(scene, group, values)
        if group == "geometry":
            bvh = accel.build_bvh(scene.mesh)
        if it >= tail_start:
            tail_sum += values
            tail_n += 1
        trace.append(TraceRow(counter, group, res.value))
        counter += 1
    if tail_n > 1:
        values = project_group(scene, group, tail_sum / tail_n)
        scene = with_group(scene, group, values)
    return scene, trace, counter


@dataclass
class HeldOutEvaluator:
    observation: ViewObservation
    config: RenderConfig
    spp: int = 16

    def __post_init__(self):
        self.view = self.observation.downsampled(self.config.downsample)
        self.render_config = RenderConfig(self.spp, self.config.max_bounces, self.config.seed, 1)

    def image(self, scene: Scene) -> np.ndarray:
        return render.render(scene, accel.build_bvh(scene.mesh), self.view.camera, self.render_config).pixels

    def evaluate(self, scene: Scene):
        img = self.image(scene)
        obj = grad.objective([img], [self.view])
        report = metrics.compare(img, self.view.image, self.view.mask)
        return obj, report


@dataclass
class OptimizeResult:
    scene: Scene
    trace: list
    stage_psnr: list
    initial: Optional[metrics.MetricReport]
    final: Optional[metrics.MetricReport]
    seconds: float


def optimize(scene: Scene, observations: Sequence[ViewObservation], schedule: Schedule, config: RenderConfig,
             rng: np.random.Generator, held_out: Optional[int] = None,
             checkpoint: Optional[Callable[[Scene, str], None]] = None,
             backend: Optional[str] = None) -> OptimizeResult:
    """Cycle through ``schedule.stage_order`` up to ``outer_cycles`` times.

    ``held_out`` names an observation excluded from training; it is used for
    early stopping (a cycle improving its objective by less than
    ``schedule.tolerance`` relative ends the run, and a cycle that made it
    worse is rolled back) and PSNR reporting.
    ``checkpoint(scene, label)`` is called after each stage.
    """
    t0 = time.perf_counter()
    train = [o for i, o in enumerate(observations) if i != held_out]
    if not train:
        raise ValueError("no training views")
    order = list(schedule.stage_order)
    if len(train) < 2 and "geometry" in order:
        log.warning("single training view: geometry stage disabled")
        order.remove("geometry")
    evaluator = None
    if held_out is not None:
        evaluator = HeldOutEvaluator(observations[held_out], config, schedule.eval_spp)
    trace, stage_psnr = [], []
    initial = final = None
    best_obj = None
    if evaluator is not None:
        best_obj, initial = evaluator.evaluate(scene)
        final = initial
        stage_psnr.append(("initial", initial.psnr))
        log.info("initial held-out PSNR %.2f dB", initial.psnr)
    best_scene, best_report = scene, initial
    counter = 0
    rest = scene.mesh.vertices.copy()
    for cycle in range(schedule.outer_cycles):
        for group in order:
            ts = time.perf_counter()
            scene, rows, counter = run_stage(scene, train, group, schedule, config, rng, counter,
                                             rest_vertices=rest, backend=backend, cycle=cycle)
            trace.extend(rows)
            label = f"cycle{cycle}_{group}"
            if evaluator is not None:
                _, final = evaluator.evaluate(scene)
                stage_psnr.append((label, final.psnr))
                if rows:
                    rows[-1].held_out_psnr = final.psnr
                log.info("%s: held-out PSNR %.2f dB (%.1fs)", label, final.psnr, time.perf_counter() - ts)
            if checkpoint is not None:
                checkpoint(scene, label)
        if evaluator is not None:
            obj, report = evaluator.evaluate(scene)
            if best_obj is not None and best_obj > 0 and (best_obj - obj) / best_obj < schedule.tolerance:
                if cycle > 0 and obj > best_obj:
                    # the cycle made the held-out view worse: keep the previous cycle's result
                    scene, final = best_scene, best_report
                    log.info("cycle %d did not improve the held-out view; reverted", cycle)
                log.info("held-out objective converged after cycle %d", cycle)
                break
            best_obj, best_scene, best_report = obj, scene, report
    return OptimizeResult(scene, trace, stage_psnr, initial, final, time.perf_counter() - t0)


def write_trace(path, trace: Sequence[TraceRow]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "stage", "objective", "heldOutPSNR"])
        for row in trace:
            w.writerow([row.iteration, row.stage, repr(row.objective),
                        "" if row.held_out_psnr is None else f"{row.held_out_psnr:.6f}"])
