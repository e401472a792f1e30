"""Inference-time guidance: a limited-memory BFGS minimizer and the guided
DDPM sampling loop that refines the predicted clean motion against the
relation model's output during the final fraction of diffusion steps.

Only the quantities the distance field depends on are optimized: the human
joints, the object translation, and the object rotation in its 6D
parameterization. Keypoint slots are recomputed from the refined transform
so the packed vector stays self-consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffusion, idf, motion
from .models import Condition

logger = logging.getLogger(__name__)


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_inf: float
    iterations: int
    converged: bool
    fallback: bool


@dataclass
class GuidanceConfig:
    """Knobs of the guided window and the inner optimizer."""

    window_fraction: float = 0.01
    iterations: int = 10       # L-BFGS iterations per guided step
    history: int = 10
    grad_tol: float = 1e-8
    c1: float = 1e-4
    backtrack: float = 0.5
    max_evals: int = 25
    idf_metric: str = "squared"

    def __post_init__(self):
        if not 0.0 <= self.window_fraction <= 1.0:
            raise ValueError("window_fraction must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("guidance needs at least one optimizer iteration")

    def guided_steps(self, total_steps: int) -> int:
        return int(np.floor(self.window_fraction * total_steps))


def lbfgs_minimize(fun, x0, max_iters: int = 100, grad_tol: float = 1e-8,
                   history: int = 10, c1: float = 1e-4, backtrack: float = 0.5,
                   max_evals: int = 25) -> LbfgsResult:
    """Two-loop-recursion L-BFGS with Armijo backtracking.

    ``fun(x)`` must return ``(value, gradient)``. Curvature pairs with
    s.y <= 1e-12 are discarded; the initial Hessian scale is s.y / y.y.
    A failed line search returns the best point seen so far (never worse
    than x0) with the fallback flag set.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the starting point")
    best_x, best_f = x.copy(), f
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    iterations = 0
    fallback = False

    while iterations < max_iters:
        grad_inf = float(np.max(np.abs(g))) if g.size else 0.0
        if grad_inf < grad_tol:
            return LbfgsResult(x, f, grad_inf, iterations, True, fallback)

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(s @ y)
            a = rho * float(s @ q)
            alphas.append((a, rho))
            q -= a * y
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= float(s @ y) / float(y @ y)
        for (a, rho), s, y in zip(reversed(alphas), s_hist, y_hist):
            b = rho * float(y @ q)
            q += (a - b) * s
        direction = -q
        descent = float(g @ direction)
        if descent >= 0.0:
            # history produced a non-descent direction; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            direction = -g
            descent = -float(g @ g)

        step = 1.0
        accepted = False
        for _ in range(max_evals):
            x_new = x + step * direction
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * descent:
                accepted = True
                break
            step *= backtrack
        if not accepted:
            return LbfgsResult(best_x, best_f, grad_inf, iterations, False, True)

        s = x_new - x
        y = g_new - g
        if float(s @ y) > 1e-12:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        iterations += 1

    grad_inf = float(np.max(np.abs(g))) if g.size else 0.0
    return LbfgsResult(x, f, grad_inf, iterations, grad_inf < grad_tol, fallback)


def _unpack_variables(x: np.ndarray, n: int):
    joints = x[: n * 72].reshape(n, 24, 3)
    trans = x[n * 72: n * 75].reshape(n, 3)
    r6d = x[n * 75:].reshape(n, 6)
    return joints, trans, r6d


def _pack_variables(joints, trans, r6d) -> np.ndarray:
    return np.concatenate([joints.ravel(), trans.ravel(), r6d.ravel()])


def make_guidance_objective(d_refined: np.ndarray, canonical_keypoints: np.ndarray,
                            n_frames: int, metric: str = "squared"):
    """Objective over (joints, object translation, object rotation-6D).

    Returns the summed squared deviation between the motion's distance field
    and the frozen refined field, with its analytic gradient chained through
    the keypoint kinematics and the 6D rotation decoding.
    """
    canon = np.asarray(canonical_keypoints, dtype=np.float64)
    d_ref = np.asarray(d_refined, dtype=np.float64)

    def objective(x: np.ndarray):
        joints, trans, r6d = _unpack_variables(x, n_frames)
        try:
            rot = motion.rot6d_to_matrix(r6d)
        except ValueError:
            return np.inf, np.zeros_like(x)
        kp = motion.object_keypoints_world(canon, trans, rot)
        field = idf.compute_idf(joints, kp, metric)
        resid = field - d_ref
        value = float(np.sum(resid * resid))
        upstream = 2.0 * resid
        d_joints, d_kp = idf.idf_gradient(joints, kp, upstream, metric)
        d_trans = d_kp.sum(axis=1)
        # dL/dR_n = sum_j outer(d_kp[n, j], canon[j])
        d_rot = np.einsum("nji,jk->nik", d_kp, canon)
        d_r6d = motion.rot6d_to_matrix_vjp(r6d, d_rot)
        return value, _pack_variables(d_joints, d_trans, d_r6d)

    return objective


def refine_prediction(m0_pred: np.ndarray, d_refined: np.ndarray, cond: Condition,
                      config: GuidanceConfig):
    """L-BFGS-refine a predicted clean sequence toward a refined distance field.

    Returns (refined_frames, info dict). On line-search failure the original
    prediction is returned with the fallback flag set.
    """
    n = m0_pred.shape[0]
    joints = motion.joints_of(m0_pred).astype(np.float64)
    trans = motion.object_translation_of(m0_pred).astype(np.float64)
    r6d = motion.rot6d_columns(motion.object_rotation_of(m0_pred))
    x0 = _pack_variables(joints, trans, r6d)
    objective = make_guidance_objective(d_refined, cond.canonical_keypoints, n, config.idf_metric)
    loss_before, _ = objective(x0)
    result = lbfgs_minimize(
        objective, x0, max_iters=config.iterations, grad_tol=config.grad_tol,
        history=config.history, c1=config.c1, backtrack=config.backtrack,
        max_evals=config.max_evals,
    )
    info = {
        "loss_before": float(loss_before),
        "loss_after": float(result.fun),
        "lbfgs_iters": int(result.iterations),
        "fallback": bool(result.fallback),
    }
    if result.fallback and result.fun >= loss_before:
        return m0_pred, info

    joints_r, trans_r, r6d_r = _unpack_variables(result.x, n)
    rot_r = motion.rot6d_to_matrix(r6d_r)
    refined = m0_pred.copy()
    refined[:, motion.JOINTS] = joints_r.reshape(n, 72).astype(refined.dtype)
    refined[:, motion.OBJECT_T] = trans_r.astype(refined.dtype)
    refined[:, motion.OBJECT_R] = rot_r.reshape(n, 9).astype(refined.dtype)
    kp = motion.object_keypoints_world(cond.canonical_keypoints, trans_r, rot_r)
    refined[:, motion.OBJECT_KP] = kp.reshape(n, 72).astype(refined.dtype)
    return refined, info


def guided_denoise_step(m_t: np.ndarray, t: int, cond: Condition, gen_model, rel_model,
                        sched: diffusion.NoiseSchedule, config: GuidanceConfig,
                        noise=None, trace: list | None = None) -> np.ndarray:
    """One reverse step; within the guided window the prediction is refined first."""
    m0_pred = gen_model.predict(m_t, t, cond)
    if rel_model is not None and config.guided_steps(sched.steps) >= t:
        try:
            joints = motion.joints_of(m0_pred).astype(np.float64)
            trans = motion.object_translation_of(m0_pred).astype(np.float64)
            r6d = motion.rot6d_columns(motion.object_rotation_of(m0_pred))
            kp = motion.object_keypoints_world(
                cond.canonical_keypoints, trans, motion.rot6d_to_matrix(r6d)
            )
            field = idf.compute_idf(joints, kp, config.idf_metric)
            d_refined = rel_model.predict(field, t, cond)
            m0_pred, info = refine_prediction(m0_pred, d_refined, cond, config)
        except ValueError as exc:
            # degenerate predicted rotation; keep the unrefined prediction
            logger.warning("guidance skipped at t=%d: %s", t, exc)
            info = {"loss_before": np.nan, "loss_after": np.nan, "lbfgs_iters": 0, "fallback": True}
        if info["fallback"]:
            logger.warning("guided step t=%d fell back to the unrefined prediction", t)
        if trace is not None:
            trace.append({"t": int(t), **info})
    return diffusion.ddpm_reverse_step(m_t, m0_pred, t, sched, noise).astype(np.float32)


def sample_guided(n_frames: int, cond: Condition, gen_model, rel_model,
                  sched: diffusion.NoiseSchedule, config: GuidanceConfig,
                  seed: int = 0, trace: list | None = None) -> np.ndarray:
    """Run the full reverse chain from Gaussian noise; returns (N, 288) float32.

    Pass ``rel_model=None`` (or a zero window) for plain unguided sampling;
    the noise stream is identical either way, so guided and unguided runs
    from one seed agree bit-for-bit outside the guided window.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_frames, motion.FRAME_DIM)).astype(np.float32)
    for t in range(sched.steps, 0, -1):
        noise = rng.standard_normal(x.shape).astype(np.float32) if t > 1 else None
        x = guided_denoise_step(x, t, cond, gen_model, rel_model, sched, config, noise, trace)
    return x
