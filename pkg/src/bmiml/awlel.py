"""Auto-weighted label enhancement learning (AWLEL).

Starting from binary targets Y, AWLEL learns real-valued retargeted labels T
together with regression weights over an augmented design [X | Z | H | R],
where R is an extra block of retargeting nodes built from the frozen BLS
projections.  The objective

    sum_i gamma_i ||A_i w - T_i||^2 + lam ||w||^2 + vartheta * sum_i omega_i ||T_i - Y_i||^2

is minimized by alternating two closed-form updates (a weighted ridge solve
for w, a per-row blend for T), with the reciprocal-residual sample weights
gamma, omega refreshed after every update pair.
"""

from dataclasses import dataclass

import numpy as np

from .bls import BlsConfig, BlsFeatureMap, Standardizer, fit_feature_map
from .errors import ConfigError, DimensionError, NumericalError
from .numerics import (
    STREAM_RETARGET,
    apply_activation,
    random_matrix,
    stream_rng,
    weighted_ridge_solve,
)


@dataclass(frozen=True)
class AwlelConfig:
    """Tradeoffs and stopping rules for the alternating optimization.

    vartheta weights the pull of T toward the ground-truth Y; tol is the
    relative Frobenius change of T that counts as converged; eps_floor
    bounds the reciprocal-residual weights away from infinity.
    """

    lam: float = 0.1
    vartheta: float = 1.0
    max_iters: int = 50
    tol: float = 1e-5
    eps_floor: float = 1e-8
    retarget_act: str = "tribas"
    include_raw_features: bool = True

    def __post_init__(self):
        if self.lam < 0 or self.vartheta <= 0 or self.max_iters < 1 or self.tol <= 0 or self.eps_floor <= 0:
            raise ConfigError("invalid AWLEL config (lam>=0, vartheta>0, max_iters>=1, tol>0, eps>0)")


@dataclass
class AwlelState:
    """Trace of one fit: final T, weights, and the objective before/after
    every update pair (two history entries per iteration, fixed weights
    within a pair)."""

    T: np.ndarray
    wt: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray
    objective_history: list
    delta_history: list
    final_residual: float


@dataclass(frozen=True)
class AwlelModel:
    """Everything needed to rebuild scores A_aug @ wt for new inputs."""

    bls_map: BlsFeatureMap
    retarget_bias: np.ndarray
    wt: np.ndarray
    t_range: tuple
    config: AwlelConfig
    state: AwlelState = None  # fit trace; not serialized

    @property
    def num_classes(self) -> int:
        return self.wt.shape[1]


def _align_width(block: np.ndarray, width: int) -> np.ndarray:
    """Truncate or zero-pad columns so the block has exactly ``width`` columns."""
    if block.shape[1] >= width:
        return block[:, :width]
    return np.pad(block, ((0, 0), (0, width - block.shape[1])))


def build_retarget_nodes(
    X: np.ndarray,
    fmap: BlsFeatureMap,
    num_classes: int,
    act: str = "tribas",
    seed: int = 0,
    bias: np.ndarray = None,
) -> tuple:
    """Retargeting node block R, one row per sample, ``num_classes`` columns.

    R = act(align(mean_g X w_g) + align(mean_g Z v_g) + bias): the raw-input
    term and the mapped-feature term reuse the map's frozen projections,
    group-averaged and width-aligned to the label arity (truncate or
    zero-pad), plus a bias row drawn once per seed.  Returns (R, bias).
    """
    Xp = fmap.prepare(X)
    cfg = fmap.config
    term_x = np.mean([Xp @ w for w in fmap.wz], axis=0)
    Z = fmap.feature_nodes(Xp)
    term_z = np.mean([Z @ w for w in fmap.wh], axis=0)
    pre = _align_width(term_x, num_classes) + _align_width(term_z, num_classes)
    if bias is None:
        bias = random_matrix(1, num_classes, stream_rng(seed, STREAM_RETARGET))
    if bias.shape != (1, num_classes):
        raise DimensionError(f"bias must be (1, {num_classes}), got {bias.shape}")
    return apply_activation(pre + bias, act), bias


def build_augmented_design(
    X: np.ndarray, design: np.ndarray, R: np.ndarray, include_raw_features: bool = True
) -> np.ndarray:
    """Column blocks [X | Z H | R], or [Z H | R] without the raw block."""
    if not (X.shape[0] == design.shape[0] == R.shape[0]):
        raise DimensionError(
            f"row mismatch: X {X.shape[0]}, design {design.shape[0]}, R {R.shape[0]}"
        )
    blocks = ([X] if include_raw_features else []) + [design, R]
    return np.hstack(blocks)


def compute_sample_weights(
    A_aug: np.ndarray, wt: np.ndarray, T: np.ndarray, Y: np.ndarray, eps_floor: float
) -> tuple:
    """Reciprocal-residual weights gamma_i = 1/||A_i w - T_i||, omega_i = 1/||T_i - Y_i||.

    Residuals are floored at eps_floor so exactly-fit rows get weight
    1/eps_floor instead of dividing by zero.
    """
    resid_fit = np.linalg.norm(A_aug @ wt - T, axis=1)
    resid_anchor = np.linalg.norm(T - Y, axis=1)
    gamma = 1.0 / np.maximum(eps_floor, resid_fit)
    omega = 1.0 / np.maximum(eps_floor, resid_anchor)
    return gamma, omega


def update_T(
    A_aug: np.ndarray,
    wt: np.ndarray,
    Y: np.ndarray,
    gamma: np.ndarray,
    omega: np.ndarray,
    vartheta: float,
) -> np.ndarray:
    """Closed-form T update: row-wise convex blend of fitted scores and Y.

    T_i = (gamma_i * A_i w + vartheta * omega_i * Y_i) / (gamma_i + vartheta * omega_i),
    the minimizer of the T-subproblem for fixed weights.
    """
    scores = A_aug @ wt
    g = gamma[:, None]
    vo = vartheta * omega[:, None]
    return (g * scores + vo * Y) / (g + vo)


def awlel_objective(
    A_aug: np.ndarray,
    wt: np.ndarray,
    T: np.ndarray,
    Y: np.ndarray,
    gamma: np.ndarray,
    omega: np.ndarray,
    lam: float,
    vartheta: float,
) -> float:
    """Value of the auto-weighted objective at (wt, T) under fixed weights."""
    fit = float(np.sum(gamma * np.sum((A_aug @ wt - T) ** 2, axis=1)))
    anchor = float(np.sum(omega * np.sum((T - Y) ** 2, axis=1)))
    return fit + lam * float(np.sum(wt**2)) + vartheta * anchor


def fit_awlel(
    X: np.ndarray,
    Y: np.ndarray,
    bls_config: BlsConfig,
    awlel_config: AwlelConfig,
    initial_gamma: np.ndarray = None,
) -> tuple:
    """Alternating closed-form optimization of (wt, T); returns (model, T).

    Initializes T = Y and unit sample weights, then repeats {solve wt by
    weighted ridge; blend T; refresh (gamma, omega)} until the relative
    change of T drops below tol or max_iters is reached.  ``initial_gamma``
    overrides the unit starting weights (used by the experimental outer
    pipeline rounds).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    n, num_classes = Y.shape
    cfg = awlel_config

    std = Standardizer.fit(X) if bls_config.standardize else None
    fmap = fit_feature_map(X.shape[1], bls_config, standardizer=std)
    Xp = fmap.prepare(X)
    Z = fmap.feature_nodes(Xp)
    H = fmap.enhancement_nodes(Z)
    design = np.hstack([Z, H])
    R, bias = build_retarget_nodes(X, fmap, num_classes, cfg.retarget_act, bls_config.seed)
    A_aug = build_augmented_design(Xp, design, R, cfg.include_raw_features)

    T = Y.copy()
    gamma = np.ones(n) if initial_gamma is None else np.asarray(initial_gamma, dtype=np.float64)
    if gamma.shape != (n,):
        raise DimensionError(f"initial_gamma must have shape ({n},), got {gamma.shape}")
    omega = np.ones(n)
    wt = np.zeros((A_aug.shape[1], num_classes))
    history, deltas = [], []
    for _ in range(cfg.max_iters):
        history.append(awlel_objective(A_aug, wt, T, Y, gamma, omega, cfg.lam, cfg.vartheta))
        wt = weighted_ridge_solve(A_aug, T, gamma, cfg.lam)
        T_new = update_T(A_aug, wt, Y, gamma, omega, cfg.vartheta)
        post = awlel_objective(A_aug, wt, T_new, Y, gamma, omega, cfg.lam, cfg.vartheta)
        history.append(post)
        if not np.isfinite(post):
            raise NumericalError(f"AWLEL objective became non-finite at iteration {len(deltas) + 1}")
        delta = float(np.linalg.norm(T_new - T) / max(np.linalg.norm(T), 1e-300))
        deltas.append(delta)
        T = T_new
        gamma, omega = compute_sample_weights(A_aug, wt, T, Y, cfg.eps_floor)
        if delta < cfg.tol:
            break

    state = AwlelState(
        T=T,
        wt=wt,
        gamma=gamma,
        omega=omega,
        objective_history=history,
        delta_history=deltas,
        final_residual=float(np.linalg.norm(A_aug @ wt - T)),
    )
    model = AwlelModel(
        bls_map=fmap,
        retarget_bias=bias,
        wt=wt,
        t_range=(float(T.min()), float(T.max())),
        config=cfg,
        state=state,
    )
    return model, T


def awlel_predict_scores(model: AwlelModel, X_new: np.ndarray) -> np.ndarray:
    """Rebuild Z, H, R with the frozen projections and return A_aug @ wt."""
    X_new = np.asarray(X_new, dtype=np.float64)
    fmap = model.bls_map
    Xp = fmap.prepare(X_new)
    Z = fmap.feature_nodes(Xp)
    H = fmap.enhancement_nodes(Z)
    design = np.hstack([Z, H])
    R, _ = build_retarget_nodes(
        X_new, fmap, model.num_classes, model.config.retarget_act, bias=model.retarget_bias
    )
    A_aug = build_augmented_design(Xp, design, R, model.config.include_raw_features)
    if A_aug.shape[1] != model.wt.shape[0]:
        raise DimensionError(f"design width {A_aug.shape[1]} != weight rows {model.wt.shape[0]}")
    return A_aug @ model.wt
