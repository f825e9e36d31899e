"""Broad learning system feature/enhancement mapping and a plain BLS classifier.

The mapping draws frozen random projections once per seed: feature node
groups Z_g = act(X w_g + beta_g), then enhancement groups computed from the
concatenated feature nodes, H_g = act([Z_1..Z_m1] v_g + b_g).  The design
matrix is the column-block concatenation [Z_1 .. Z_m1 | H_1 .. H_m2] and the
output weights come from a single ridge solve.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    STREAM_BLS_ENHANCE,
    STREAM_BLS_FEATURE,
    apply_activation,
    random_matrix,
    ridge_solve,
    stream_rng,
)


@dataclass(frozen=True)
class BlsConfig:
    """Width and regularization settings for the random mapping.

    m1/m2 are the number of feature/enhancement node groups, k1/k2 the nodes
    per group.  ``standardize`` applies per-column standardization of the
    input, fitted on the training matrix and recorded in the model file.
    """

    m1: int = 10
    k1: int = 10
    m2: int = 10
    k2: int = 100
    feat_act: str = "sigmoid"
    enh_act: str = "tanh"
    lam: float = 0.1
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.m1, self.k1, self.m2, self.k2) < 1:
            raise ConfigError("node counts m1, k1, m2, k2 must all be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")

    @property
    def design_width(self) -> int:
        return self.m1 * self.k1 + self.m2 * self.k2


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine normalization (population std, zero-variance guard)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)  # ddof=0 so duplicating rows leaves it unchanged
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


@dataclass(frozen=True)
class BlsFeatureMap:
    """Frozen random projections of one fitted mapping.

    wz[g] is (D, k1) with bias bz[g] (1, k1); wh[g] is (m1*k1, k2) with bias
    bh[g] (1, k2).  Weights never change after construction.
    """

    wz: tuple
    bz: tuple
    wh: tuple
    bh: tuple
    config: BlsConfig
    standardizer: Standardizer = None

    @property
    def input_dim(self) -> int:
        return self.wz[0].shape[0]

    def prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(f"expected (N, {self.input_dim}) input, got {X.shape}")
        return self.standardizer.apply(X) if self.standardizer is not None else X

    def feature_nodes(self, X_prepared: np.ndarray) -> np.ndarray:
        cfg = self.config
        blocks = [
            apply_activation(X_prepared @ self.wz[g] + self.bz[g], cfg.feat_act)
            for g in range(cfg.m1)
        ]
        return np.hstack(blocks)

    def enhancement_nodes(self, Z: np.ndarray) -> np.ndarray:
        cfg = self.config
        blocks = [
            apply_activation(Z @ self.wh[g] + self.bh[g], cfg.enh_act)
            for g in range(cfg.m2)
        ]
        return np.hstack(blocks)


def fit_feature_map(input_dim: int, config: BlsConfig, standardizer: Standardizer = None) -> BlsFeatureMap:
    """Draw the frozen random projections for a given input dimension."""
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    rng_z = stream_rng(config.seed, STREAM_BLS_FEATURE)
    rng_h = stream_rng(config.seed, STREAM_BLS_ENHANCE)
    wz, bz = [], []
    for _ in range(config.m1):
        wz.append(random_matrix(input_dim, config.k1, rng_z))
        bz.append(random_matrix(1, config.k1, rng_z))
    wh, bh = [], []
    z_width = config.m1 * config.k1
    for _ in range(config.m2):
        wh.append(random_matrix(z_width, config.k2, rng_h))
        bh.append(random_matrix(1, config.k2, rng_h))
    return BlsFeatureMap(tuple(wz), tuple(bz), tuple(wh), tuple(bh), config, standardizer)


def transform(fmap: BlsFeatureMap, X: np.ndarray) -> np.ndarray:
    """Design matrix [Z_1 .. Z_m1 | H_1 .. H_m2], one row per input row."""
    Xp = fmap.prepare(X)
    Z = fmap.feature_nodes(Xp)
    H = fmap.enhancement_nodes(Z)
    return np.hstack([Z, H])


def bls_train(X: np.ndarray, Y: np.ndarray, config: BlsConfig) -> tuple:
    """Fit the plain BLS classifier: frozen mapping + ridge output weights."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    std = Standardizer.fit(X) if config.standardize else None
    fmap = fit_feature_map(X.shape[1], config, standardizer=std)
    A = transform(fmap, X)
    W = ridge_solve(A, Y, config.lam)
    return fmap, W


def bls_predict(fmap: BlsFeatureMap, W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Score matrix transform(X) @ W."""
    A = transform(fmap, X)
    if A.shape[1] != W.shape[0]:
        raise DimensionError(f"design width {A.shape[1]} != weight rows {W.shape[0]}")
    return A @ W
