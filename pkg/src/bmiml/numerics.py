"""Shared math substrate: seeded random streams, activations, ridge solvers.

All matrices are float64 numpy arrays.  Randomness is always drawn from a
named (seed, stream) pair so that every component of a fitted model can be
reproduced bit-for-bit from a single user seed.
"""

import numpy as np
import scipy.linalg
import scipy.special

from .errors import ConfigError, NumericalError, SingularSystemError

# Stream ids for the one PRNG family used everywhere.  Components must never
# share a stream, otherwise adding a draw in one place would silently shift
# the randomness of another.
STREAM_BLS_FEATURE = 0
STREAM_BLS_ENHANCE = 1
STREAM_RETARGET = 2
STREAM_SMIPR_INIT = 3
STREAM_SPLIT = 4
STREAM_SHUFFLE = 5
STREAM_SYNTH = 6
STREAM_CLUSTER = 7
STREAM_FOLDS = 8
STREAM_DERIVE = 9
STREAM_EPOCH_SHUFFLE = 10

_SEED_MASK = (1 << 64) - 1

ACTIVATIONS = ("sigmoid", "tanh", "tribas")


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Deterministic generator for a (seed, stream) pair.

    Identical pairs produce identical sequences on every platform (PCG64
    seeded through ``SeedSequence`` with the stream as spawn key).
    """
    ss = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, salt: int) -> int:
    """Derive a child seed (e.g. one per cross-validation fold or component)."""
    base = int(stream_rng(seed, STREAM_DERIVE).integers(0, 2**63 - 1))
    return (base ^ (int(salt) * 0x9E3779B97F4A7C15)) & _SEED_MASK


def random_matrix(rows: int, cols: int, rng: np.random.Generator, dist: str = "uniform") -> np.ndarray:
    """I.i.d. random matrix; ``uniform`` means uniform on (-1, 1)."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"random_matrix needs positive dimensions, got {rows}x{cols}")
    if dist != "uniform":
        raise ConfigError(f"unsupported distribution {dist!r}")
    return rng.uniform(-1.0, 1.0, size=(rows, cols))


def apply_activation(m: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise activation: sigmoid, tanh, or tribas(x) = max(0, 1 - |x|)."""
    m = np.asarray(m, dtype=np.float64)
    if kind == "sigmoid":
        return scipy.special.expit(m)
    if kind == "tanh":
        return np.tanh(m)
    if kind == "tribas":
        return np.maximum(0.0, 1.0 - np.abs(m))
    raise ConfigError(f"unknown activation {kind!r}")


def activation_derivative(pre: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation evaluated at pre-activation values.

    tribas is piecewise linear; at its kinks (|x| in {0, 1}) the derivative
    is taken as 0.
    """
    pre = np.asarray(pre, dtype=np.float64)
    if kind == "sigmoid":
        s = scipy.special.expit(pre)
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if kind == "tribas":
        inside = (np.abs(pre) < 1.0) & (pre != 0.0)
        return np.where(inside, -np.sign(pre), 0.0)
    raise ConfigError(f"unknown activation {kind!r}")


def softmax(v: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction (1-D or 2-D input)."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _solve_spd(G: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve G x = rhs for symmetric positive (semi)definite G.

    Cholesky first; on failure fall back to a rank-revealing least-squares
    solve, raising when the system is genuinely singular at lam = 0.
    """
    try:
        c, low = scipy.linalg.cho_factor(G, check_finite=False)
        return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        sol, _, rank, _ = scipy.linalg.lstsq(G, rhs, check_finite=False)
        if lam == 0.0 and rank < G.shape[0]:
            raise SingularSystemError(
                "normal equations are singular at lambda=0; supply lambda > 0"
            ) from None
        return sol


def ridge_solve(A: np.ndarray, T: np.ndarray, lam: float) -> np.ndarray:
    """Ridge regression weights W minimizing ||A W - T||_F^2 + lam ||W||_F^2.

    Solves (lam I + A^T A) W = A^T T.  The smaller Gram system is used: the
    d x d primal form when d <= N, otherwise the equivalent N x N dual form
    W = A^T (lam I + A A^T)^{-1} T.
    """
    A = np.asarray(A, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if A.ndim != 2 or T.ndim != 2 or A.shape[0] != T.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {T.shape}")
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    n, d = A.shape
    if d <= n:
        G = A.T @ A
        G[np.diag_indices_from(G)] += lam
        W = _solve_spd(G, A.T @ T, lam)
    else:
        G = A @ A.T
        G[np.diag_indices_from(G)] += lam
        W = A.T @ _solve_spd(G, T, lam)
    if not np.all(np.isfinite(W)):
        raise NumericalError("ridge solution contains non-finite values")
    return W


def weighted_ridge_solve(A: np.ndarray, T: np.ndarray, gamma: np.ndarray, lam: float) -> np.ndarray:
    """Sample-weighted ridge: W = (lam I + A^T G A)^{-1} A^T G T, G = diag(gamma).

    Implemented by rescaling rows with sqrt(gamma) and reusing ridge_solve,
    so gamma = 1 reproduces the unweighted result exactly.
    """
    gamma = np.asarray(gamma, dtype=np.float64).ravel()
    if gamma.shape[0] != A.shape[0]:
        raise ValueError(f"gamma length {gamma.shape[0]} != {A.shape[0]} rows")
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise NumericalError("sample weights must be finite and strictly positive")
    root = np.sqrt(gamma)[:, None]
    return ridge_solve(A * root, T * root, lam)
