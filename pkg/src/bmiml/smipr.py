"""Scalable multi-instance probabilistic regression (SMIPR).

Bags are first clustered by k-medoids under the Hausdorff distance.  A bag's
layer-2 pre-activation is its distance vector to the S medoids; deeper layers
compose the hidden activation of the previous layer through trainable weight
matrices (dims S -> hidden widths -> K) with a linear final read.  The fixed
layer-2 weight pattern (identity, or the complement rule that sums distances
to all non-matching medoids) forms the output read when the network has only
two layers; it is recorded in the model either way and never trained.
Training minimizes the sum-of-squares error against AWLEL's retargeted
labels by full-batch gradient descent.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import Bag
from .errors import ConfigError, DimensionError, NumericalError
from .hausdorff import (
    cross_distances,
    hausdorff_arrays,
    pack_bags,
    pairwise_distances,
)
from .numerics import (
    STREAM_CLUSTER,
    STREAM_EPOCH_SHUFFLE,
    STREAM_SMIPR_INIT,
    activation_derivative,
    apply_activation,
    random_matrix,
    stream_rng,
)


@dataclass(frozen=True)
class SmiprConfig:
    """Network and training settings.

    num_clusters = None picks min(n_bags, 12 * num_classes) at fit time, a
    heuristic that covers the label-pattern diversity of small benchmarks;
    an explicit value larger than the bag count is a configuration error.
    eta = None resolves to 1.8 / (n_bags * num_clusters) at fit time: the
    feature Gram's largest eigenvalue is bounded by its trace, itself at
    most n_bags * num_clusters for activations bounded by 1, so this rate
    keeps full-batch descent stable at any batch size.  hidden_widths
    supplies the node counts of layers strictly between the distance layer
    and the output and must have num_layers - 3 entries.
    """

    num_clusters: int = None
    num_layers: int = 3
    hidden_widths: tuple = ()
    eta: float = None
    epochs: int = 6000
    hidden_act: str = "sigmoid"
    layer2_weight_rule: str = "paper-complement"
    seed: int = 0
    clustering_max_iters: int = 100
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2")
        if (self.eta is not None and self.eta <= 0) or self.epochs < 0:
            raise ConfigError("need eta > 0 and epochs >= 0")
        if self.layer2_weight_rule not in ("paper-complement", "identity"):
            raise ConfigError(f"unknown layer2_weight_rule {self.layer2_weight_rule!r}")
        n_hidden = max(self.num_layers - 3, 0)
        if self.num_layers >= 3 and len(self.hidden_widths) != n_hidden:
            raise ConfigError(
                f"num_layers={self.num_layers} needs {n_hidden} hidden widths, "
                f"got {len(self.hidden_widths)}"
            )
        if self.num_layers == 2 and self.hidden_widths:
            raise ConfigError("a 2-layer network has no hidden widths")


def hausdorff(bag_a, bag_b) -> float:
    """Hausdorff distance between two bags (Bag objects or instance arrays)."""
    a = bag_a.instances if isinstance(bag_a, Bag) else np.asarray(bag_a, dtype=np.float64)
    b = bag_b.instances if isinstance(bag_b, Bag) else np.asarray(bag_b, dtype=np.float64)
    return hausdorff_arrays(a, b)


def pairwise_bag_distances(bags) -> np.ndarray:
    """Symmetric N x N Hausdorff matrix with a zero diagonal."""
    packed, offsets = pack_bags([b.instances for b in bags])
    return pairwise_distances(packed, offsets)


def select_medoid(cluster) -> Bag:
    """Member minimizing the summed Hausdorff distance to its clustermates.

    Ties break toward the lowest index within the cluster.
    """
    if not cluster:
        raise ConfigError("cannot select a medoid from an empty cluster")
    dists = pairwise_bag_distances(cluster)
    return cluster[int(np.argmin(dists.sum(axis=1)))]


@dataclass(frozen=True)
class ClusterModel:
    """k-medoids result: medoid bags, bag -> cluster assignment, final cost."""

    medoids: tuple
    medoid_indices: tuple
    assignments: np.ndarray
    within_cluster_cost: float
    cost_history: tuple


def _assign(D: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    # argmin ties resolve to the lowest medoid position; a medoid always
    # anchors its own cluster (its self-distance of zero can only tie), so
    # no cluster is ever empty
    assign = np.argmin(D[:, medoids], axis=1)
    assign[medoids] = np.arange(len(medoids))
    return assign


def cluster_bags(bags, num_clusters: int, seed: int = 0, max_iters: int = 100) -> ClusterModel:
    """Lloyd-style k-medoids in bag space under the Hausdorff distance.

    Alternates nearest-medoid assignment with per-cluster medoid
    recomputation until the medoid set is stable or max_iters is hit.  The
    assignment cost is recorded once per iteration.
    """
    n = len(bags)
    if num_clusters < 1 or num_clusters > n:
        raise ConfigError(f"num_clusters must be in [1, {n}], got {num_clusters}")
    D = pairwise_bag_distances(bags)
    rng = stream_rng(seed, STREAM_CLUSTER)
    medoids = np.sort(rng.choice(n, size=num_clusters, replace=False))
    costs = []
    for _ in range(max_iters):
        assign = _assign(D, medoids)
        costs.append(float(D[np.arange(n), medoids[assign]].sum()))
        new_medoids = medoids.copy()
        for p in range(num_clusters):
            members = np.nonzero(assign == p)[0]
            intra = D[np.ix_(members, members)].sum(axis=1)
            new_medoids[p] = members[int(np.argmin(intra))]
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids
    assign = _assign(D, medoids)
    cost = float(D[np.arange(n), medoids[assign]].sum())
    return ClusterModel(
        medoids=tuple(bags[i] for i in medoids),
        medoid_indices=tuple(int(i) for i in medoids),
        assignments=assign,
        within_cluster_cost=cost,
        cost_history=tuple(costs),
    )


@dataclass(frozen=True)
class SmiprNet:
    """Frozen network: medoids plus the trainable weight chain.

    ``weights`` holds the trainable matrices (dims S -> hidden -> K); it is
    empty for a 2-layer network, whose output read is the fixed layer-2
    pattern instead.
    """

    cluster_model: ClusterModel
    weights: tuple
    num_classes: int
    config: SmiprConfig
    loss_history: tuple = ()

    @property
    def num_medoids(self) -> int:
        return len(self.cluster_model.medoids)

    def fixed_layer2(self) -> np.ndarray:
        """Materialized fixed layer-2 weights under the configured rule."""
        s = self.num_medoids
        cols = self.num_classes if self.config.num_layers == 2 else s
        eye = np.zeros((s, cols))
        for p in range(min(s, cols)):
            eye[p, p] = 1.0
        if self.config.layer2_weight_rule == "identity":
            return eye
        return np.ones((s, cols)) - eye

    def medoid_pack(self):
        return pack_bags([m.instances for m in self.cluster_model.medoids])


def _instances(obj) -> np.ndarray:
    return obj.instances if isinstance(obj, Bag) else np.atleast_2d(np.asarray(obj, dtype=np.float64))


def distance_features(net: SmiprNet, bags) -> np.ndarray:
    """Layer-2 pre-activations: (N, S) Hausdorff distances to the medoids."""
    packed, offsets = pack_bags([_instances(b) for b in bags])
    mp, mo = net.medoid_pack()
    if packed.shape[1] != mp.shape[1]:
        raise DimensionError(
            f"bag dimension {packed.shape[1]} != medoid dimension {mp.shape[1]}"
        )
    return cross_distances(packed, offsets, mp, mo)


def forward_features(net: SmiprNet, phi: np.ndarray) -> np.ndarray:
    """Network output for a batch of precomputed distance rows."""
    if net.config.num_layers == 2:
        return phi @ net.fixed_layer2()
    pre = phi
    for w in net.weights:
        pre = apply_activation(pre, net.config.hidden_act) @ w
    return pre


def smipr_forward(net: SmiprNet, bag) -> np.ndarray:
    """Class-score vector for one bag (Bag object or raw instance array)."""
    return forward_features(net, distance_features(net, [bag]))[0]


def sse_loss(net: SmiprNet, bags, T: np.ndarray, features: np.ndarray = None) -> float:
    """E = 1/2 * sum_i sum_q (g_q(X_i) - t_i^q)^2."""
    T = np.asarray(T, dtype=np.float64)
    if len(bags) != T.shape[0] or T.shape[1] != net.num_classes:
        raise DimensionError(f"targets {T.shape} do not match {len(bags)} bags x {net.num_classes}")
    phi = distance_features(net, bags) if features is None else features
    g = forward_features(net, phi)
    return 0.5 * float(np.sum((g - T) ** 2))


def _batch_gradients(net: SmiprNet, phi: np.ndarray, T: np.ndarray) -> list:
    """Full-batch gradients of the sum-of-squares error for each trainable layer."""
    act = net.config.hidden_act
    pres = [phi]
    for w in net.weights:
        pres.append(apply_activation(pres[-1], act) @ w)
    delta = pres[-1] - T
    grads = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grads[i] = apply_activation(pres[i], act).T @ delta
        if i > 0:
            delta = (delta @ net.weights[i].T) * activation_derivative(pres[i], act)
    return grads


def smipr_train_epoch(net: SmiprNet, bags, T: np.ndarray, eta: float, features: np.ndarray = None) -> SmiprNet:
    """One full-batch gradient-descent step on the trainable layers.

    The fixed layer-2 weights are never touched; a 2-layer network has
    nothing to train and is returned unchanged.
    """
    if not net.weights:
        return net
    T = np.asarray(T, dtype=np.float64)
    phi = distance_features(net, bags) if features is None else features
    grads = _batch_gradients(net, phi, T)
    if any(not np.all(np.isfinite(g)) for g in grads):
        raise NumericalError("non-finite gradient; lower eta or rescale the targets")
    new_weights = tuple(w - eta * g for w, g in zip(net.weights, grads))
    return replace(net, weights=new_weights)


def _init_weights(num_medoids: int, num_classes: int, config: SmiprConfig) -> tuple:
    if config.num_layers == 2:
        return ()
    widths = [num_medoids, *config.hidden_widths, num_classes]
    rng = stream_rng(config.seed, STREAM_SMIPR_INIT)
    return tuple(random_matrix(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1))


def fit_smipr(bags, T: np.ndarray, config: SmiprConfig) -> SmiprNet:
    """Cluster the bags, then train the regression network against T.

    Distance features are computed once: the Hausdorff distance ignores
    instance order, so the per-epoch instance shuffling (applied to working
    copies of the bags when ``shuffle_each_epoch``) provably cannot change
    them.
    """
    bags = list(bags)
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != len(bags):
        raise DimensionError(f"targets {T.shape} do not match {len(bags)} bags")
    n, num_classes = T.shape
    s = config.num_clusters if config.num_clusters is not None else min(n, 12 * num_classes)
    if config.num_clusters is not None and config.num_clusters > n:
        raise ConfigError(f"num_clusters={config.num_clusters} exceeds bag count {n}")
    eta = config.eta if config.eta is not None else 1.8 / (n * s)
    cluster_model = cluster_bags(bags, s, seed=config.seed, max_iters=config.clustering_max_iters)
    net = SmiprNet(
        cluster_model=cluster_model,
        weights=_init_weights(s, num_classes, config),
        num_classes=num_classes,
        config=config,
    )
    phi = distance_features(net, bags)
    losses = [sse_loss(net, bags, T, features=phi)]
    shuffle_rng = stream_rng(config.seed, STREAM_EPOCH_SHUFFLE)
    work = [b.instances for b in bags]
    for _ in range(config.epochs):
        if config.shuffle_each_epoch:
            # ceremony with provably no effect: phi is instance-order invariant
            work = [a[shuffle_rng.permutation(a.shape[0])] for a in work]
        net = smipr_train_epoch(net, work, T, eta, features=phi)
        losses.append(sse_loss(net, work, T, features=phi))
    return replace(net, loss_history=tuple(losses))
