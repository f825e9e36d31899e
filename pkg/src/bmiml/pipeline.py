"""End-to-end pipeline: AWLEL retargets the labels, SMIPR regresses against
them, and the decision stage clips scores into the retargeted range, applies
a row-wise softmax, and thresholds per class.

Ablation variants mirror the module analysis of the method: ``awlel`` and
``smipr`` train each stage alone (SMIPR-alone regresses on the raw binary
labels), ``bmiml`` is the full handoff.  Models serialize to a sectioned,
CRC-checked binary container and round-trip bit-exactly.
"""

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .awlel import AwlelConfig, AwlelModel, awlel_predict_scores, fit_awlel
from .bls import BlsConfig, BlsFeatureMap, Standardizer
from .data import Bag, MimlDataset
from .errors import ConfigError, DimensionError, ModelFormatError
from .numerics import derive_seed, softmax
from .smipr import ClusterModel, SmiprConfig, SmiprNet, distance_features, fit_smipr, forward_features

_MODEL_MAGIC = b"BMML1\x00"
FORMAT_VERSION = 1
VARIANTS = ("awlel", "smipr", "bmiml")


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of the full pipeline.

    tau is the per-class decision threshold (scalar broadcasts to every
    class).  global_view controls how a bag becomes one vector for the
    label-enhancement stage: the instance mean (default), elementwise max,
    or concatenation (uniform instance counts only).  outer_rounds > 1
    re-runs the label enhancement with sample weights taken from the
    regression residuals; experimental, default is the single handoff.
    """

    bls_config: BlsConfig = field(default_factory=BlsConfig)
    awlel_config: AwlelConfig = field(default_factory=AwlelConfig)
    smipr_config: SmiprConfig = field(default_factory=SmiprConfig)
    tau: object = 0.8
    seed: int = 0
    global_view: str = "mean"
    outer_rounds: int = 1

    def __post_init__(self):
        if self.global_view not in ("mean", "max", "concat"):
            raise ConfigError(f"unknown global_view {self.global_view!r}")
        if self.outer_rounds < 1:
            raise ConfigError("outer_rounds must be >= 1")
        for t in np.atleast_1d(np.asarray(self.tau, dtype=np.float64)):
            if not 0.0 < t < 1.0:
                raise ConfigError(f"decision thresholds must lie in (0, 1), got {t}")

    def resolve_tau(self, num_classes: int) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(self.tau, dtype=np.float64))
        if tau.size == 1:
            return np.full(num_classes, float(tau[0]))
        if tau.size != num_classes:
            raise ConfigError(f"tau has {tau.size} entries for {num_classes} classes")
        return tau.astype(np.float64)

    def reseed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class BmimlModel:
    """Fitted pipeline; immutable after fit or load."""

    awlel_model: AwlelModel
    smipr_net: SmiprNet
    t_range: tuple
    tau: np.ndarray
    config: PipelineConfig
    variant: str = "bmiml"
    format_version: int = FORMAT_VERSION

    @property
    def num_classes(self) -> int:
        return len(self.tau)


@dataclass(frozen=True)
class PredictionSet:
    """Clipped raw scores, row-softmax probabilities, thresholded labels."""

    bag_ids: tuple
    raw_scores: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray


def clip_scores(scores: np.ndarray, t_range: tuple) -> np.ndarray:
    """Clamp every score into [t_range.min, t_range.max]."""
    lo, hi = t_range
    if lo > hi:
        raise ConfigError(f"invalid clip range ({lo}, {hi})")
    return np.clip(scores, lo, hi)


def decide(probabilities: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Per-class strict-greater threshold decision (1-D or 2-D input)."""
    return (np.asarray(probabilities) > np.asarray(tau)).astype(np.uint8)


def global_views(bags, mode: str = "mean") -> np.ndarray:
    """One row per bag summarizing its instances for the global-view stage."""
    if mode == "mean":
        return np.stack([b.instances.mean(axis=0) for b in bags])
    if mode == "max":
        return np.stack([b.instances.max(axis=0) for b in bags])
    if mode == "concat":
        counts = {b.num_instances for b in bags}
        if len(counts) != 1:
            raise DimensionError("concat global view requires a uniform instance count")
        return np.stack([b.instances.reshape(-1) for b in bags])
    raise ConfigError(f"unknown global_view {mode!r}")


def fit_bmiml(train: MimlDataset, config: PipelineConfig, variant: str = "bmiml") -> BmimlModel:
    """Train the selected variant on a dataset.

    Full pipeline: global views -> label enhancement -> retargeted labels T
    -> bag clustering + regression on T; the clip range is the span of T.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if train.num_bags < 1:
        raise ConfigError("cannot fit on an empty dataset")
    bls_cfg = replace(config.bls_config, seed=derive_seed(config.seed, 0xB15))
    smipr_cfg = replace(config.smipr_config, seed=derive_seed(config.seed, 0x5417))
    explicit_s = smipr_cfg.num_clusters
    if variant != "awlel" and explicit_s is not None and explicit_s > train.num_bags:
        raise ConfigError(
            f"num_clusters={explicit_s} exceeds the {train.num_bags} training bags"
        )
    Y = train.label_matrix().astype(np.float64)
    tau = config.resolve_tau(train.num_classes)

    awlel_model = None
    smipr_net = None
    if variant == "smipr":
        smipr_net = fit_smipr(train.bags, Y, smipr_cfg)
        t_range = (float(Y.min()), float(Y.max()))
    else:
        X = global_views(train.bags, config.global_view)
        awlel_model, T = fit_awlel(X, Y, bls_cfg, config.awlel_config)
        t_range = awlel_model.t_range
        if variant == "bmiml":
            smipr_net = fit_smipr(train.bags, T, smipr_cfg)
            for round_idx in range(1, config.outer_rounds):
                # experimental feedback: reweight the enhancement by how well
                # the regression explains each bag, then refit both stages
                resid = np.linalg.norm(
                    forward_features(smipr_net, distance_features(smipr_net, train.bags)) - T,
                    axis=1,
                )
                gamma0 = 1.0 / np.maximum(config.awlel_config.eps_floor, resid)
                awlel_model, T = fit_awlel(
                    X, Y, replace(bls_cfg, seed=derive_seed(bls_cfg.seed, round_idx)),
                    config.awlel_config, initial_gamma=gamma0,
                )
                t_range = awlel_model.t_range
                smipr_net = fit_smipr(train.bags, T, smipr_cfg)
    return BmimlModel(
        awlel_model=awlel_model,
        smipr_net=smipr_net,
        t_range=t_range,
        tau=tau,
        config=config,
        variant=variant,
    )


def predict_bags(model: BmimlModel, bags) -> PredictionSet:
    """Score, clip, softmax, and threshold a collection of bags."""
    bags = list(bags)
    if model.smipr_net is not None:
        scores = forward_features(model.smipr_net, distance_features(model.smipr_net, bags))
    else:
        X = global_views(bags, model.config.global_view)
        scores = awlel_predict_scores(model.awlel_model, X)
    raw = clip_scores(scores, model.t_range)
    probs = softmax(raw)
    labels = decide(probs, model.tau)
    return PredictionSet(
        bag_ids=tuple(b.id for b in bags),
        raw_scores=raw,
        probabilities=probs,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# binary model container
#
# magic | u32 version | sections; each section: 4-byte tag, u64 payload
# length, payload, u32 CRC32(payload).  Payloads are ordered key/value
# records; values keep their exact float64 bits.

_T_F64, _T_I64, _T_BOOL, _T_STR, _T_ARRF, _T_ARRU8, _T_ARRI64, _T_LIST, _T_NONE, _T_STRLIST = range(10)


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def key(self, name: str):
        raw = name.encode("utf-8")
        self.buf += struct.pack("<H", len(raw)) + raw

    def put(self, name: str, value):
        self.key(name)
        self._value(value)

    def _value(self, value):
        b = self.buf
        if value is None:
            b += struct.pack("<B", _T_NONE)
        elif isinstance(value, bool):
            b += struct.pack("<BB", _T_BOOL, int(value))
        elif isinstance(value, (int, np.integer)):
            b += struct.pack("<Bq", _T_I64, int(value))
        elif isinstance(value, (float, np.floating)):
            b += struct.pack("<Bd", _T_F64, float(value))
        elif isinstance(value, str):
            raw = value.encode("utf-8")
            b += struct.pack("<BI", _T_STR, len(raw)) + raw
        elif isinstance(value, np.ndarray):
            code = {np.dtype("f8"): _T_ARRF, np.dtype("u1"): _T_ARRU8, np.dtype("i8"): _T_ARRI64}
            a = value
            if a.dtype not in code:
                a = a.astype(np.float64)
            b += struct.pack("<BB", code[a.dtype], a.ndim)
            b += struct.pack(f"<{a.ndim}Q", *a.shape)
            b += np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes()
        elif isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value) and value:
            b += struct.pack("<BI", _T_STRLIST, len(value))
            for v in value:
                raw = v.encode("utf-8")
                b += struct.pack("<I", len(raw)) + raw
        elif isinstance(value, (list, tuple)):
            b += struct.pack("<BI", _T_LIST, len(value))
            for v in value:
                self._value(np.asarray(v, dtype=np.float64))
        else:
            raise TypeError(f"cannot serialize {type(value)}")


class _Reader:
    def __init__(self, buf: bytes, context: str):
        self.buf = buf
        self.off = 0
        self.context = context

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ModelFormatError(f"{self.context}: truncated payload")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def read_all(self) -> dict:
        out = {}
        while self.off < len(self.buf):
            (klen,) = struct.unpack("<H", self._take(2))
            key = self._take(klen).decode("utf-8")
            out[key] = self._value()
        return out

    def _value(self):
        (code,) = struct.unpack("<B", self._take(1))
        if code == _T_NONE:
            return None
        if code == _T_BOOL:
            return bool(self._take(1)[0])
        if code == _T_I64:
            return struct.unpack("<q", self._take(8))[0]
        if code == _T_F64:
            return struct.unpack("<d", self._take(8))[0]
        if code == _T_STR:
            (n,) = struct.unpack("<I", self._take(4))
            return self._take(n).decode("utf-8")
        if code in (_T_ARRF, _T_ARRU8, _T_ARRI64):
            (ndim,) = struct.unpack("<B", self._take(1))
            shape = struct.unpack(f"<{ndim}Q", self._take(8 * ndim))
            dtype = {_T_ARRF: "<f8", _T_ARRU8: "<u1", _T_ARRI64: "<i8"}[code]
            count = int(np.prod(shape)) if ndim else 1
            a = np.frombuffer(self._take(count * np.dtype(dtype).itemsize), dtype=dtype)
            return a.reshape(shape).copy()
        if code == _T_LIST:
            (n,) = struct.unpack("<I", self._take(4))
            return [self._value() for _ in range(n)]
        if code == _T_STRLIST:
            (n,) = struct.unpack("<I", self._take(4))
            out = []
            for _ in range(n):
                (slen,) = struct.unpack("<I", self._take(4))
                out.append(self._take(slen).decode("utf-8"))
            return out
        raise ModelFormatError(f"{self.context}: unknown value code {code}")


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def save_model(model: BmimlModel, path) -> None:
    """Write the sectioned binary container (bit-exact round trip)."""
    out = bytearray(_MODEL_MAGIC)
    out += struct.pack("<I", model.format_version)

    w = _Writer()
    w.put("variant", model.variant)
    w.put("tau", model.tau)
    w.put("seed", model.config.seed)
    w.put("global_view", model.config.global_view)
    w.put("outer_rounds", model.config.outer_rounds)
    w.put("t_range", np.array(model.t_range))
    w.put("num_classes", model.num_classes)
    out += _section(b"PIPE", bytes(w.buf))

    if model.awlel_model is not None:
        am = model.awlel_model
        fmap = am.bls_map
        w = _Writer()
        for name in ("m1", "k1", "m2", "k2"):
            w.put(name, getattr(fmap.config, name))
        w.put("feat_act", fmap.config.feat_act)
        w.put("enh_act", fmap.config.enh_act)
        w.put("bls_lam", fmap.config.lam)
        w.put("standardize", fmap.config.standardize)
        w.put("bls_seed", fmap.config.seed)
        w.put("wz", list(fmap.wz))
        w.put("bz", list(fmap.bz))
        w.put("wh", list(fmap.wh))
        w.put("bh", list(fmap.bh))
        w.put("std_mean", fmap.standardizer.mean if fmap.standardizer else None)
        w.put("std_std", fmap.standardizer.std if fmap.standardizer else None)
        out += _section(b"BLSM", bytes(w.buf))

        w = _Writer()
        cfg = am.config
        w.put("lam", cfg.lam)
        w.put("vartheta", cfg.vartheta)
        w.put("max_iters", cfg.max_iters)
        w.put("tol", cfg.tol)
        w.put("eps_floor", cfg.eps_floor)
        w.put("retarget_act", cfg.retarget_act)
        w.put("include_raw_features", cfg.include_raw_features)
        w.put("wt", am.wt)
        w.put("retarget_bias", am.retarget_bias)
        w.put("t_range", np.array(am.t_range))
        out += _section(b"AWLE", bytes(w.buf))

    if model.smipr_net is not None:
        net = model.smipr_net
        cfg = net.config
        w = _Writer()
        w.put("num_clusters", -1 if cfg.num_clusters is None else cfg.num_clusters)
        w.put("num_layers", cfg.num_layers)
        w.put("hidden_widths", np.asarray(cfg.hidden_widths, dtype=np.int64))
        w.put("eta", cfg.eta)
        w.put("epochs", cfg.epochs)
        w.put("hidden_act", cfg.hidden_act)
        w.put("layer2_weight_rule", cfg.layer2_weight_rule)
        w.put("smipr_seed", cfg.seed)
        w.put("clustering_max_iters", cfg.clustering_max_iters)
        w.put("shuffle_each_epoch", cfg.shuffle_each_epoch)
        w.put("num_classes", net.num_classes)
        w.put("weights", list(net.weights))
        cm = net.cluster_model
        w.put("medoid_ids", [m.id for m in cm.medoids])
        w.put("medoid_instances", [m.instances for m in cm.medoids])
        w.put("medoid_labels", np.stack([m.label for m in cm.medoids]).astype(np.uint8))
        w.put("medoid_indices", np.asarray(cm.medoid_indices, dtype=np.int64))
        w.put("assignments", np.asarray(cm.assignments, dtype=np.int64))
        w.put("within_cluster_cost", cm.within_cluster_cost)
        out += _section(b"SMPR", bytes(w.buf))

    with open(path, "wb") as f:
        f.write(bytes(out))


def _read_sections(data: bytes, path) -> dict:
    if len(data) < 10 or data[:6] != _MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model container (bad magic)")
    (version,) = struct.unpack_from("<I", data, 6)
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )
    sections = {}
    off = 10
    while off < len(data):
        if off + 12 > len(data):
            raise ModelFormatError(f"{path}: truncated section header at byte {off}")
        tag = data[off : off + 4]
        (length,) = struct.unpack_from("<Q", data, off + 4)
        off += 12
        if off + length + 4 > len(data):
            raise ModelFormatError(f"{path}: truncated section {tag!r}")
        payload = data[off : off + length]
        (crc,) = struct.unpack_from("<I", data, off + length)
        if zlib.crc32(payload) != crc:
            raise ModelFormatError(f"{path}: CRC mismatch in section {tag!r}")
        sections[tag.decode("ascii")] = _Reader(payload, f"{path}:{tag!r}").read_all()
        off += length + 4
    if "PIPE" not in sections:
        raise ModelFormatError(f"{path}: missing PIPE section")
    return sections


def load_model(path) -> BmimlModel:
    """Read a model container written by save_model."""
    with open(path, "rb") as f:
        data = f.read()
    sections = _read_sections(data, path)
    pipe = sections["PIPE"]
    variant = pipe["variant"]
    tau = pipe["tau"]
    t_range = tuple(pipe["t_range"])

    awlel_model = None
    if "AWLE" in sections:
        b = sections["BLSM"]
        bls_cfg = BlsConfig(
            m1=b["m1"], k1=b["k1"], m2=b["m2"], k2=b["k2"],
            feat_act=b["feat_act"], enh_act=b["enh_act"], lam=b["bls_lam"],
            standardize=b["standardize"], seed=b["bls_seed"],
        )
        std = None
        if b["std_mean"] is not None:
            std = Standardizer(mean=b["std_mean"], std=b["std_std"])
        fmap = BlsFeatureMap(
            wz=tuple(b["wz"]), bz=tuple(b["bz"]), wh=tuple(b["wh"]), bh=tuple(b["bh"]),
            config=bls_cfg, standardizer=std,
        )
        a = sections["AWLE"]
        awlel_cfg = AwlelConfig(
            lam=a["lam"], vartheta=a["vartheta"], max_iters=a["max_iters"], tol=a["tol"],
            eps_floor=a["eps_floor"], retarget_act=a["retarget_act"],
            include_raw_features=a["include_raw_features"],
        )
        awlel_model = AwlelModel(
            bls_map=fmap, retarget_bias=a["retarget_bias"], wt=a["wt"],
            t_range=tuple(a["t_range"]), config=awlel_cfg,
        )

    smipr_net = None
    if "SMPR" in sections:
        s = sections["SMPR"]
        smipr_cfg = SmiprConfig(
            num_clusters=None if s["num_clusters"] < 0 else s["num_clusters"],
            num_layers=s["num_layers"],
            hidden_widths=tuple(int(v) for v in s["hidden_widths"]),
            eta=s["eta"], epochs=s["epochs"], hidden_act=s["hidden_act"],
            layer2_weight_rule=s["layer2_weight_rule"], seed=s["smipr_seed"],
            clustering_max_iters=s["clustering_max_iters"],
            shuffle_each_epoch=s["shuffle_each_epoch"],
        )
        medoids = tuple(
            Bag(inst, lab, mid)
            for inst, lab, mid in zip(s["medoid_instances"], s["medoid_labels"], s["medoid_ids"])
        )
        cluster = ClusterModel(
            medoids=medoids,
            medoid_indices=tuple(int(v) for v in s["medoid_indices"]),
            assignments=s["assignments"],
            within_cluster_cost=s["within_cluster_cost"],
            cost_history=(),
        )
        smipr_net = SmiprNet(
            cluster_model=cluster,
            weights=tuple(s["weights"]),
            num_classes=s["num_classes"],
            config=smipr_cfg,
        )

    config = PipelineConfig(
        bls_config=awlel_model.bls_map.config if awlel_model else BlsConfig(),
        awlel_config=awlel_model.config if awlel_model else AwlelConfig(),
        smipr_config=smipr_net.config if smipr_net else SmiprConfig(),
        tau=tuple(float(v) for v in tau),
        seed=pipe["seed"],
        global_view=pipe["global_view"],
        outer_rounds=pipe["outer_rounds"],
    )
    return BmimlModel(
        awlel_model=awlel_model,
        smipr_net=smipr_net,
        t_range=t_range,
        tau=tau,
        config=config,
        variant=variant,
    )
