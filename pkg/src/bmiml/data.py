"""MIML data model: bags of instances, dataset files, splits, synthetic data.

A bag is an ordered set of equal-dimension instance vectors with one binary
multi-label target.  Two on-disk formats are supported:

csv-bags (text)::

    #miml v1 D=<int> K=<int>
    bag <id> n=<int> y=<K comma-separated 0/1>
    <D comma-separated decimals>          (n lines)

binary-bags: magic ``MIML1\\0``, u32 N, u32 D, u32 K, then per bag
u32 id-length + UTF-8 id, u32 n, K label bytes, n*D little-endian f64.

Both formats round-trip values bit-exactly.
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, ParseError
from .numerics import STREAM_SHUFFLE, STREAM_SPLIT, STREAM_SYNTH, stream_rng

_BINARY_MAGIC = b"MIML1\x00"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Bag:
    """One sample: an (n, D) float64 instance matrix plus a 0/1 label vector.

    Labels given in {-1, 1} convention are canonicalized to {0, 1} on
    construction.  Instances and labels are frozen after validation.
    """

    __slots__ = ("instances", "label", "id")

    def __init__(self, instances, label, id: str):
        inst = np.asarray(instances, dtype=np.float64)
        if inst.ndim != 2 or inst.shape[0] < 1 or inst.shape[1] < 1:
            raise DimensionError(
                f"bag {id!r}: instances must form a nonempty 2-D matrix, got shape {inst.shape}"
            )
        if not np.all(np.isfinite(inst)):
            raise ValueError(f"bag {id!r}: non-finite instance values")
        lab = np.asarray(label)
        if lab.ndim != 1 or lab.shape[0] < 2:
            raise ValueError(f"bag {id!r}: label must be a vector of length >= 2")
        lab = np.where(lab == -1, 0, lab)
        if not np.isin(lab, (0, 1)).all():
            raise ValueError(f"bag {id!r}: label entries must be 0/1 (or -1/1)")
        self.instances = _freeze(inst)
        self.label = _freeze(lab.astype(np.uint8))
        self.id = str(id)

    @property
    def num_instances(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        return (
            self.id == other.id
            and self.instances.shape == other.instances.shape
            and np.array_equal(self.instances, other.instances)
            and np.array_equal(self.label, other.label)
        )

    def __repr__(self):
        return f"Bag(id={self.id!r}, n={self.num_instances}, D={self.dim}, K={len(self.label)})"


class MimlDataset:
    """A named collection of bags sharing instance dimension D and label arity K."""

    def __init__(self, bags, instance_dim: int = None, num_classes: int = None, name: str = "dataset"):
        bags = list(bags)
        if bags:
            d = bags[0].dim
            k = len(bags[0].label)
        else:
            if instance_dim is None or num_classes is None:
                raise ConfigError("empty dataset needs explicit instance_dim and num_classes")
            d, k = instance_dim, num_classes
        if instance_dim is not None and instance_dim != d:
            raise DimensionError(f"declared D={instance_dim} but bags have D={d}")
        if num_classes is not None and num_classes != k:
            raise DimensionError(f"declared K={num_classes} but bags have K={k}")
        for b in bags:
            if b.dim != d:
                raise DimensionError(f"bag {b.id!r} has dimension {b.dim}, expected {d}")
            if len(b.label) != k:
                raise DimensionError(f"bag {b.id!r} has label arity {len(b.label)}, expected {k}")
        self.bags = bags
        self.instance_dim = d
        self.num_classes = k
        self.name = name
        if bags:
            pos = self.label_matrix().sum(axis=0)
            missing = np.nonzero(pos == 0)[0]
            if missing.size:
                warnings.warn(
                    f"dataset {name!r}: classes {missing.tolist()} have no positive bag; "
                    "stratified folds may be degenerate",
                    stacklevel=2,
                )

    @property
    def num_bags(self) -> int:
        return len(self.bags)

    def label_matrix(self) -> np.ndarray:
        """(N, K) uint8 matrix of bag labels."""
        return np.stack([b.label for b in self.bags]) if self.bags else np.zeros((0, self.num_classes), np.uint8)

    def subset(self, indices, name: str = None) -> "MimlDataset":
        return MimlDataset(
            [self.bags[i] for i in indices],
            instance_dim=self.instance_dim,
            num_classes=self.num_classes,
            name=name or self.name,
        )

    def __eq__(self, other):
        if not isinstance(other, MimlDataset):
            return NotImplemented
        return (
            self.instance_dim == other.instance_dim
            and self.num_classes == other.num_classes
            and self.bags == other.bags
        )

    def __repr__(self):
        return (
            f"MimlDataset(name={self.name!r}, N={self.num_bags}, "
            f"D={self.instance_dim}, K={self.num_classes})"
        )


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive train/validation/test index partition."""

    train_indices: tuple
    validation_indices: tuple
    test_indices: tuple
    seed: int = 0

    def sizes(self):
        return (len(self.train_indices), len(self.validation_indices), len(self.test_indices))


# ---------------------------------------------------------------------------
# file formats


def save_dataset(ds: MimlDataset, path, format: str = "csv-bags") -> None:
    """Write a dataset; ``load_dataset(save_dataset(ds))`` is bit-exact."""
    if ds.num_bags == 0:
        raise ValueError("refusing to write an empty dataset")
    if format == "csv-bags":
        _save_csv(ds, path)
    elif format == "binary-bags":
        _save_binary(ds, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def load_dataset(path, format: str = None) -> MimlDataset:
    """Read a dataset file; format is sniffed from the header when omitted."""
    with open(path, "rb") as f:
        head = f.read(6)
    if format is None:
        if head == _BINARY_MAGIC:
            format = "binary-bags"
        elif head.startswith(b"#miml"):
            format = "csv-bags"
        else:
            raise ParseError(f"{path}: unrecognized dataset header {head!r}")
    if format == "csv-bags":
        return _load_csv(path)
    if format == "binary-bags":
        return _load_binary(path)
    raise ConfigError(f"unknown dataset format {format!r}")


def _save_csv(ds: MimlDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#miml v1 D={ds.instance_dim} K={ds.num_classes}\n")
        for b in ds.bags:
            if any(ch.isspace() for ch in b.id):
                raise ValueError(f"bag id {b.id!r} contains whitespace; not representable in csv-bags")
            y = ",".join(str(int(v)) for v in b.label)
            f.write(f"bag {b.id} n={b.num_instances} y={y}\n")
            for row in b.instances:
                f.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_csv(path) -> MimlDataset:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#miml" or header[1] != "v1":
        raise ParseError(f"{path}:1: bad header {lines[0]!r}")
    try:
        d = int(header[2].removeprefix("D="))
        k = int(header[3].removeprefix("K="))
    except ValueError:
        raise ParseError(f"{path}:1: bad header {lines[0]!r}") from None

    bags = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "bag":
            raise ParseError(f"{path}:{i + 1}: expected 'bag <id> n=.. y=..', got {lines[i]!r}")
        bag_id = parts[1]
        try:
            n = int(parts[2].removeprefix("n="))
            label = [int(v) for v in parts[3].removeprefix("y=").split(",")]
        except ValueError:
            raise ParseError(f"{path}:{i + 1}: bad bag header {lines[i]!r}") from None
        if len(label) != k:
            raise ParseError(f"{path}:{i + 1}: bag {bag_id!r} has {len(label)} labels, header says K={k}")
        if i + n > len(lines) - 1:
            raise ParseError(f"{path}:{i + 1}: bag {bag_id!r} declares {n} instances but file ends early")
        rows = []
        for j in range(n):
            line_no = i + 1 + j
            vals = lines[line_no].split(",")
            if len(vals) != d:
                raise DimensionError(
                    f"{path}:{line_no + 1}: bag {bag_id!r} instance has {len(vals)} values, expected D={d}"
                )
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise ParseError(f"{path}:{line_no + 1}: bad decimal in {lines[line_no]!r}") from None
        bags.append(Bag(np.array(rows, dtype=np.float64), label, bag_id))
        i += 1 + n
    if not bags:
        raise ParseError(f"{path}: no bags found")
    from pathlib import Path

    return MimlDataset(bags, instance_dim=d, num_classes=k, name=Path(path).stem)


def _save_binary(ds: MimlDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(_BINARY_MAGIC)
        f.write(struct.pack("<III", ds.num_bags, ds.instance_dim, ds.num_classes))
        for b in ds.bags:
            raw_id = b.id.encode("utf-8")
            f.write(struct.pack("<I", len(raw_id)))
            f.write(raw_id)
            f.write(struct.pack("<I", b.num_instances))
            f.write(b.label.astype("<u1").tobytes())
            f.write(b.instances.astype("<f8").tobytes())


def _load_binary(path) -> MimlDataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 18 or data[:6] != _BINARY_MAGIC:
        raise ParseError(f"{path}: not a binary-bags file")
    off = 6
    n_bags, d, k = struct.unpack_from("<III", data, off)
    off += 12
    bags = []
    try:
        for _ in range(n_bags):
            (id_len,) = struct.unpack_from("<I", data, off)
            off += 4
            bag_id = data[off : off + id_len].decode("utf-8")
            off += id_len
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            label = np.frombuffer(data, dtype="<u1", count=k, offset=off)
            off += k
            inst = np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d)
            off += n * d * 8
            bags.append(Bag(inst, label, bag_id))
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated or corrupt at byte {off}: {exc}") from None
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes after last bag")
    from pathlib import Path

    return MimlDataset(bags, instance_dim=d, num_classes=k, name=Path(path).stem)


# ---------------------------------------------------------------------------
# operations


def patchify_image(pixels: np.ndarray, mode: str = "strip", span: int = 64) -> list:
    """Cut an H x W x C pixel array into flattened instance vectors.

    strip mode yields H/span row bands (one bag instance per band, matching
    the resolution/64 instance counts of typical chest-X-ray style corpora);
    grid mode yields (H/span)*(W/span) square patches.  The patches are a
    lossless partition of the image.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.ndim != 3:
        raise DimensionError(f"expected H x W x C pixels, got shape {pixels.shape}")
    h, w, c = pixels.shape
    if span < 1:
        raise ConfigError("span must be >= 1")
    if h % span or w % span:
        raise DimensionError(f"image {h}x{w} not divisible by span {span}")
    if mode == "strip":
        return [pixels[r : r + span].reshape(-1) for r in range(0, h, span)]
    if mode == "grid":
        return [
            pixels[r : r + span, col : col + span].reshape(-1)
            for r in range(0, h, span)
            for col in range(0, w, span)
        ]
    raise ConfigError(f"unknown patchify mode {mode!r}")


def _apportion(n: int, fractions) -> list:
    """Largest-remainder rounding of n * fractions; each count within 1 of exact."""
    exact = [n * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    order = np.argsort([counts[i] - exact[i] for i in range(len(exact))])
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(ds: MimlDataset, fractions=(0.6, 0.1, 0.3), seed: int = 0, stratified: bool = False) -> DatasetSplit:
    """Random train/validation/test partition with sizes within 1 bag of exact.

    Plain uniform sampling by default; ``stratified=True`` splits each exact
    label-pattern group separately (best effort for multi-label data).
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three positives summing to 1, got {fractions}")
    n = ds.num_bags
    if n < 3:
        raise ConfigError(f"need at least 3 bags to split, dataset has {n}")
    rng = stream_rng(seed, STREAM_SPLIT)

    def cut(indices):
        indices = np.asarray(indices)
        perm = indices[rng.permutation(len(indices))]
        n_tr, n_va, n_te = _apportion(len(indices), fractions)
        return perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :]

    if stratified:
        groups = {}
        for i, b in enumerate(ds.bags):
            groups.setdefault(tuple(int(v) for v in b.label), []).append(i)
        tr, va, te = [], [], []
        for key in sorted(groups):
            a, b_, c = cut(groups[key])
            tr.extend(a.tolist())
            va.extend(b_.tolist())
            te.extend(c.tolist())
        parts = (sorted(tr), sorted(va), sorted(te))
    else:
        a, b_, c = cut(np.arange(n))
        parts = (a.tolist(), b_.tolist(), c.tolist())
    return DatasetSplit(tuple(parts[0]), tuple(parts[1]), tuple(parts[2]), seed=seed)


def shuffle_instances(ds: MimlDataset, seed: int = 0) -> MimlDataset:
    """Permute instance order inside every bag; labels and bag order untouched."""
    rng = stream_rng(seed, STREAM_SHUFFLE)
    bags = [
        Bag(b.instances[rng.permutation(b.num_instances)], b.label, b.id)
        for b in ds.bags
    ]
    return MimlDataset(bags, ds.instance_dim, ds.num_classes, name=ds.name)


def _prototype_vectors(num_classes: int, dim: int) -> np.ndarray:
    """Planted class prototypes with engineered subset-sum collisions.

    The first three prototypes are scaled axis vectors; from the fourth on,
    each prototype equals the sum of two earlier ones.  Distinct label sets
    then frequently share the same instance *sum*, so a bag's global mean is
    ambiguous about its label set while the instance set itself is not, which
    is the core multi-instance premise the generator is meant to exercise.
    All pairwise prototype distances stay >= the axis scale.
    """
    scale = 4.0
    protos = np.zeros((num_classes, dim))
    base = min(3, num_classes)
    for k in range(base):
        protos[k, k] = scale
    for k in range(base, num_classes):
        protos[k] = protos[(k - base) % base] + protos[(k - base + 1) % base]
    return protos


def generate_synthetic(
    num_bags: int,
    instances_per_bag: int,
    dim: int,
    num_classes: int,
    noise_std: float = 0.0,
    seed: int = 0,
    name: str = "synthetic",
) -> MimlDataset:
    """Synthetic MIML data with planted prototypes.

    Each bag holds 1..min(K, instances_per_bag) distinct class prototypes
    plus null-pattern distractors (origin-anchored), all with isotropic
    Gaussian noise.  Label k is 1 iff prototype k is present, so bag labels
    arise from instances.  With noise_std = 0 a 1-nearest-prototype rule
    over the K class prototypes and the null pattern recovers every label.
    """
    if num_classes < 2:
        raise ConfigError("need num_classes >= 2")
    if dim < num_classes:
        raise ConfigError(f"need dim >= num_classes, got {dim} < {num_classes}")
    if num_bags < 1 or instances_per_bag < 1:
        raise ConfigError("num_bags and instances_per_bag must be >= 1")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    rng = stream_rng(seed, STREAM_SYNTH)
    protos = _prototype_vectors(num_classes, dim)
    max_card = min(num_classes, instances_per_bag)
    bags = []
    for i in range(num_bags):
        card = int(rng.integers(1, max_card + 1))
        classes = rng.choice(num_classes, size=card, replace=False)
        if i < num_classes and (i % num_classes) not in classes:
            # guarantee every class has at least one positive bag
            classes[0] = i % num_classes
        classes = np.sort(classes)
        inst = np.zeros((instances_per_bag, dim))
        inst[: len(classes)] = protos[classes]
        # remaining rows stay at the origin: the null pattern
        if noise_std > 0:
            inst = inst + rng.normal(0.0, noise_std, size=inst.shape)
        inst = inst[rng.permutation(instances_per_bag)]
        label = np.zeros(num_classes, dtype=np.uint8)
        label[classes] = 1
        bags.append(Bag(inst, label, f"bag{i:05d}"))
    return MimlDataset(bags, instance_dim=dim, num_classes=num_classes, name=name)
