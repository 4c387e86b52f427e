"""Hierarchical datasets: synthetic generation, CSV ingestion and splitting.

A dataset is a grid of (output, replica) blocks, each holding the observed
inputs and targets for that replica of that output. Blocks may be empty,
which is how an entirely missing replica is represented.

The CSV schema is one observation per row with header
``output,replica,x_0[,x_1,...],y``; output and replica are integer indices
from zero. A JSON sidecar (``<path>.meta.json``) carries metadata such as
standardisation constants and generator settings.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    MATERN32,
    RBF,
    HierarchicalKernel,
    StationaryKernel,
    hier_block_cov,
    latent_cov,
)
from .kron import cholesky_jitter


@dataclass
class ReplicaBlock:
    inputs: np.ndarray  # (n, v)
    targets: np.ndarray  # (n,)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, float))
        self.targets = np.asarray(self.targets, float).ravel()
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )

    @property
    def n_points(self) -> int:
        return self.targets.shape[0]


@dataclass
class OutputRecord:
    replicas: list
    name: str = ""


@dataclass
class HierarchicalDataset:
    outputs: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.outputs:
            raise ValueError("a dataset needs at least one output")
        counts = {len(o.replicas) for o in self.outputs}
        if len(counts) != 1:
            raise ValueError("every output must carry the same number of replicas")
        dims = {
            b.inputs.shape[1] for o in self.outputs for b in o.replicas if b.n_points > 0
        }
        if len(dims) > 1:
            raise ValueError(f"inputs disagree on dimension: {sorted(dims)}")

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def n_replicas(self) -> int:
        return len(self.outputs[0].replicas)

    @property
    def input_dim(self) -> int:
        for o in self.outputs:
            for b in o.replicas:
                if b.n_points > 0:
                    return b.inputs.shape[1]
        raise ValueError("dataset has no observations")

    @property
    def n_points(self) -> int:
        return sum(b.n_points for o in self.outputs for b in o.replicas)

    def block(self, output: int, replica: int) -> ReplicaBlock:
        return self.outputs[output].replicas[replica]

    def per_output_blocks(self, output: int) -> list:
        v = self.input_dim
        return [
            b.inputs if b.n_points else np.zeros((0, v))
            for b in self.outputs[output].replicas
        ]

    def per_output_targets(self, output: int) -> np.ndarray:
        parts = [b.targets for b in self.outputs[output].replicas]
        return np.concatenate(parts) if parts else np.zeros(0)

    def training_arrays(self):
        """Per-output block lists and stacked target vectors."""
        x = [self.per_output_blocks(d) for d in range(self.n_outputs)]
        y = [self.per_output_targets(d) for d in range(self.n_outputs)]
        return x, y

    def has_common_inputs(self) -> bool:
        """True when every output is observed on the same inputs, in order."""
        first = self.outputs[0]
        for o in self.outputs[1:]:
            for a, b in zip(first.replicas, o.replicas):
                if a.inputs.shape != b.inputs.shape or not np.array_equal(a.inputs, b.inputs):
                    return False
        return True


@dataclass
class SyntheticConfig:
    """Settings for sampling a dataset from the model's own prior."""

    n_outputs: int = 50
    n_replicas: int = 3
    points_per_replica: int = 10
    input_dim: int = 1
    latent_dim: int = 2
    shared_kernel: StationaryKernel = None
    replica_kernel: StationaryKernel = None
    latent_kernel: StationaryKernel = None
    noise_variance: float = 0.02
    share_inputs: bool = False

    def __post_init__(self):
        if self.shared_kernel is None:
            self.shared_kernel = StationaryKernel(MATERN32, 0.1, np.ones(self.input_dim))
        if self.replica_kernel is None:
            self.replica_kernel = StationaryKernel(MATERN32, 1.0, np.ones(self.input_dim))
        if self.latent_kernel is None:
            self.latent_kernel = StationaryKernel(RBF, 1.0, np.ones(self.latent_dim))
        for name in ("n_outputs", "n_replicas", "points_per_replica", "input_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be nonnegative")


def generate_synthetic(config: SyntheticConfig, seed: int) -> HierarchicalDataset:
    """Sample a dataset from the joint prior.

    Latent coordinates are standard normal; inputs are uniform on [0, 1] per
    output and replica (one common set when ``share_inputs``). Function
    values are drawn through the Kronecker-structured Cholesky factors of the
    latent-coordinate Gram and the hierarchical input Gram over the pooled
    per-replica grids, then sliced back to each output's own input set.
    """
    rng = np.random.default_rng(seed)
    d, r, n, v = (
        config.n_outputs,
        config.n_replicas,
        config.points_per_replica,
        config.input_dim,
    )
    latents = rng.standard_normal((d, config.latent_dim))
    if config.share_inputs:
        grids = [[np.sort(rng.uniform(size=(n, v)), axis=0) for _ in range(r)]] * d
    else:
        grids = [[np.sort(rng.uniform(size=(n, v)), axis=0) for _ in range(r)] for _ in range(d)]

    hier = HierarchicalKernel(shared=config.shared_kernel, replica=config.replica_kernel)
    kh = latent_cov(config.latent_kernel, latents, latents)
    chol_h = cholesky_jitter(kh, base_jitter=1e-10).lower
    if config.share_inputs:
        pooled = [grids[0][rep] for rep in range(r)]
        rows_of = lambda d_idx, rep: np.arange(rep * n, (rep + 1) * n)
    else:
        # pool every output's replica-r grid into one super block so a single
        # Kronecker draw carries the exact cross-output covariance
        pooled = [np.concatenate([grids[di][rep] for di in range(d)], axis=0) for rep in range(r)]
        rows_of = lambda d_idx, rep: np.arange(rep * d * n + d_idx * n, rep * d * n + (d_idx + 1) * n)
    kx = hier_block_cov(hier, pooled, pooled)
    chol_x = cholesky_jitter(kx, base_jitter=1e-10).lower
    white = rng.standard_normal((kx.shape[0], d))
    values = chol_x @ white @ chol_h.T  # (pooled points, outputs)
    noise = rng.normal(scale=np.sqrt(config.noise_variance), size=(d, r, n))

    outputs = []
    for di in range(d):
        replicas = []
        for rep in range(r):
            f = values[rows_of(di, rep), di]
            replicas.append(ReplicaBlock(inputs=grids[di][rep], targets=f + noise[di, rep]))
        outputs.append(OutputRecord(replicas=replicas, name=f"output_{di}"))
    metadata = {
        "generator": {
            "seed": int(seed),
            "n_outputs": d,
            "n_replicas": r,
            "points_per_replica": n,
            "input_dim": v,
            "latent_dim": config.latent_dim,
            "noise_variance": config.noise_variance,
            "share_inputs": config.share_inputs,
            "shared_kernel": _kernel_meta(config.shared_kernel),
            "replica_kernel": _kernel_meta(config.replica_kernel),
            "latent_kernel": _kernel_meta(config.latent_kernel),
        }
    }
    return HierarchicalDataset(outputs=outputs, metadata=metadata)


def _kernel_meta(k: StationaryKernel) -> dict:
    return {"family": k.family, "variance": float(k.variance), "lengthscales": k.lengthscales.tolist()}


@dataclass
class SplitPlan:
    """How to carve a dataset into train and test parts.

    ``random_fraction`` keeps the given fraction of each replica for
    training; ``missing_replica`` moves whole (output, replica) blocks into
    the test set.
    """

    mode: str
    fraction: float = 0.5
    missing: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random_fraction", "missing_replica"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "random_fraction" and not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must lie strictly between 0 and 1")
        if self.mode == "missing_replica" and not self.missing:
            raise ValueError("missing_replica mode needs at least one (output, replica) pair")


def split(dataset: HierarchicalDataset, plan: SplitPlan):
    """Disjoint, exhaustive train/test partition according to the plan."""
    v = dataset.input_dim
    empty = lambda: ReplicaBlock(inputs=np.zeros((0, v)), targets=np.zeros(0))
    train_outputs = []
    test_outputs = []
    if plan.mode == "missing_replica":
        pairs = {(int(d), int(r)) for d, r in plan.missing}
        for d, r in pairs:
            if not (0 <= d < dataset.n_outputs and 0 <= r < dataset.n_replicas):
                raise ValueError(f"missing pair ({d}, {r}) outside the dataset shape")
        observed = {
            d: dataset.n_replicas - sum(1 for dd, _ in pairs if dd == d)
            for d in range(dataset.n_outputs)
        }
        if any(count < 1 for count in observed.values()):
            raise ValueError("every output must keep at least one observed replica")
        for d, record in enumerate(dataset.outputs):
            train_reps, test_reps = [], []
            for r, block in enumerate(record.replicas):
                if (d, r) in pairs:
                    train_reps.append(empty())
                    test_reps.append(ReplicaBlock(block.inputs.copy(), block.targets.copy()))
                else:
                    train_reps.append(ReplicaBlock(block.inputs.copy(), block.targets.copy()))
                    test_reps.append(empty())
            train_outputs.append(OutputRecord(replicas=train_reps, name=record.name))
            test_outputs.append(OutputRecord(replicas=test_reps, name=record.name))
    else:
        rng = np.random.default_rng(plan.seed)
        for d, record in enumerate(dataset.outputs):
            train_reps, test_reps = [], []
            for r, block in enumerate(record.replicas):
                n = block.n_points
                if n == 0:
                    train_reps.append(empty())
                    test_reps.append(empty())
                    continue
                n_train = max(1, int(round(plan.fraction * n)))
                perm = rng.permutation(n)
                train_idx = np.sort(perm[:n_train])
                test_idx = np.sort(perm[n_train:])
                train_reps.append(ReplicaBlock(block.inputs[train_idx], block.targets[train_idx]))
                test_reps.append(ReplicaBlock(block.inputs[test_idx], block.targets[test_idx]))
            train_outputs.append(OutputRecord(replicas=train_reps, name=record.name))
            test_outputs.append(OutputRecord(replicas=test_reps, name=record.name))
    meta = dict(dataset.metadata)
    return (
        HierarchicalDataset(outputs=train_outputs, metadata=meta),
        HierarchicalDataset(outputs=test_outputs, metadata=meta),
    )


def _format_value(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(dataset: HierarchicalDataset, path) -> None:
    """Write the dataset plus a JSON metadata sidecar."""
    path = pathlib.Path(path)
    v = dataset.input_dim
    header = ["output", "replica"] + [f"x_{i}" for i in range(v)] + ["y"]
    lines = [",".join(header)]
    for d, record in enumerate(dataset.outputs):
        for r, block in enumerate(record.replicas):
            for i in range(block.n_points):
                cells = [str(d), str(r)]
                cells += [_format_value(val) for val in block.inputs[i]]
                cells.append(_format_value(block.targets[i]))
                lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    if dataset.metadata:
        sidecar = path.with_name(path.name + ".meta.json")
        sidecar.write_text(json.dumps(dataset.metadata, indent=2, sort_keys=True) + "\n")


class CsvSchemaError(ValueError):
    """A data file does not follow the documented schema."""


def load_csv(path, standardize: bool = False) -> HierarchicalDataset:
    """Read a dataset; optionally rescale inputs and targets to zero mean and
    unit variance, recording the constants in the metadata."""
    path = pathlib.Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise CsvSchemaError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["output", "replica"] or header[-1] != "y":
        raise CsvSchemaError(f"{path}:1: header must be output,replica,x_0[,...],y")
    x_cols = header[2:-1]
    if x_cols != [f"x_{i}" for i in range(len(x_cols))] or not x_cols:
        raise CsvSchemaError(f"{path}:1: input columns must be x_0, x_1, ...")
    v = len(x_cols)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise CsvSchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            d = int(cells[0])
            r = int(cells[1])
            xs = [float(c) for c in cells[2 : 2 + v]]
            y = float(cells[-1])
        except ValueError as err:
            raise CsvSchemaError(f"{path}:{lineno}: non-numeric field ({err})") from None
        if d < 0 or r < 0:
            raise CsvSchemaError(f"{path}:{lineno}: output and replica indices must be >= 0")
        rows.append((d, r, xs, y))
    if not rows:
        raise CsvSchemaError(f"{path}: no observations")
    n_outputs = max(row[0] for row in rows) + 1
    n_replicas = max(row[1] for row in rows) + 1
    grid = [[([], []) for _ in range(n_replicas)] for _ in range(n_outputs)]
    for d, r, xs, y in rows:
        grid[d][r][0].append(xs)
        grid[d][r][1].append(y)
    outputs = []
    for d in range(n_outputs):
        replicas = []
        for r in range(n_replicas):
            xs, ys = grid[d][r]
            if xs:
                replicas.append(ReplicaBlock(inputs=np.asarray(xs), targets=np.asarray(ys)))
            else:
                replicas.append(ReplicaBlock(inputs=np.zeros((0, v)), targets=np.zeros(0)))
        outputs.append(OutputRecord(replicas=replicas, name=f"output_{d}"))
    metadata = {}
    sidecar = path.with_name(path.name + ".meta.json")
    if sidecar.exists():
        metadata = json.loads(sidecar.read_text())
    dataset = HierarchicalDataset(outputs=outputs, metadata=metadata)
    if standardize:
        dataset = standardize_dataset(dataset)
    return dataset


def standardize_dataset(dataset: HierarchicalDataset) -> HierarchicalDataset:
    """Rescale inputs and targets to zero mean and unit variance."""
    all_x = np.concatenate(
        [b.inputs for o in dataset.outputs for b in o.replicas if b.n_points > 0], axis=0
    )
    all_y = np.concatenate([b.targets for o in dataset.outputs for b in o.replicas])
    x_mean = all_x.mean(axis=0)
    x_std = all_x.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    y_mean = float(all_y.mean())
    y_std = float(all_y.std()) or 1.0
    outputs = []
    for record in dataset.outputs:
        replicas = [
            ReplicaBlock(
                inputs=(b.inputs - x_mean) / x_std if b.n_points else b.inputs,
                targets=(b.targets - y_mean) / y_std,
            )
            for b in record.replicas
        ]
        outputs.append(OutputRecord(replicas=replicas, name=record.name))
    metadata = dict(dataset.metadata)
    metadata["standardization"] = {
        "x_mean": x_mean.tolist(),
        "x_std": x_std.tolist(),
        "y_mean": y_mean,
        "y_std": y_std,
    }
    return HierarchicalDataset(outputs=outputs, metadata=metadata)
