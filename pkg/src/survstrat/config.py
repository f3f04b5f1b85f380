"""Experiment configuration: loading, exhaustive validation, hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .clustering import SUPPORTED_ALGORITHMS
from .errors import ConfigurationError
from .losses import LossWeights

HEAD_MODES = ("shared", "per-cluster")


@dataclass
class ExperimentConfig:
    """Everything one training run needs, serializable to and from JSON."""

    # data
    dataset_preset: str | None = None
    schema_file: str | None = None
    # architecture
    variational: bool = True
    siamese: bool = False
    heads: str = "shared"
    clustering: str = "kmeans"
    n_clusters: int = 2
    latent_dim: int = 16
    n_bins: int = 20
    nu: float = 1.0
    routing_view: int = 1
    encoder_hidden: tuple = (64, 32)
    head_hidden: tuple = (64,)
    # objectives
    weights: LossWeights = field(default_factory=LossWeights)
    # optimization
    learning_rate: float = 1e-3
    batch_size: int = 256
    pretrain_epochs: int = 100
    max_epochs: int = 200
    patience: int = 25
    early_stopping: bool = True
    spl_scope: str = "batch"
    seed: int = 0

    def validate(self) -> None:
        """Collect every violation and raise one error naming them all."""
        problems = []
        if self.clustering == "spectral":
            problems.append(
                "clustering 'spectral' is excluded from this toolkit; "
                f"choose from {list(SUPPORTED_ALGORITHMS)}"
            )
        elif self.clustering not in SUPPORTED_ALGORITHMS:
            problems.append(
                f"unknown clustering '{self.clustering}'; choose from {list(SUPPORTED_ALGORITHMS)}"
            )
        if self.heads not in HEAD_MODES:
            problems.append(f"heads must be one of {HEAD_MODES}, got '{self.heads}'")
        if self.n_clusters < 1:
            problems.append(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.latent_dim < 1:
            problems.append(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.n_bins < 1:
            problems.append(f"n_bins must be >= 1, got {self.n_bins}")
        if self.nu <= 0:
            problems.append(f"nu must be positive, got {self.nu}")
        if self.routing_view not in (1, 2):
            problems.append(f"routing_view must be 1 or 2, got {self.routing_view}")
        if self.routing_view == 2 and not self.siamese:
            problems.append("routing_view=2 requires siamese=true")
        if not self.encoder_hidden or not self.head_hidden:
            problems.append("encoder_hidden and head_hidden each need at least one layer")
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_epochs < 0 or self.max_epochs < 0:
            problems.append("epoch counts cannot be negative")
        if self.patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience}")
        if self.spl_scope not in ("batch", "dataset"):
            problems.append(f"spl_scope must be 'batch' or 'dataset', got '{self.spl_scope}'")
        try:
            self.weights.validate(self.siamese)
        except ConfigurationError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigurationError(
                "invalid configuration:\n  - " + "\n  - ".join(problems)
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            w = d["weights"]
            unknown_w = sorted(set(w) - set(LossWeights.__dataclass_fields__))
            if unknown_w:
                raise ConfigurationError(
                    f"unknown loss-weight keys: {', '.join(unknown_w)}"
                )
            d["weights"] = LossWeights(**w)
        for key in ("encoder_hidden", "head_hidden"):
            if key in d:
                d[key] = tuple(int(x) for x in d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_dict(raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
