from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

COSINE_VARIANTS = ("standard", "inner_product")
RELEASE_TARGETS = ("anchor", "positive")


@dataclass(frozen=True)
class LossConfig:
    """Every hyperparameter of the composite objective and its optimizer.

    ``batch_size=None`` picks 128 for the GRU encoder and 256 for the MLP.
    ``lambda4_release_target`` selects which state the last intermediate term
    pulls to the origin for release anchors.
    """

    beta: float = 0.75
    lambda1: float = 0.7
    lambda2: float = 10.0
    lambda3: float = 0.2
    lambda4: float = 0.05
    alpha: float = 3.0
    triplet_margin: float = 0.2
    cosine_margin: float = 0.05
    cosine_variant: str = "standard"
    near_terminal_t: int = 24
    nonsurvivor_weight: float = 5.0
    batch_size: int | None = None
    learning_rate: float = 3e-5
    epochs: int = 10
    lambda4_release_target: str = "anchor"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "alpha", "triplet_margin", "cosine_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.cosine_variant not in COSINE_VARIANTS:
            raise ValueError(f"cosine_variant must be one of {COSINE_VARIANTS}")
        if self.lambda4_release_target not in RELEASE_TARGETS:
            raise ValueError(f"lambda4_release_target must be one of {RELEASE_TARGETS}")
        if self.near_terminal_t < 1:
            raise ValueError("near_terminal_t must be >= 1")
        if self.nonsurvivor_weight <= 0:
            raise ValueError("nonsurvivor_weight must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")

    def replace(self, **changes) -> "LossConfig":
        return dataclasses.replace(self, **changes)

    def resolved_batch_size(self, encoder: str) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 128 if encoder == "gru" else 256

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "LossConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                continue
            default = fields[key].default
            if raw in (None, "None"):
                kwargs[key] = None
            elif isinstance(default, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            elif isinstance(default, int) or key == "batch_size":
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)


def config_hash(*parts: dict) -> str:
    """Short stable digest of one or more flat dicts."""
    text = "\n".join(f"{k}={d[k]!r}" for d in parts for k in sorted(d))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
