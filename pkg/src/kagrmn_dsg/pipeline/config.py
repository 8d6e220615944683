"""Run configuration and the ablation / gate-swap switchboard."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..dsgnet import DsgConfig
from ..encoder import EncoderConfig
from ..kagrmn import KagrmnConfig

VARIANTS = tuple(f"M{i}" for i in range(13))

# Paper-reported per-dataset settings, kept for reference runs at full width.
PAPER_SETTINGS = {
    "lap14": {"learning_rate": 1e-5, "d_e": 768, "self_heads": 3, "rel_heads": 2, "time_steps": 4},
    "res14": {"learning_rate": 5e-5, "d_e": 768, "self_heads": 3, "rel_heads": 4, "time_steps": 4},
    "res15": {"learning_rate": 3e-5, "d_e": 768, "self_heads": 6, "rel_heads": 6, "time_steps": 2},
}


@dataclass(frozen=True)
class VariantSwitch:
    use_knowledge: bool = True
    only_kagrmn: bool = False
    use_dsg: bool = True
    use_relational: bool = True
    use_pgcn: bool = True
    use_ki_gate: bool = True
    use_a2c: bool = True
    use_a2d: bool = True
    use_self_mha: bool = True
    gate1: str = "adaki"
    gate2: str = "ki"

    @classmethod
    def from_name(cls, name: str) -> "VariantSwitch":
        name = name.upper()
        table = {
            "M0": {},
            "M1": {"use_knowledge": False},
            "M2": {"only_kagrmn": True, "use_dsg": False, "use_ki_gate": False, "use_a2c": False},
            "M3": {"use_dsg": False},
            "M4": {"use_relational": False},
            "M5": {"use_pgcn": False},
            "M6": {"use_ki_gate": False},
            "M7": {"use_a2c": False},
            "M8": {"use_a2d": False},
            "M9": {"use_self_mha": False},
            "M10": {"gate1": "adaki", "gate2": "adaki"},
            "M11": {"gate1": "ki", "gate2": "ki"},
            "M12": {"gate1": "ki", "gate2": "adaki"},
        }
        if name not in table:
            raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
        return cls(**table[name])


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # encoder
    d_e: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    max_len: int = 128
    ff_mult: int = 2
    # recurrent memory network
    time_steps: int = 2
    self_heads: int = 4
    gate_activation: str = "none"
    share_step_params: bool = True
    # graph network
    gcn_layers: int = 2
    rel_heads: int = 2
    d_r: int = 16
    d_max: int = 4
    fusion_hidden: int | None = None
    a2c_source: str = "memory"
    # retrieval
    alpha: float = 0.5
    domain_label: str | None = None
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.3
    aspect_unk_rate: float = 0.0
    epochs: int = 10
    seed: int = 0
    variant: str = "M0"

    def __post_init__(self):
        self.variant = self.variant.upper()
        VariantSwitch.from_name(self.variant)
        if self.a2c_source not in ("memory", "fused"):
            raise ConfigError(f"a2c_source must be 'memory' or 'fused', got {self.a2c_source!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def switch(self) -> VariantSwitch:
        return VariantSwitch.from_name(self.variant)

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.d_e, self.enc_layers, self.enc_heads, self.max_len, self.ff_mult, self.dropout)

    def kagrmn(self) -> KagrmnConfig:
        s = self.switch
        return KagrmnConfig(
            d_e=self.d_e, time_steps=self.time_steps, heads=self.self_heads,
            gate_activation=self.gate_activation, gate_kind=s.gate1,
            share_step_params=self.share_step_params, use_a2d=s.use_a2d,
            use_self_mha=s.use_self_mha, dropout=self.dropout)

    def dsgnet(self, num_relations: int) -> DsgConfig:
        s = self.switch
        return DsgConfig(d_e=self.d_e, gcn_layers=self.gcn_layers, rel_heads=self.rel_heads, d_r=self.d_r,
                         num_relations=num_relations, fusion_hidden=self.fusion_hidden,
                         use_pgcn=s.use_pgcn, use_relational=s.use_relational)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
