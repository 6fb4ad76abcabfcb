"""Model hyperparameters and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path

from .embedding import PatchGrid, PosMode
from .errors import ConfigurationError


class Scheme(str, Enum):
    SPACE = "Space"
    JOINT = "JointST"
    DIVIDED = "DividedST"
    LOCAL_GLOBAL = "SparseLocalGlobal"
    AXIAL = "Axial"


class StageOrder(str, Enum):
    TIME_SPACE = "time-space"
    SPACE_TIME = "space-time"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class ModelConfig:
    H: int = 224
    W: int = 224
    F: int = 8
    P: int = 16
    D: int = 768
    L: int = 12
    A: int = 12
    mlp_ratio: int = 4
    num_classes: int = 400
    scheme: Scheme = Scheme.DIVIDED
    pos_mode: PosMode = PosMode.SPACE_TIME
    stage_order: StageOrder = StageOrder.TIME_SPACE
    temporal_fc: bool = True
    frame_rate_denominator: int = 32

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "pos_mode", PosMode(self.pos_mode))
        object.__setattr__(self, "stage_order", StageOrder(self.stage_order))
        self.validate()

    def validate(self) -> None:
        for name in ("H", "W", "F", "P", "D", "L", "A", "mlp_ratio", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.H % self.P or self.W % self.P:
            raise ConfigurationError(
                f"frame size H={self.H}, W={self.W} is not divisible by patch size P={self.P}")
        if self.D % self.A:
            raise ConfigurationError(f"embedding dim D={self.D} is not divisible by heads A={self.A}")

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.H // self.P, self.W // self.P, self.F)

    @property
    def head_dim(self) -> int:
        return self.D // self.A

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Enum):
                d[k] = v.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        base = data.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        start = preset(base) if base else cls()
        return replace(start, **data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# The Base presets keep the (N+1)-row spatial positional table of the image
# model they are initialised from; see README "Parameter counts".
PRESETS: dict[str, ModelConfig] = {
    "base": ModelConfig(pos_mode=PosMode.SPACE_ONLY),
    "hr": ModelConfig(H=448, W=448, F=16, pos_mode=PosMode.SPACE_ONLY),
    "long": ModelConfig(F=96, pos_mode=PosMode.SPACE_ONLY),
    "tiny": ModelConfig(H=32, W=32, F=4, P=8, D=64, L=2, A=4, num_classes=4),
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(source: str | Path) -> ModelConfig:
    """A preset name, a path to a JSON file, or an inline JSON object."""
    text = str(source)
    if text.lower() in PRESETS:
        return preset(text)
    if text.lstrip().startswith("{"):
        return ModelConfig.from_dict(json.loads(text))
    return ModelConfig.from_dict(json.loads(Path(source).read_text()))
