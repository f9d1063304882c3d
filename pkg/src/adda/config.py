"""Run configuration: JSON in, validated dataclasses out.

Defaults are the training settings used throughout: batch 200, Adam at
1e-3 for 80 pretraining epochs and 1e-4 for 150 adaptation epochs.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticShiftSpec
from .errors import ValidationError


@dataclass(frozen=True)
class StageConfig:
    lr: float
    epochs: int


@dataclass(frozen=True)
class SampleCaps:
    """Optional deterministic subsampling limits (None = use everything)."""

    train: int | None = None
    eval: int | None = None
    tsne: int = 1000


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    batch_size: int = 200
    pretrain: StageConfig = StageConfig(lr=1e-3, epochs=80)
    adapt: StageConfig = StageConfig(lr=1e-4, epochs=150)
    data_dir: str | None = None  # falls back to $ADDA_DATA_DIR, then "."
    output_dir: str = "out"
    caps: SampleCaps = field(default_factory=SampleCaps)
    shift: SyntheticShiftSpec | None = None

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "batch_size": self.batch_size,
            "pretrain": {"lr": self.pretrain.lr, "epochs": self.pretrain.epochs},
            "adapt": {"lr": self.adapt.lr, "epochs": self.adapt.epochs},
            "data_dir": self.data_dir,
            "output_dir": self.output_dir,
            "caps": {"train": self.caps.train, "eval": self.caps.eval, "tsne": self.caps.tsne},
        }
        if self.shift is not None:
            d["shift"] = {
                "kind": self.shift.kind,
                "sigma": self.shift.sigma,
                "dx": self.shift.dx,
                "dy": self.shift.dy,
                "seed": self.shift.seed,
            }
        return d

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ValidationError(f"config{section}: unknown keys {sorted(unknown)}")


def _int_field(section: str, d: dict, key: str, default, minimum=0):
    v = d.get(key, default)
    if v is None:
        return None
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ValidationError(f"config{section}.{key}: expected integer >= {minimum}, got {v!r}")
    return v


def _stage(section: str, d: dict, default: StageConfig) -> StageConfig:
    _check_keys(section, d, {"lr", "epochs"})
    lr = d.get("lr", default.lr)
    if not isinstance(lr, (int, float)) or isinstance(lr, bool) or lr <= 0:
        raise ValidationError(f"config{section}.lr: expected positive number, got {lr!r}")
    epochs = _int_field(section, d, "epochs", default.epochs)
    return StageConfig(lr=float(lr), epochs=epochs)


def config_from_dict(d: dict) -> RunConfig:
    _check_keys(
        "",
        d,
        {"seed", "batch_size", "pretrain", "adapt", "data_dir", "output_dir", "caps", "shift"},
    )
    base = RunConfig()
    caps_d = d.get("caps", {})
    _check_keys(".caps", caps_d, {"train", "eval", "tsne"})
    shift = None
    if d.get("shift") is not None:
        sd = d["shift"]
        _check_keys(".shift", sd, {"kind", "sigma", "dx", "dy", "seed"})
        if sd.get("kind") not in ("invert", "gaussian_noise", "translate"):
            raise ValidationError(f"config.shift.kind: got {sd.get('kind')!r}")
        shift = SyntheticShiftSpec(
            kind=sd["kind"],
            sigma=float(sd.get("sigma", 0.0)),
            dx=int(sd.get("dx", 0)),
            dy=int(sd.get("dy", 0)),
            seed=int(sd.get("seed", 0)),
        )
    for key in ("data_dir", "output_dir"):
        if key in d and not isinstance(d[key], str):
            raise ValidationError(f"config.{key}: expected string")
    batch = _int_field("", d, "batch_size", base.batch_size, minimum=1)
    return RunConfig(
        seed=_int_field("", d, "seed", base.seed),
        batch_size=batch,
        pretrain=_stage(".pretrain", d.get("pretrain", {}), base.pretrain),
        adapt=_stage(".adapt", d.get("adapt", {}), base.adapt),
        data_dir=d.get("data_dir", base.data_dir),
        output_dir=d.get("output_dir", base.output_dir),
        caps=SampleCaps(
            train=_int_field(".caps", caps_d, "train", None, minimum=1),
            eval=_int_field(".caps", caps_d, "eval", None, minimum=1),
            tsne=_int_field(".caps", caps_d, "tsne", 1000, minimum=10),
        ),
        shift=shift,
    )


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"config {path}: top level must be an object")
    return config_from_dict(raw)
