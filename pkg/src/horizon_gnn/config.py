"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
Every key has a default, so an empty file (or no file) is a valid config.
See README.md for the key reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dataset import MELT_RATES, HorizonSet
from .errors import DataError
from .synthetic import SyntheticConfig
from .train import TrainConfig

# ablation presets: growing nested horizon sets, and a sweep of the second horizon
NESTED_SETS = ((1,), (1, 15), (1, 15, 30), (1, 6, 15, 30), (1, 3, 6, 15, 30))
SECOND_HORIZONS = (2, 3, 4, 6, 8, 9, 12, 15, 18, 24, 36)
SECOND_HORIZON_SETS = tuple((1, h) for h in SECOND_HORIZONS)
PRESETS = {"nested": NESTED_SETS, "second-horizon": SECOND_HORIZON_SETS}


def parse_sets(text: str) -> tuple[tuple[int, ...], ...]:
    """``"1;1,15;1,6,15,30"`` -> ((1,), (1, 15), (1, 6, 15, 30)); preset names also accepted."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    return tuple(HorizonSet.parse(part).horizons for part in text.split(";") if part.strip())


def parse_melt_rates(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        out, v = [], lo
        while v <= hi + 1e-9:
            out.append(v)
            v += step
        return tuple(out)
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    data_dir: Path = Path("data")
    checkpoint_dir: Path = Path("checkpoints")
    report_dir: Path = Path("reports")
    seed: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    melt_rates: tuple[float, ...] = tuple(float(m) for m in MELT_RATES)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(horizons=HorizonSet([1, 15])))
    t0: int = 60
    t1: int = 240
    frozen_scan: bool = False
    ablation_sets: tuple[tuple[int, ...], ...] = NESTED_SETS
    timing_repeats: int = 1

    def validate(self):
        for hs in self.ablation_sets:
            if 1 not in hs:
                raise ValueError(f"ablation horizon set {hs} does not contain 1")
        if self.t1 <= self.t0 or self.t0 < 1:
            raise ValueError("evaluation window needs 1 <= t0 < t1")
        self.train.validate()
        self.synthetic.validate()


_SYN_KEYS = {f.name for f in fields(SyntheticConfig)} - {"extent_km", "melt_rate", "flat_thickness"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"horizons"}


def _coerce(value: str, current):
    if isinstance(current, bool):
        return _bool(value)
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value.strip()


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        raw[k] = v

    cfg = ExperimentConfig()
    syn, trn = {}, {}
    mesh_seed_set = physics_seed_set = False
    for k, v in raw.items():
        try:
            if k in ("data_dir", "checkpoint_dir", "report_dir"):
                setattr(cfg, k, Path(v))
            elif k == "seed":
                cfg.seed = int(v)
            elif k == "eval.t0":
                cfg.t0 = int(v)
            elif k == "eval.t1":
                cfg.t1 = int(v)
            elif k == "eval.frozen_scan":
                cfg.frozen_scan = _bool(v)
            elif k == "ablate.sets":
                cfg.ablation_sets = parse_sets(v)
            elif k == "ablate.timing_repeats":
                cfg.timing_repeats = int(v)
            elif k == "synthetic.melt_rates":
                cfg.melt_rates = parse_melt_rates(v)
            elif k == "synthetic.extent_km":
                syn["extent_km"] = tuple(float(x) for x in v.split(","))
            elif k.startswith("synthetic.") and k[10:] in _SYN_KEYS:
                name = k[10:]
                syn[name] = _coerce(v, getattr(cfg.synthetic, name))
                mesh_seed_set |= name == "mesh_seed"
                physics_seed_set |= name == "seed"
            elif k == "train.horizons":
                trn["horizons"] = HorizonSet.parse(v)
            elif k.startswith("train.") and k[6:] in _TRAIN_KEYS:
                trn[k[6:]] = _coerce(v, getattr(cfg.train, k[6:]))
            else:
                raise DataError(f"unknown config key {k!r}")
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad value for {k!r}: {exc}") from None

    if seed is not None:
        cfg.seed = seed
    if not mesh_seed_set:
        syn["mesh_seed"] = cfg.seed
    if not physics_seed_set:
        syn["seed"] = cfg.seed
    if "seed" not in trn or seed is not None:
        trn["seed"] = cfg.seed
    cfg.synthetic = replace(cfg.synthetic, **syn)
    cfg.train = replace(cfg.train, **trn)
    return cfg


def load_config(path=None, seed: int | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, seed)
