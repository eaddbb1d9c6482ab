"""Experiment configuration: schema-validated YAML with CLI overrides.

A RunConfig fully determines an experiment: instance geometry, algorithm,
training hyperparameters, schedules, seeds, and the data source. Unknown
keys are rejected so typos fail loudly; every referenced file must exist
at load time.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import yaml

from .hexgrid import build_hex_grid
from .sim import EpisodeConfig
from .streams import RequestStream, ingest_trips, synth_stream
from .training import ALGORITHMS, ScheduleSpec, TrainingConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_SCHEMA: dict = {
    "name": str,
    "algorithm": str,
    "seeds": list,
    "output_root": str,
    "instance": {
        "zones": int,
        "scale": str,
        "vehicles": int,
        "placement_zones": list,
    },
    "env": {
        "revenue_per_km": float,
        "cost_per_km": float,
        "max_wait_steps": int,
        "episode_length": int,
    },
    "training": {
        "total_steps": int,
        "alpha": float,
        "gamma": float,
        "actor_lr": float,
        "critic_lr": float,
        "batch_size": int,
        "buffer_capacity": int,
        "warmup_steps": int,
        "tau": float,
        "lgra_global_share": float,
        "validate_every": int,
    },
    "schedules": {
        "beta": {"kind": str, "param": float},
        "kappa": {"kind": str, "param": float},
    },
    "data": {
        "source": str,
        "rate_per_step": (int, float, list),
        "dest_weights": list,
        "train_streams": int,
        "val_streams": int,
        "test_streams": int,
        "stream_seed": int,
        "trips_file": str,
        "hour": int,
        "subsample_every": int,
        "train_dates": list,
        "val_dates": list,
        "test_dates": list,
        "holidays": list,
        "anchor": list,
        "max_per_step_cap": int,
    },
}

_REQUIRED = ("name", "algorithm", "instance", "data")


def _check_keys(raw: dict, schema: dict, prefix: str = "") -> None:
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be a mapping")
            _check_keys(value, expected, prefix=f"{path}.")
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path} must be a number")
        elif not isinstance(value, expected):
            name = expected.__name__ if isinstance(expected, type) else "value"
            raise ConfigError(f"{path} must be of type {name}")


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `--set dotted.key=value` overrides; values are parsed as YAML."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return out


@dataclass
class RunConfig:
    name: str
    algorithm: str
    instance: dict
    data: dict
    env: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    output_root: str = "runs"

    @classmethod
    def from_raw(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        _check_keys(raw, _SCHEMA)
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"missing required config key: {key}")
        cfg = cls(**raw)
        cfg._validate(base_dir or Path.cwd())
        return cfg

    @classmethod
    def load(cls, path, overrides: list[str] | None = None) -> "RunConfig":
        path = Path(path)
        with path.open() as fh:
            raw = yaml.safe_load(fh)
        if overrides:
            raw = apply_overrides(raw, overrides)
        return cls.from_raw(raw, base_dir=path.parent)

    def _validate(self, base_dir: Path) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.instance.get("zones") not in (5, 11, 38):
            raise ConfigError("instance.zones must be one of 5, 11, 38")
        if self.instance.get("scale", "small") not in ("small", "large"):
            raise ConfigError("instance.scale must be 'small' or 'large'")
        if not isinstance(self.instance.get("vehicles"), int) or self.instance["vehicles"] < 1:
            raise ConfigError("instance.vehicles must be a positive integer")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        source = self.data.get("source")
        if source == "synthetic":
            if "rate_per_step" not in self.data:
                raise ConfigError("synthetic data needs data.rate_per_step")
        elif source == "historical":
            trips = self.data.get("trips_file")
            if not trips:
                raise ConfigError("historical data needs data.trips_file")
            self._trips_path = (base_dir / trips).resolve()
            if not self._trips_path.exists():
                raise ConfigError(f"trips file does not exist: {self._trips_path}")
            if "hour" not in self.data:
                raise ConfigError("historical data needs data.hour")
            for key in ("train_dates", "val_dates", "test_dates"):
                if not self.data.get(key):
                    raise ConfigError(f"historical data needs data.{key}")
        else:
            raise ConfigError("data.source must be 'synthetic' or 'historical'")
        for key in ("beta", "kappa"):
            spec = self.schedules.get(key)
            if spec is not None:
                ScheduleSpec(spec.get("kind", "linear"), spec.get("param"))

    # -- builders ---------------------------------------------------------

    def build_env(self) -> EpisodeConfig:
        grid = build_hex_grid(self.instance["zones"], self.instance.get("scale", "small"))
        placement = self.instance.get("placement_zones")
        return EpisodeConfig(
            grid=grid,
            n_vehicles=self.instance["vehicles"],
            placement_zones=tuple(placement) if placement else None,
            **{k: v for k, v in self.env.items()},
        )

    def build_training(self) -> TrainingConfig:
        kwargs = dict(self.training)
        sched_kwargs = {}
        for key in ("beta", "kappa"):
            spec = self.schedules.get(key)
            if spec is not None:
                sched_kwargs[f"{key}_schedule"] = ScheduleSpec(
                    spec.get("kind", "linear"), spec.get("param")
                )
        return TrainingConfig(algorithm=self.algorithm, **kwargs, **sched_kwargs)

    def _synth(self, grid, seed: int, label: str) -> RequestStream:
        rate = self.data["rate_per_step"]
        if isinstance(rate, list):
            rate = np.asarray(rate, dtype=float)
        dest = self.data.get("dest_weights")
        dest = np.asarray(dest, dtype=float) if dest is not None else None
        episode_length = self.env.get("episode_length", 60)
        return synth_stream(
            grid, rate, seed=seed, episode_length=episode_length,
            label=label, dest_weights=dest,
        )

    def build_streams(self, kind: str) -> list[RequestStream]:
        """Streams for `kind` in {train, val, test}; deterministic per config."""
        if kind not in ("train", "val", "test"):
            raise ConfigError(f"unknown stream kind {kind!r}")
        grid = build_hex_grid(self.instance["zones"], self.instance.get("scale", "small"))
        if self.data["source"] == "synthetic":
            counts = {
                "train": self.data.get("train_streams", 20),
                "val": self.data.get("val_streams", 5),
                "test": self.data.get("test_streams", 10),
            }
            base = {"train": 0, "val": 500_000, "test": 900_000}[kind]
            seed0 = self.data.get("stream_seed", 7)
            return [
                self._synth(grid, seed=seed0 + base + i, label=f"{kind}-{i:03d}")
                for i in range(counts[kind])
            ]
        hour = self.data["hour"]
        holidays = tuple(_as_date(d) for d in self.data.get("holidays", []))
        anchor = self.data.get("anchor")
        kwargs = {}
        if anchor:
            kwargs["anchor"] = (float(anchor[0]), float(anchor[1]))
        return [
            ingest_trips(
                self._trips_path,
                grid,
                window=(_as_date(d), hour),
                subsample_every=self.data.get("subsample_every", 1),
                holidays=holidays,
                **kwargs,
            )
            for d in self.data[f"{kind}_dates"]
        ]

    def resolve_output_root(self) -> Path:
        return Path(os.environ.get("AMODLAB_OUT", self.output_root))

    def run_dir(self) -> Path:
        return self.resolve_output_root() / self.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "algorithm": self.algorithm,
            "instance": self.instance,
            "data": self.data,
            "env": self.env,
            "training": self.training,
            "schedules": self.schedules,
            "seeds": self.seeds,
            "output_root": self.output_root,
        }

    def save(self, path) -> None:
        with Path(path).open("w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))
