"""Flat `key = value` run configuration with sectioned key names.

Lines are `section.key = value`; `#` starts a comment. Parse errors cite
line numbers. The effective configuration can be echoed back to a file that,
re-fed, reproduces the run.
"""

from __future__ import annotations

from pathlib import Path

from .encoder import EncoderConfig
from .training import TrainConfig
from .worldgen import SceneConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "data.scenes": (int, 4),
    "data.seed": (int, 0),
    "scene.extent_min": (float, 4.2),
    "scene.extent_max": (float, 5.2),
    "scene.rooms_min": (int, 1),
    "scene.rooms_max": (int, 2),
    "scene.objects_min": (int, 12),
    "scene.objects_max": (int, 16),
    "scene.voxel_size": (float, 0.05),
    "grid.resolution": (float, 0.02),
    "grid.margin": (float, 0.5),
    "grid.h_min": (float, 0.05),
    "grid.h_max": (float, 2.0),
    "render.image_size": (int, 64),
    "render.hfov_deg": (float, 90.0),
    "render.noise_sigma": (float, 0.05),
    "encoder.block_kind": (str, "attention"),
    "encoder.modality": (str, "rgb"),
    "encoder.stage_channels": (_ints, (8, 16, 24, 32)),
    "encoder.reduction": (_ints, (8, 4, 2, 1)),
    "encoder.blocks_per_stage": (int, 1),
    "encoder.fused_channels": (int, 16),
    "encoder.mlp_ratio": (int, 2),
    "memory.variant": (str, "bigru_convfusion"),
    "memory.channels": (int, 16),
    "memory.tie_directions": (_bool, False),
    "decoder.hidden": (int, 16),
    "train.pipeline": (str, "one_stage"),
    "train.lr": (float, 6e-5),
    "train.weight_decay": (float, 0.01),
    "train.epochs": (int, 1),
    "train.n_points": (int, 20),
    "train.trajectories_per_scene": (int, 1),
    "train.schedule": (str, "poly"),
    "train.schedule_power": (float, 0.9),
    "train.frozen_encoder": (_bool, False),
    "eval.tolerance": (int, 2),
    "eval.observed_only": (_bool, True),
}


def default_values() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse overriding keys onto the defaults; errors cite line numbers."""
    values = default_values()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def format_config(values: dict) -> str:
    lines = []
    for key in SCHEMA:
        val = values[key]
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# typed views

def scene_config(values: dict) -> SceneConfig:
    return SceneConfig(
        extent_range=(values["scene.extent_min"], values["scene.extent_max"]),
        room_range=(values["scene.rooms_min"], values["scene.rooms_max"]),
        object_range=(values["scene.objects_min"], values["scene.objects_max"]),
        voxel_size=values["scene.voxel_size"],
    )


def encoder_config(values: dict) -> EncoderConfig:
    return EncoderConfig(
        stage_channels=tuple(values["encoder.stage_channels"]),
        blocks_per_stage=values["encoder.blocks_per_stage"],
        reduction=tuple(values["encoder.reduction"]),
        block_kind=values["encoder.block_kind"],
        modality=values["encoder.modality"],
        fused_channels=values["encoder.fused_channels"],
        mlp_ratio=values["encoder.mlp_ratio"],
    )


def train_config(values: dict) -> TrainConfig:
    return TrainConfig(
        lr=values["train.lr"],
        weight_decay=values["train.weight_decay"],
        epochs=values["train.epochs"],
        n_points=values["train.n_points"],
        pipeline=values["train.pipeline"],
        memory_variant=values["memory.variant"],
        memory_channels=values["memory.channels"],
        decoder_hidden=values["decoder.hidden"],
        tie_directions=values["memory.tie_directions"],
        encoder=encoder_config(values),
        schedule=values["train.schedule"],
        schedule_power=values["train.schedule_power"],
        frozen_encoder=values["train.frozen_encoder"],
        model_seed=values["seed"],
        data_seed=values["data.seed"],
        image_size=values["render.image_size"],
        hfov_deg=values["render.hfov_deg"],
        noise_sigma=values["render.noise_sigma"],
        resolution=values["grid.resolution"],
        margin=values["grid.margin"],
        h_min=values["grid.h_min"],
        h_max=values["grid.h_max"],
        trajectories_per_scene=values["train.trajectories_per_scene"],
    )
