"""key=value config files and per-run manifests.

Configs carry hyperparameters (flags are reserved for paths and seeds); the
short aliases match the usual tuning-table names, and each config kind has its
own alias map because the same letter means different things per block.

Every artifact-producing command writes a manifest.json into its run
directory: command, config snapshot, seeds, input hashes, output hashes and
wall-clock. Downstream commands verify their inputs against the producing
manifest before using them.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .artifacts import file_sha256
from .critiquing import BlenderConfig
from .errors import CheckpointError, ConfigError
from .model import TrainConfig
from .simulate import SimulationConfig

TRAIN_ALIASES = {"h": "latent_dim", "lambda": "recon_weight",
                 "beta": "kl_beta", "l2": "l2_penalty"}
BLENDER_ALIASES = {"h": "margin", "l2": "l2_penalty"}
SIM_ALIASES: dict[str, str] = {}


def read_config(path) -> dict[str, str]:
    """Parse key=value lines; # starts a comment, blank lines are skipped."""
    raw: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{ln}: empty key or value")
        if key in raw:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _coerce(value: str, annotation: str, key: str):
    ann = annotation.replace(" ", "")
    if "bool" in ann:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if "int" in ann:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if "float" in ann:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}")
    return value


def config_from_mapping(cls, raw: dict[str, str], aliases: dict[str, str]):
    """Instantiate a config dataclass from string values, alias-aware."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = aliases.get(key, key)
        if name not in fields:
            valid = sorted(set(fields) | set(aliases))
            raise ConfigError(f"unknown config key {key!r}; valid keys: "
                              f"{', '.join(valid)}")
        kwargs[name] = _coerce(value, str(fields[name].type), name)
    return cls(**kwargs)


def train_config_from_file(path, seed: int | None = None) -> TrainConfig:
    raw = read_config(path)
    if seed is not None:
        raw["seed"] = str(seed)
    return config_from_mapping(TrainConfig, raw, TRAIN_ALIASES)


def blender_config_from_file(path, seed: int | None = None) -> BlenderConfig:
    raw = read_config(path)
    if seed is not None:
        raw["seed"] = str(seed)
    return config_from_mapping(BlenderConfig, raw, BLENDER_ALIASES)


def sim_config_from_file(path, seed: int | None = None) -> SimulationConfig:
    raw = read_config(path)
    if seed is not None:
        raw["seed"] = str(seed)
    return config_from_mapping(SimulationConfig, raw, SIM_ALIASES)


# ---------------------------------------------------------------------------
# run manifests

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    created_at: str = ""


def hash_entry(path) -> dict:
    return {"path": Path(path).name, "sha256": file_sha256(path)}


def write_manifest(run_dir, manifest: RunManifest) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest.created_at = manifest.created_at or time.strftime(
        "%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    target = run_dir / MANIFEST_NAME
    with open(target, "w") as fh:
        json.dump(dataclasses.asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return target


def verify_artifact(path) -> str:
    """Check an input against the manifest that produced it, if present.

    Returns "verified" when a sibling manifest lists the file with a matching
    hash, "unmanaged" when no manifest covers it. A listed file whose hash
    changed raises CheckpointError: the manifest chain is broken."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"input artifact {p} does not exist")
    manifest_path = p.parent / MANIFEST_NAME
    if not manifest_path.exists():
        return "unmanaged"
    try:
        recorded = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest {manifest_path}: {exc}")
    for entry in recorded.get("outputs", {}).values():
        if entry.get("path") == p.name:
            actual = file_sha256(p)
            if actual != entry.get("sha256"):
                raise CheckpointError(
                    f"{p} does not match its manifest: expected sha256 "
                    f"{entry.get('sha256')}, found {actual}; the artifact "
                    f"was modified after {manifest_path} was written")
            return "verified"
    return "unmanaged"
