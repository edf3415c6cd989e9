"""Flat key=value experiment configs and JSON run manifests.

A config file is lines of `key = value` with `#` comments. Every key has
a typed schema entry with an explicit default; parsing resolves the full
schema so the serialized manifest always echoes every default. Unknown
keys fail with a nearest-valid-key suggestion.
"""

from __future__ import annotations

import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

ARTIFACT_VERSION = "1.0.0"

EXPERIMENT_KINDS = ("sample", "invert", "layers", "jacobian-probe",
                    "direction-compare", "train-denoiser", "acceptance")
DENOISER_KINDS = ("mlp-fixture", "correlated-gaussian", "gmm-two-mode-1d",
                  "gmm-grid")
OPERATOR_KINDS = ("identity", "mask-center", "mask-freeform", "downsample")
GUIDANCE_KINDS = ("newton-fd", "newton-exact", "backprop")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConfigKey:
    name: str
    type: str          # "int" | "float" | "str" | "opt-int" | "opt-float"
    default: object
    choices: tuple = ()


_KEYS = [
    ConfigKey("experiment", "str", "sample", EXPERIMENT_KINDS),
    ConfigKey("seed", "int", 0),
    ConfigKey("out", "str", "out"),
    # schedule
    ConfigKey("T", "int", 1000),
    ConfigKey("beta_min", "float", 1e-4),
    ConfigKey("beta_max", "float", 0.02),
    ConfigKey("eta", "float", 1.0),
    # denoiser / prior
    ConfigKey("denoiser", "str", "correlated-gaussian", DENOISER_KINDS),
    ConfigKey("fixture", "str", ""),
    # measurement
    ConfigKey("operator", "str", "identity", OPERATOR_KINDS),
    ConfigKey("sigma_y", "float", 0.05),
    ConfigKey("patch", "int", 6),
    ConfigKey("factor", "int", 2),
    ConfigKey("coverage_min", "float", 0.10),
    ConfigKey("coverage_max", "float", 0.20),
    ConfigKey("image", "str", ""),
    # sampler
    ConfigKey("steps", "int", 50),
    ConfigKey("inner_iters", "int", 3),
    ConfigKey("lambda", "float", 1.0),
    ConfigKey("guidance", "str", "newton-fd", GUIDANCE_KINDS),
    ConfigKey("delta", "opt-float", None),
    ConfigKey("restarts", "int", 0),
    ConfigKey("restart_t", "opt-int", None),
    ConfigKey("rho", "float", 0.0),
    ConfigKey("n_seeds", "int", 1),
    # layers
    ConfigKey("layer_iterations", "int", 10),
    ConfigKey("samples_per_layer", "int", 5),
    ConfigKey("t_probe", "opt-int", None),
    ConfigKey("perturb_sigma", "float", 0.3),
    ConfigKey("mini_steps", "int", 4),
    # probes
    ConfigKey("probe_ts", "str", "100,400,800"),
    ConfigKey("n_pairs", "int", 100),
    ConfigKey("n_updates", "int", 5),
    ConfigKey("compare_t", "int", 800),
    # training
    ConfigKey("hidden", "str", "256,256"),
    ConfigKey("train_steps", "int", 20000),
    ConfigKey("batch_size", "int", 128),
    ConfigKey("learning_rate", "float", 1e-3),
]
SCHEMA = {k.name: k for k in _KEYS}


@dataclass
class RunConfig:
    values: dict
    explicit: frozenset = frozenset()  # keys set by the file or overrides

    def __getitem__(self, key: str):
        return self.values[key]

    def int_list(self, key: str) -> list[int]:
        text = str(self.values[key]).strip()
        if not text:
            return []
        try:
            return [int(p) for p in text.split(",")]
        except ValueError:
            raise ConfigError(f"key '{key}' must be comma-separated integers, "
                              f"got {text!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)


def _coerce(key: ConfigKey, raw: str):
    raw = raw.strip()
    if key.type.startswith("opt-") and raw.lower() in ("none", ""):
        return None
    base = key.type.removeprefix("opt-")
    try:
        if base == "int":
            value = int(raw)
        elif base == "float":
            value = float(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"key '{key.name}' expects {base}, got {raw!r}") from None
    if key.choices and value not in key.choices:
        raise ConfigError(f"key '{key.name}' must be one of {', '.join(key.choices)}; "
                          f"got {value!r}")
    return value


def _unknown_key_error(name: str) -> ConfigError:
    close = difflib.get_close_matches(name, SCHEMA, n=1)
    hint = f"; nearest valid key: '{close[0]}'" if close else ""
    return ConfigError(f"unknown config key '{name}'{hint}. "
                       f"Valid keys: {', '.join(sorted(SCHEMA))}")


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse key=value lines into a fully resolved RunConfig.

    Every schema key appears in the result; unset keys get their defaults.
    overrides (e.g. from CLI flags) are applied last and must also be
    valid schema keys.
    """
    values = {k.name: k.default for k in _KEYS}
    explicit = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        name, raw = (part.strip() for part in stripped.split("=", 1))
        if name not in SCHEMA:
            raise _unknown_key_error(name)
        values[name] = _coerce(SCHEMA[name], raw)
        explicit.add(name)
    for name, value in (overrides or {}).items():
        if name not in SCHEMA:
            raise _unknown_key_error(name)
        values[name] = value if not isinstance(value, str) else _coerce(SCHEMA[name], value)
        explicit.add(name)
    return RunConfig(values=values, explicit=frozenset(explicit))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


def config_from_manifest(manifest: dict) -> RunConfig:
    """Rebuild the resolved config recorded in a manifest."""
    values = dict(manifest["config"])
    unknown = set(values) - set(SCHEMA)
    if unknown:
        raise _unknown_key_error(sorted(unknown)[0])
    for k in _KEYS:
        values.setdefault(k.name, k.default)
    return RunConfig(values=values, explicit=frozenset(manifest["config"]))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, cfg: RunConfig, inputs=(), outputs=()):
    """Record the resolved config plus input/output hashes for replay."""
    out_dir = Path(out_dir)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config": cfg.values,
        "seed": cfg["seed"],
        "input_hashes": {str(p): sha256_file(p) for p in inputs},
        "output_hashes": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
