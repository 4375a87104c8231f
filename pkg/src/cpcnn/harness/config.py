"""Flat ``key=value`` configuration shared by the CLI subcommands.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Model keys: family, n, n_core, p_cc, p_cp, p_pp, stem_width, block_widths
(comma list) or base_width, num_classes, image_size, model_seed, ws_rewire,
graph_file.  Every ``TrainConfig`` field is a train key.  ``recipe=full``
applies the full-scale CIFAR-10 recipe before the remaining keys.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..graph_gen import CPGraphParams, Graph
from ..model import ModelConfig
from .train import TrainConfig, coerce, full_scale_recipe

_GRAPH_KEYS = {"n": int, "n_core": int, "p_cc": float, "p_cp": float, "p_pp": float}
_MODEL_KEYS = {
    "family": ("graph_family", str),
    "stem_width": ("stem_width", int),
    "num_classes": ("num_classes", int),
    "image_size": ("image_size", int),
    "model_seed": ("seed", int),
    "ws_rewire": ("ws_rewire", float),
}


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_kv_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_kv(p.read_text(), str(p))


def build_configs(kv: dict[str, str], model: ModelConfig | None = None,
                  train: TrainConfig | None = None) -> tuple[ModelConfig, TrainConfig]:
    model = model or ModelConfig()
    train = train or TrainConfig()
    kv = dict(kv)
    if kv.pop("recipe", None) == "full":
        m_over, t_over = full_scale_recipe()
        kv = {**{k: str(v) for k, v in {**m_over, **t_over}.items()}, **kv}

    gp = {f.name: getattr(model.graph_params, f.name) for f in fields(CPGraphParams)}
    gp_changed = False
    model_kwargs = {}
    train_kwargs = {}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    for key, value in kv.items():
        if key in _GRAPH_KEYS:
            gp["n_c" if key == "n_core" else key] = coerce(_GRAPH_KEYS[key].__name__, value, key)
            gp_changed = True
        elif key in _MODEL_KEYS:
            name, typ = _MODEL_KEYS[key]
            model_kwargs[name] = coerce(typ.__name__, value, key)
        elif key == "block_widths":
            model_kwargs["block_widths"] = tuple(int(w) for w in value.split(","))
        elif key == "base_width":
            b = int(value)
            model_kwargs["block_widths"] = (b, 2 * b, 4 * b, 8 * b)
        elif key == "graph_file":
            model_kwargs["graph"] = Graph.load(value)
        elif key in train_fields:
            train_kwargs[key] = coerce(train_fields[key], value, key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if gp_changed:
        model_kwargs["graph_params"] = CPGraphParams(**gp)
    return replace(model, **model_kwargs), replace(train, **train_kwargs)
