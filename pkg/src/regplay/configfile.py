"""Flat key=value run configuration.

Config files are line oriented: one `section.key = value` per line, `#`
comments, blank lines ignored.  Each subcommand has its own schema with
defaults, so a config file only lists what it changes.  `--set` flags
apply last.  Everything resolves to a flat string dict first (that is
what lands in the run manifest), then typed builders turn sections into
the dataclasses the library consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from regplay.freeplay import FreePlayConfig, IntrinsicMode, IntrinsicSpec, RecreationConfig
from regplay.gridworld import GridConfig
from regplay.models import EnsembleConfig
from regplay.planner import CostMode, PlannerConfig
from regplay.regularity import MapVariant, SymbolMapSpec


class ConfigError(Exception):
    """Bad configuration input; the message names the offending key or line."""


@dataclass(frozen=True)
class FieldSpec:
    kind: str  # int | float | bool | str | ints | pairs
    default: str
    choices: tuple[str, ...] = ()


def _I(v: int) -> FieldSpec:
    return FieldSpec("int", str(v))


def _F(v: float) -> FieldSpec:
    return FieldSpec("float", repr(v))


def _B(v: bool) -> FieldSpec:
    return FieldSpec("bool", "true" if v else "false")


def _C(v: str, choices: tuple[str, ...]) -> FieldSpec:
    return FieldSpec("str", v, choices)


def _INTS(v: str) -> FieldSpec:
    return FieldSpec("ints", v)


def _PAIRS(v: str) -> FieldSpec:
    return FieldSpec("pairs", v)


_VARIANTS = tuple(m.value for m in MapVariant)
_COST_MODES = tuple(m.value for m in CostMode)
_INTRINSIC_MODES = tuple(m.value for m in IntrinsicMode)


def _grid_schema(width: int, height: int, entities: int, persistency: int) -> dict[str, FieldSpec]:
    return {
        "grid.width": _I(width),
        "grid.height": _I(height),
        "grid.entities": _I(entities),
        "grid.persistency": _I(persistency),
        "grid.colors": _I(0),
        "grid.frozen": _INTS(""),
        "grid.allow_diagonal": _B(True),
    }


def _planner_schema(samples: int, horizon: int, cost_mode: str = "best") -> dict[str, FieldSpec]:
    return {
        "planner.samples": _I(samples),
        "planner.horizon": _I(horizon),
        "planner.elites": _I(10),
        "planner.iterations": _I(3),
        "planner.noise_beta": _F(3.5),
        "planner.sigma_init": _F(0.8),
        "planner.momentum": _F(0.1),
        "planner.elite_fraction": _F(0.3),
        "planner.use_mean_actions": _B(True),
        "planner.shift_elites": _B(True),
        "planner.keep_elites": _B(True),
        "planner.cost_mode": _C(cost_mode, _COST_MODES),
    }


def _map_schema() -> dict[str, FieldSpec]:
    return {
        "map.variant": _C("abs_relative_position", _VARIANTS),
        "map.bin_size": _F(1.0),
        "map.subspace": _INTS("0,1"),
        "map.include_color": _B(False),
        "map.axis_tagged": _B(True),
    }


def _ensemble_schema() -> dict[str, FieldSpec]:
    return {
        "ensemble.members": _I(3),
        "ensemble.hidden": _INTS("64"),
        "ensemble.learning_rate": _F(0.001),
        "ensemble.batch_size": _I(256),
        "ensemble.epochs": _I(20),
        "ensemble.prior_scale": _F(0.7),
        "ensemble.prior_hidden": _INTS("16"),
    }


SCHEMAS: dict[str, dict[str, FieldSpec]] = {
    "pattern": {
        **_grid_schema(25, 25, 16, 10),
        **_planner_schema(64, 30),
        **_map_schema(),
        "run.steps": _I(200),
        "run.frame_every": _I(10),
    },
    # free play sums rewards over the horizon: with "best" aggregation a
    # plan that wiggles an entity out of a pattern and back ties with one
    # that holds it, so a pure-regularity agent never settles
    "freeplay": {
        **_grid_schema(15, 15, 8, 5),
        **_planner_schema(32, 10, cost_mode="sum"),
        **_map_schema(),
        **_ensemble_schema(),
        "play.iterations": _I(30),
        "play.rollouts": _I(10),
        "play.steps": _I(50),
        "play.checkpoint_every": _I(10),
        "play.ground_truth": _B(False),
        "intrinsic.mode": _C("combined", _INTRINSIC_MODES),
        "intrinsic.weight": _F(0.1),
    },
    "recreate": {
        **_grid_schema(11, 11, 6, 5),
        **_planner_schema(64, 12),
        **_map_schema(),
        "run.template": _PAIRS("2,5;4,5;6,5"),
        "run.rollouts": _I(15),
        "run.steps": _I(120),
        "run.spawn_gap": _I(2),
    },
    "oracle": {
        "grid.width": _I(4),
        "grid.height": _I(4),
        "grid.entities": _I(3),
        **_map_schema(),
    },
    "analyze": {},
}


def parse_assignment(raw: str, where: str) -> tuple[str, str]:
    if "=" not in raw:
        raise ConfigError(f"{where}: expected key=value, got {raw!r}")
    key, _, value = raw.partition("=")
    key = key.strip()
    value = value.strip()
    if not key:
        raise ConfigError(f"{where}: empty key in {raw!r}")
    return key, value


def parse_kv_text(text: str, source: str = "<config>") -> list[tuple[str, str, str]]:
    """Returns (where, key, value) triples in file order."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        key, value = parse_assignment(stripped, where)
        out.append((where, key, value))
    return out


def resolve_config(
    subcommand: str,
    file_text: str | None = None,
    source: str = "<config>",
    overrides: tuple[str, ...] = (),
) -> dict[str, str]:
    """Flat string dict: defaults, then file entries, then --set overrides."""
    try:
        schema = SCHEMAS[subcommand]
    except KeyError:
        raise ConfigError(f"unknown subcommand {subcommand!r}") from None
    flat = {key: spec.default for key, spec in schema.items()}
    entries = parse_kv_text(file_text, source) if file_text is not None else []
    entries += [(f"--set #{i + 1}", *parse_assignment(raw, f"--set #{i + 1}")) for i, raw in enumerate(overrides)]
    for where, key, value in entries:
        if key not in schema:
            raise ConfigError(
                f"{where}: unknown key {key!r} for subcommand {subcommand!r}"
            )
        spec = schema[key]
        _coerce(spec, key, value, where)  # fail fast with location info
        flat[key] = value
    return flat


def _coerce(spec: FieldSpec, key: str, value: str, where: str | None = None):
    ctx = f"{where}: " if where else ""
    try:
        if spec.kind == "int":
            return int(value)
        if spec.kind == "float":
            return float(value)
        if spec.kind == "bool":
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if spec.kind == "ints":
            if not value.strip():
                return ()
            return tuple(int(part) for part in value.split(","))
        if spec.kind == "pairs":
            if not value.strip():
                return ()
            pairs = []
            for chunk in value.split(";"):
                parts = chunk.split(",")
                if len(parts) != 2:
                    raise ValueError(f"expected col,row pairs separated by ';', got {chunk!r}")
                pairs.append((int(parts[0]), int(parts[1])))
            return tuple(pairs)
        if spec.choices:
            if value not in spec.choices:
                raise ValueError(
                    f"must be one of {', '.join(spec.choices)}; got {value!r}"
                )
        return value
    except ValueError as e:
        raise ConfigError(f"{ctx}{key}: {e}") from None


def _typed(flat: dict[str, str], schema: dict[str, FieldSpec], key: str):
    return _coerce(schema[key], key, flat[key])


def grid_from(flat: dict[str, str], subcommand: str) -> GridConfig:
    schema = SCHEMAS[subcommand]
    try:
        return GridConfig(
            width=_typed(flat, schema, "grid.width"),
            height=_typed(flat, schema, "grid.height"),
            num_entities=_typed(flat, schema, "grid.entities"),
            persistency=_typed(flat, schema, "grid.persistency"),
            num_colors=_typed(flat, schema, "grid.colors"),
            frozen=_typed(flat, schema, "grid.frozen"),
            allow_diagonal=_typed(flat, schema, "grid.allow_diagonal"),
        )
    except ValueError as e:
        raise ConfigError(f"grid: {e}") from None


def map_from(flat: dict[str, str], subcommand: str) -> SymbolMapSpec:
    schema = SCHEMAS[subcommand]
    try:
        return SymbolMapSpec(
            variant=MapVariant(flat["map.variant"]),
            bin_size=_typed(flat, schema, "map.bin_size"),
            subspace=_typed(flat, schema, "map.subspace"),
            include_color=_typed(flat, schema, "map.include_color"),
            axis_tagged=_typed(flat, schema, "map.axis_tagged"),
        )
    except ValueError as e:
        raise ConfigError(f"map: {e}") from None


def planner_from(flat: dict[str, str], subcommand: str) -> PlannerConfig:
    schema = SCHEMAS[subcommand]
    try:
        return PlannerConfig(
            samples=_typed(flat, schema, "planner.samples"),
            horizon=_typed(flat, schema, "planner.horizon"),
            elites=_typed(flat, schema, "planner.elites"),
            cem_iterations=_typed(flat, schema, "planner.iterations"),
            noise_beta=_typed(flat, schema, "planner.noise_beta"),
            sigma_init=_typed(flat, schema, "planner.sigma_init"),
            momentum=_typed(flat, schema, "planner.momentum"),
            elite_fraction=_typed(flat, schema, "planner.elite_fraction"),
            use_mean_actions=_typed(flat, schema, "planner.use_mean_actions"),
            shift_elites=_typed(flat, schema, "planner.shift_elites"),
            keep_elites=_typed(flat, schema, "planner.keep_elites"),
            cost_mode=CostMode(flat["planner.cost_mode"]),
        )
    except ValueError as e:
        raise ConfigError(f"planner: {e}") from None


def ensemble_from(flat: dict[str, str], subcommand: str, seed: int = 0) -> EnsembleConfig:
    schema = SCHEMAS[subcommand]
    try:
        return EnsembleConfig(
            members=_typed(flat, schema, "ensemble.members"),
            hidden=_typed(flat, schema, "ensemble.hidden"),
            learning_rate=_typed(flat, schema, "ensemble.learning_rate"),
            batch_size=_typed(flat, schema, "ensemble.batch_size"),
            epochs=_typed(flat, schema, "ensemble.epochs"),
            prior_scale=_typed(flat, schema, "ensemble.prior_scale"),
            prior_hidden=_typed(flat, schema, "ensemble.prior_hidden"),
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError(f"ensemble: {e}") from None


def freeplay_from(flat: dict[str, str], ensemble_seed: int) -> FreePlayConfig:
    schema = SCHEMAS["freeplay"]
    try:
        intrinsic = IntrinsicSpec(
            mode=IntrinsicMode(flat["intrinsic.mode"]),
            map_spec=map_from(flat, "freeplay"),
            disagreement_weight=_typed(flat, schema, "intrinsic.weight"),
        )
        return FreePlayConfig(
            grid=grid_from(flat, "freeplay"),
            planner=planner_from(flat, "freeplay"),
            ensemble=ensemble_from(flat, "freeplay", seed=ensemble_seed),
            intrinsic=intrinsic,
            iterations=_typed(flat, schema, "play.iterations"),
            rollouts_per_iter=_typed(flat, schema, "play.rollouts"),
            episode_length=_typed(flat, schema, "play.steps"),
            checkpoint_every=_typed(flat, schema, "play.checkpoint_every"),
            plan_with_ground_truth=_typed(flat, schema, "play.ground_truth"),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def recreation_from(flat: dict[str, str]) -> tuple[RecreationConfig, list[tuple[int, int]]]:
    schema = SCHEMAS["recreate"]
    template = [tuple(p) for p in _typed(flat, schema, "run.template")]
    try:
        cfg = RecreationConfig(
            grid=grid_from(flat, "recreate"),
            planner=planner_from(flat, "recreate"),
            map_spec=map_from(flat, "recreate"),
            rollouts=_typed(flat, schema, "run.rollouts"),
            episode_length=_typed(flat, schema, "run.steps"),
            spawn_gap=_typed(flat, schema, "run.spawn_gap"),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg, template


def describe(flat: dict[str, str]) -> str:
    return "\n".join(f"{key}={flat[key]}" for key in sorted(flat))
