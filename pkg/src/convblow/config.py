"""Run configuration: TOML parsing, validation, serialisation.

A config is a TOML document. Keys may be written flat at the top level
(``model = "ks"``) or grouped in sections (``[equation]``, ``[grid]``,
``[controls]``, ``[diagnostics]``, ``[initial]``, ``[output]``, ``[sweep]``,
``[converge]``); both spellings land in the same field. Arrays are only used
for axis and exponent lists. See README.md for the full key table.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .diagnostics import ChWeight, DiagnosticsConfig, DiagnosticsError, PowerWeight, min_moment_order
from .grid_ops import Grid, ResolutionError, make_grid
from .models import EquationSpec, FluxForm, FSpec, GSpec, G_PROFILES, Model, SpecError
from .stepper import Scheme, StepControls

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Parse or validation failure; the message starts with the key path."""


# field name -> (section, key in document)
_LAYOUT = {
    "model": ("equation", "model"),
    "p": ("equation", "p"),
    "q": ("equation", "q"),
    "a": ("equation", "a"),
    "flux": ("equation", "flux"),
    "lam": ("equation", "lambda"),
    "f": ("equation", "f"),
    "f_coef": ("equation", "f_coef"),
    "g": ("equation", "g"),
    "g_scale": ("equation", "g_scale"),
    "g_file": ("equation", "g_file"),
    "n_cells": ("grid", "n_cells"),
    "scheme": ("controls", "scheme"),
    "dt_init": ("controls", "dt_init"),
    "dt_min": ("controls", "dt_min"),
    "dt_max": ("controls", "dt_max"),
    "tol": ("controls", "tol"),
    "safety": ("controls", "safety"),
    "t_max": ("controls", "t_max"),
    "blowup_threshold": ("controls", "blowup_threshold"),
    "record_every": ("controls", "record_every"),
    "max_steps": ("controls", "max_steps"),
    "L_weight": ("diagnostics", "L_weight"),
    "s_list": ("diagnostics", "s_list"),
    "moment": ("diagnostics", "moment"),
    "moment_epsilon": ("diagnostics", "moment_epsilon"),
    "moment_n": ("diagnostics", "moment_n"),
    "kdv_energy": ("diagnostics", "kdv_energy"),
    "sobolev": ("diagnostics", "sobolev"),
    "flux_residual": ("diagnostics", "flux_residual"),
    "profile": ("initial", "profile"),
    "amplitude": ("initial", "amplitude"),
    "seed": ("initial", "seed"),
    "n_modes": ("initial", "n_modes"),
    "initial_file": ("initial", "file"),
    "out_dir": ("output", "out_dir"),
    "p_values": ("sweep", "p_values"),
    "q_values": ("sweep", "q_values"),
    "amplitudes": ("sweep", "amplitudes"),
    "absorbing_bound": ("sweep", "absorbing_bound"),
    "exact": ("converge", "exact"),
    "resolutions": ("converge", "resolutions"),
    "fixed_dt": ("converge", "fixed_dt"),
    "temporal_dts": ("converge", "temporal_dts"),
    "temporal_n_cells": ("converge", "temporal_n_cells"),
}
_SECTIONS = sorted({s for s, _ in _LAYOUT.values()})
_BY_DOC_KEY = {(s, k): name for name, (s, k) in _LAYOUT.items()}
_FLAT = {k: name for name, (s, k) in _LAYOUT.items()}

_F_KINDS = ("zero", "signed_power", "abs_power", "quadratic_k")
_MOMENTS = ("none", "power", "ch")
_PROFILES = ("sine", "bump", "rough", "zero", "file")


@dataclass(frozen=True)
class RunConfig:
    model: str
    p: float = 1.0
    q: Optional[float] = None
    a: float = 1.0
    flux: str = "signed"
    lam: Optional[float] = None
    f: Optional[str] = None
    f_coef: float = 1.0
    g: str = "zero"
    g_scale: float = 1.0
    g_file: Optional[str] = None
    n_cells: int = 256
    scheme: str = "cnab2"
    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 0.05
    tol: float = 1e-6
    safety: float = 0.9
    t_max: float = 20.0
    blowup_threshold: float = 1e8
    record_every: float = 0.1
    max_steps: int = 2_000_000
    L_weight: Optional[float] = None
    s_list: tuple = ()
    moment: str = "none"
    moment_epsilon: float = 1.0
    moment_n: Optional[int] = None
    kdv_energy: bool = False
    sobolev: tuple = ()
    flux_residual: bool = False
    profile: str = "sine"
    amplitude: float = 1.0
    seed: int = 0
    n_modes: int = 16
    initial_file: Optional[str] = None
    out_dir: str = "out"
    p_values: tuple = ()
    q_values: tuple = ()
    amplitudes: tuple = ()
    absorbing_bound: float = 1e-6
    exact: Optional[str] = None
    resolutions: tuple = (64, 128, 256)
    fixed_dt: Optional[float] = None
    temporal_dts: tuple = ()
    temporal_n_cells: int = 64
    # not part of the document; excluded from equality
    warnings: tuple = field(default=(), compare=False, repr=False)
    base_dir: str = field(default=".", compare=False, repr=False)

    # -- derived objects ------------------------------------------------------

    def f_spec(self) -> FSpec:
        kind = self.f_kind
        if kind == "zero":
            return FSpec.zero()
        if kind == "quadratic_k":
            return FSpec.quadratic(self.f_coef)
        if self.q is None:
            raise ConfigError(f"equation.q: required for f = {kind}")
        if kind == "signed_power":
            return FSpec.signed_power(self.q, self.f_coef)
        return FSpec.abs_power(self.q, self.f_coef)

    @property
    def f_kind(self) -> str:
        if self.f is not None:
            return self.f
        if self.q is None:
            return "zero"
        # dissipative-looking parameters get the odd source, blow-up ones |u|^{q+1}
        return "signed_power" if self.q <= self.p else "abs_power"

    @property
    def model_enum(self) -> Model:
        return Model(self.model)

    def _path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def grid(self) -> Grid:
        return make_grid(self.n_cells)

    def g_spec(self, grid: Optional[Grid] = None) -> GSpec:
        if self.g == "zero":
            return GSpec.zero()
        if self.g == "file":
            vals = np.loadtxt(self._path("g_file"), dtype=float, ndmin=1)
            return GSpec.nodal(self.g_scale * vals)
        return GSpec.analytic(self.g, scale=self.g_scale)

    def equation(self) -> EquationSpec:
        return EquationSpec(
            model=self.model_enum, p=self.p, a=self.a, flux_form=FluxForm(self.flux),
            lam=self.lam if self.lam is not None else 0.0, f=self.f_spec(), g=self.g_spec(),
        )

    def controls(self) -> StepControls:
        return StepControls(
            dt_init=self.dt_init, dt_min=self.dt_min, dt_max=self.dt_max, tol=self.tol,
            safety=self.safety, t_max=self.t_max, blowup_threshold=self.blowup_threshold,
            record_every=self.record_every, scheme=Scheme(self.scheme), max_steps=self.max_steps,
        )

    def moment_spec(self):
        if self.moment == "none":
            return None
        if self.moment == "ch":
            return ChWeight()
        n = self.moment_n
        if n is None:
            kind = "second_order" if self.model == "burgers" else "fourth_order"
            q = self.f_spec().growth_exponent
            n = min_moment_order(kind, self.p, q) if q > self.p else 2
        return PowerWeight(self.moment_epsilon, n)

    def diagnostics(self) -> DiagnosticsConfig:
        return DiagnosticsConfig(L_weight=self.L_weight, s_list=tuple(self.s_list),
                                 moment=self.moment_spec(), kdv_energy=self.kdv_energy,
                                 sobolev=tuple(self.sobolev))

    def initial(self, grid: Grid) -> np.ndarray:
        from .experiments import initial_data

        if self.profile == "file":
            vals = np.loadtxt(self._path("initial_file"), dtype=float, ndmin=1)
            if vals.size != grid.size:
                raise ConfigError(
                    f"initial.file: has {vals.size} values, grid needs {grid.size}")
            return self.amplitude * vals
        return initial_data(grid, self.model_enum, self.profile, self.amplitude,
                            self.seed, self.n_modes)

    def with_(self, **changes) -> "RunConfig":
        return validate(dataclasses.replace(self, **changes))


# -- parsing ------------------------------------------------------------------

_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}
_FLOATS = {"p", "q", "a", "lam", "f_coef", "g_scale", "dt_init", "dt_min", "dt_max", "tol",
           "safety", "t_max", "blowup_threshold", "record_every", "L_weight",
           "moment_epsilon", "amplitude", "absorbing_bound", "fixed_dt"}
_INTS = {"n_cells", "max_steps", "moment_n", "seed", "n_modes", "temporal_n_cells"}
_BOOLS = {"kdv_energy", "flux_residual"}
_STRS = {"model", "flux", "f", "g", "g_file", "scheme", "moment", "profile", "initial_file",
         "out_dir", "exact"}
_FLOAT_LISTS = {"s_list", "p_values", "q_values", "amplitudes", "temporal_dts"}
_INT_LISTS = {"sobolev", "resolutions"}


def _key_path(name: str) -> str:
    s, k = _LAYOUT[name]
    return f"{s}.{k}"


def _coerce(name: str, value):
    path = _key_path(name)
    if name in _FLOATS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return value
    if name in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if name in _BOOLS:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if name in _STRS:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if name in _FLOAT_LISTS or name in _INT_LISTS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        conv = float if name in _FLOAT_LISTS else int
        out = []
        for i, v in enumerate(value):
            ok = isinstance(v, int) if conv is int else isinstance(v, (int, float))
            if isinstance(v, bool) or not ok:
                raise ConfigError(f"{path}[{i}]: expected {'an integer' if conv is int else 'a number'}")
            out.append(conv(v))
        return tuple(out)
    raise AssertionError(name)  # pragma: no cover


def _flatten(doc: dict) -> dict:
    values = {}

    def put(name, value, where):
        if name in values:
            raise ConfigError(f"{where}: given more than once")
        values[name] = _coerce(name, value)

    for key, value in doc.items():
        if key in _SECTIONS and isinstance(value, dict):
            for sub, v in value.items():
                name = _BY_DOC_KEY.get((key, sub))
                if name is None:
                    raise ConfigError(f"{key}.{sub}: unknown key")
                put(name, v, f"{key}.{sub}")
        elif key in _FLAT:
            put(_FLAT[key], value, key)
        else:
            raise ConfigError(f"{key}: unknown key")
    return values


def _theory_warnings(cfg: RunConfig) -> list[str]:
    from .experiments import predicted_regime

    out = []
    model = cfg.model_enum
    q = cfg.q
    if model is Model.KS and cfg.p > 6:
        out.append(f"equation.p: p={cfg.p:g} is outside the proven global-existence regime "
                   "p <= 6 for KS; running as exploratory")
    if model is Model.KDV and cfg.p > 2:
        out.append(f"equation.p: p={cfg.p:g} is outside the proven smoothing regime "
                   "0 < p <= 2 for KdV; running as exploratory")
    if q is not None and not out and predicted_regime(model, cfg.p, q) is None:
        out.append(f"equation: no known result covers p={cfg.p:g}, q={q:g} for {model.value}; "
                   "running as exploratory")
    return out


def validate(cfg: RunConfig) -> RunConfig:
    """Check cross-field constraints by building every derived object."""
    if cfg.model not in [m.value for m in Model]:
        raise ConfigError(f"equation.model: must be one of {[m.value for m in Model]}, "
                          f"got {cfg.model!r}")
    if cfg.lam is not None and cfg.model != "ks":
        raise ConfigError("equation.lambda: only valid for model ks")
    if cfg.flux not in ("signed", "unsigned"):
        raise ConfigError("equation.flux: must be 'signed' or 'unsigned'")
    if cfg.f is not None and cfg.f not in _F_KINDS:
        raise ConfigError(f"equation.f: must be one of {_F_KINDS}")
    if cfg.g not in ("zero", "file", *G_PROFILES):
        raise ConfigError(f"equation.g: must be 'zero', 'file' or one of {sorted(G_PROFILES)}")
    if cfg.g == "file" and cfg.g_file is None:
        raise ConfigError("equation.g_file: required when g = 'file'")
    if cfg.scheme not in [s.value for s in Scheme]:
        raise ConfigError(f"controls.scheme: must be one of {[s.value for s in Scheme]}")
    if cfg.moment not in _MOMENTS:
        raise ConfigError(f"diagnostics.moment: must be one of {_MOMENTS}")
    if cfg.profile not in _PROFILES:
        raise ConfigError(f"initial.profile: must be one of {_PROFILES}")
    if cfg.profile == "file" and cfg.initial_file is None:
        raise ConfigError("initial.file: required when profile = 'file'")
    if cfg.seed < 0 or cfg.n_modes < 1:
        raise ConfigError("initial.seed/n_modes: seed must be >= 0 and n_modes >= 1")
    if cfg.q is not None and not cfg.q > 0:
        raise ConfigError("equation.q: must be positive")
    for name in ("p_values", "q_values", "amplitudes"):
        if any(not math.isfinite(v) for v in getattr(cfg, name)):
            raise ConfigError(f"{_key_path(name)}: entries must be finite")
    if any(n < 8 for n in cfg.resolutions) or any(
            b <= a for a, b in zip(cfg.resolutions, cfg.resolutions[1:])):
        raise ConfigError("converge.resolutions: strictly increasing cell counts >= 8 required")
    if cfg.fixed_dt is not None and not cfg.fixed_dt > 0:
        raise ConfigError("converge.fixed_dt: must be positive")
    if any(not d > 0 for d in cfg.temporal_dts):
        raise ConfigError("converge.temporal_dts: entries must be positive")
    stages = (
        ("equation", cfg.equation),
        ("grid.n_cells", cfg.grid),
        ("controls", cfg.controls),
        ("diagnostics", cfg.diagnostics),
    )
    for where, build in stages:
        try:
            build()
        except ConfigError:
            raise
        except (SpecError, DiagnosticsError, ResolutionError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if 3 in cfg.sobolev and cfg.model != "kdv":
        raise ConfigError("diagnostics.sobolev: H3 is only recorded for model kdv")
    warns = _theory_warnings(cfg)
    for w in warns:
        log.warning(w)
    object.__setattr__(cfg, "warnings", tuple(warns))
    return cfg


def parse_config(text: str, *, base_dir: str = ".") -> RunConfig:
    """Parse and validate a TOML config document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<document>: TOML parse error: {exc}") from exc
    values = _flatten(doc)
    if "model" not in values:
        raise ConfigError("equation.model: required")
    return validate(RunConfig(**values, base_dir=base_dir))


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()  # OSError propagates: an I/O failure, not a config error
    return parse_config(text, base_dir=str(path.parent))


def config_to_dict(cfg: RunConfig) -> dict:
    """Sectioned mapping of every set field (None values are omitted)."""
    doc: dict = {}
    for name, (section, key) in _LAYOUT.items():
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = list(value)
        doc.setdefault(section, {})[key] = value
    return {s: doc[s] for s in _SECTIONS if s in doc}


def serialize_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
