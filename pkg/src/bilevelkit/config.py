"""Experiment configuration: a YAML document validated by pydantic models.

Unknown keys are rejected everywhere.  ``default_config(experiment)`` gives
the configuration a subcommand runs with when no file is passed.
"""
from __future__ import annotations

import math
from typing import Annotated, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InvalidConfig

EXPERIMENTS = ("hypergrad-bench", "fsla-run", "clean-bench", "oracle-check")
Experiment = Literal["hypergrad-bench", "fsla-run", "clean-bench", "oracle-check"]

PositiveFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
PositiveInt = Annotated[int, Field(ge=1)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(_Strict):
    delta: PositiveFloat = 1000.0
    c_tau: PositiveFloat = 1e-3
    c_beta: PositiveFloat = 1e-4
    c_eta: PositiveFloat = 9e-4


class QuadraticConfig(_Strict):
    kind: Literal["quadratic"] = "quadratic"
    n: PositiveInt = 5
    m: PositiveInt = 5
    N: PositiveInt = 10_000
    noise_std: Annotated[float, Field(ge=0)] = math.sqrt(0.1)

    @model_validator(mode="after")
    def _enough_rows(self):
        if self.N < self.n + self.m:
            raise ValueError("N must be at least n + m")
        return self


class CleaningConfig(_Strict):
    kind: Literal["cleaning"] = "cleaning"
    N_i: PositiveInt = 500
    N_v: PositiveInt = 500
    d: Annotated[int, Field(ge=2)] = 10
    gamma: Annotated[float, Field(ge=0, lt=1)] = 0.4
    blob_separation: PositiveFloat = 3.0
    ridge_mu: PositiveFloat = 0.05


ProblemConfig = Annotated[Union[QuadraticConfig, CleaningConfig], Field(discriminator="kind")]


class MethodConfig(_Strict):
    method: Literal["FSLA", "BP", "NS", "CG"]
    T: PositiveInt = 1
    K: PositiveInt = 10
    warm_start: bool = True
    schedule: Optional[ScheduleConfig] = None
    ns_beta: Optional[PositiveFloat] = None
    inner_lr: Optional[PositiveFloat] = None
    ordering: Literal["algorithm", "eq10"] = "algorithm"

    @property
    def label(self):
        return "FSLA" if self.method == "FSLA" else f"{self.method}-{self.T}-{self.K}"


class HypergradBenchConfig(_Strict):
    K_grid: List[PositiveInt] = Field(default_factory=lambda: [2**i for i in range(13)])
    beta: PositiveFloat = 2e-5
    beta_units: Literal["sum", "mean"] = "sum"
    methods: List[Literal["BP", "NS", "CG", "FSLA"]] = Field(
        default_factory=lambda: ["BP", "NS", "CG", "FSLA"]
    )
    alphas: List[PositiveFloat] = Field(default_factory=lambda: [2.0, 1.0, 0.5, 0.25])
    synthetic_K_grid: List[PositiveInt] = Field(default_factory=lambda: [2**i for i in range(4, 13)])

    @field_validator("K_grid", "synthetic_K_grid")
    @classmethod
    def _sorted_unique(cls, v):
        return sorted(set(v))


class SolverBenchConfig(_Strict):
    steps: PositiveInt = 2000
    batch_size: Optional[PositiveInt] = 256
    schedule: ScheduleConfig = ScheduleConfig()
    methods: List[MethodConfig] = Field(default_factory=lambda: [MethodConfig(method="FSLA")])

    @field_validator("methods")
    @classmethod
    def _unique_labels(cls, v):
        labels = [m.label for m in v]
        dup = {x for x in labels if labels.count(x) > 1}
        if dup:
            raise ValueError(f"duplicate method labels {sorted(dup)}")
        return v


class OracleCheckConfig(_Strict):
    problems: List[ProblemConfig] = Field(
        default_factory=lambda: [QuadraticConfig(), CleaningConfig()]
    )
    points: PositiveInt = 10
    h: PositiveFloat = 1e-5
    tol: PositiveFloat = 1e-4


class ExperimentConfig(_Strict):
    experiment: Experiment
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    output: Optional[str] = None
    record_wall_time: bool = False
    jobs: PositiveInt = 1
    problem: ProblemConfig = QuadraticConfig()
    hypergrad: Optional[HypergradBenchConfig] = None
    solver: Optional[SolverBenchConfig] = None
    oracle_check: Optional[OracleCheckConfig] = None

    @model_validator(mode="after")
    def _sections(self):
        exp = self.experiment
        if exp == "hypergrad-bench":
            if self.problem.kind != "quadratic":
                raise ValueError("hypergrad-bench needs a quadratic problem (closed-form ground truth)")
            if self.hypergrad is None:
                raise ValueError("hypergrad-bench needs a 'hypergrad' section")
        elif exp in ("fsla-run", "clean-bench") and self.solver is None:
            raise ValueError(f"{exp} needs a 'solver' section")
        elif exp == "oracle-check" and self.oracle_check is None:
            raise ValueError("oracle-check needs an 'oracle_check' section")
        return self


def default_config(experiment) -> ExperimentConfig:
    if experiment == "hypergrad-bench":
        return ExperimentConfig(experiment=experiment, hypergrad=HypergradBenchConfig())
    if experiment == "fsla-run":
        # quadratic-scaled schedule; c_beta*delta stays below 1/L for the default family
        return ExperimentConfig(
            experiment=experiment,
            solver=SolverBenchConfig(
                schedule=ScheduleConfig(delta=0.5, c_tau=1.0, c_beta=0.5, c_eta=1.0)
            ),
        )
    if experiment == "clean-bench":
        return ExperimentConfig(
            experiment=experiment,
            problem=CleaningConfig(),
            solver=SolverBenchConfig(
                methods=[
                    MethodConfig(method="FSLA"),
                    MethodConfig(method="NS", T=1, K=10, ns_beta=0.1),
                    MethodConfig(method="CG", T=1, K=10),
                ]
            ),
        )
    if experiment == "oracle-check":
        return ExperimentConfig(experiment=experiment, oracle_check=OracleCheckConfig())
    raise InvalidConfig(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")


def _format_errors(err: ValidationError):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data, experiment=None) -> ExperimentConfig:
    """Validate a mapping; ``experiment`` (the subcommand) fills or must match the key."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise InvalidConfig("config must be a mapping at the top level")
    data = dict(data)
    if experiment is not None:
        given = data.setdefault("experiment", experiment)
        if given != experiment:
            raise InvalidConfig(f"config is for {given!r} but subcommand is {experiment!r}")
        base = default_config(experiment).model_dump(mode="json")
        for section in ("hypergrad", "solver", "oracle_check"):
            if section not in data and base.get(section) is not None:
                data[section] = base[section]
        if "problem" not in data:
            data["problem"] = base["problem"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfig("invalid config:\n" + _format_errors(exc)) from None


def load_config(path, experiment=None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"{path}: {exc}") from None
    return parse_config(data, experiment)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
