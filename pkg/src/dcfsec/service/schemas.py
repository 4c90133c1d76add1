"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

Edge = tuple[int, int]


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rank_tol_factor: float | None = Field(None, gt=0)
    fixpoint_tol: float | None = Field(None, gt=0)
    fixpoint_max_iters: int | None = Field(None, ge=1)
    subspace_tol: float | None = Field(None, gt=0)

    def overrides(self) -> dict:
        return self.model_dump(exclude_none=True)


class ScenarioRequest(BaseModel):
    """A scenario document, or ``{"builtin": "paper", "seed": 0}``."""

    scenario: dict[str, Any]
    tolerances: Tolerances = Field(default_factory=Tolerances)


class AnalyzeRequest(ScenarioRequest):
    attack_sets: list[list[Edge]] = Field(default_factory=list)
    steady_state: bool = True
    theorem2_cap: int = Field(600, ge=1)


class AllocateRequest(ScenarioRequest):
    exact_limit: int = Field(15, ge=0)
    interrupt: bool = True


class DesignCodesRequest(ScenarioRequest):
    channels: list[Edge] | None = None
    seed: int = 0
    dwell: int = Field(1, ge=1)
    mode: Literal["theorem4", "lemma4"] = "theorem4"
    policy: Literal["perturbed", "iid"] = "perturbed"
    perturbation: float = Field(0.1, ge=0)
    steps: int = Field(0, ge=0, le=10_000)


class SimulateRequest(BaseModel):
    scenario: dict[str, Any]
    experiment: dict[str, Any] = Field(default_factory=dict)
    runs: int | None = Field(None, ge=1)
    seed: int | None = None
    horizon: int | None = Field(None, ge=2)
    threads: int | None = Field(None, ge=1)
    include_csv: bool = True


class ReproduceRequest(BaseModel):
    runs: int = Field(1000, ge=1)
    seed: int = 0
    horizon: int = Field(400, ge=51)
    scenario_seed: int = 0
    coding_seed: int = 7
    threads: int | None = Field(None, ge=1)
    include_csv: bool = True


class ThresholdsRequest(BaseModel):
    dfs: list[int] = Field(..., min_length=1)
    confidences: list[float] = Field(default_factory=lambda: [0.95])
    window: int = Field(1, ge=1)


class ValidateRequest(ScenarioRequest):
    pass


class ThresholdRow(BaseModel):
    df: int
    window: int
    confidence: float
    threshold: float


class ThresholdsResponse(BaseModel):
    thresholds: list[ThresholdRow]
    inputs: dict[str, str]


class ValidationCheck(BaseModel):
    check: str
    assumption: str
    ok: bool
    detail: str


class ValidateResponse(BaseModel):
    ok: bool
    status: Literal["ok", "invalid"]
    checks: list[ValidationCheck]
    inputs: dict[str, str]


class AllocateResponse(BaseModel):
    model_config = ConfigDict(extra="allow")

    status: Literal["ok", "infeasible"]
    channels: list[Edge]
    count: int
    feasible: bool
    inputs: dict[str, str]


class AnalyzeResponse(BaseModel):
    model_config = ConfigDict(extra="allow")

    status: Literal["secure", "vulnerable"]
    vulnerable_nodes: list[int]
    any_vulnerable: bool
    inputs: dict[str, str]


class ErrorResponse(BaseModel):
    error: str
    detail: str
