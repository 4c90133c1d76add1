"""FastAPI application exposing the analysis, allocation and simulation handlers."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..coding import CodingConditionError
from ..estimator import FixpointDivergence
from ..netmodel import ScenarioError
from ..simharness import FIGURE_IDS, SimulationError
from ..vulnerability import DecouplingViolation, DimensionCapExceeded
from . import handlers
from .schemas import (
    AllocateRequest, AllocateResponse, AnalyzeRequest, AnalyzeResponse, DesignCodesRequest, ReproduceRequest,
    SimulateRequest, ThresholdsRequest, ThresholdsResponse, ValidateRequest, ValidateResponse,
)

_CLIENT_ERRORS = (ScenarioError, ValueError, KeyError, TypeError, DecouplingViolation, DimensionCapExceeded)
_MODEL_ERRORS = (FixpointDivergence, CodingConditionError, SimulationError)


def create_app() -> FastAPI:
    app = FastAPI(title="dcfsec", version=__version__)

    async def _errors(request: Request, exc: Exception):
        if isinstance(exc, _MODEL_ERRORS):
            status = 422
        elif isinstance(exc, _CLIENT_ERRORS):
            status = 400
        else:
            status = 500
        return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})

    # specific classes are answered by the routing layer; anything else falls through to a 500
    for cls in _MODEL_ERRORS + _CLIENT_ERRORS + (Exception,):
        app.add_exception_handler(cls, _errors)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(req: AnalyzeRequest):
        return handlers.handle_analyze(req.scenario, req.attack_sets, req.tolerances.overrides(), req.steady_state,
                                       req.theorem2_cap)

    @app.post("/allocate", response_model=AllocateResponse)
    def allocate(req: AllocateRequest):
        return handlers.handle_allocate(req.scenario, req.exact_limit, req.interrupt, req.tolerances.overrides())

    @app.post("/design-codes")
    def design_codes(req: DesignCodesRequest):
        return handlers.handle_design_codes(req.scenario, req.channels, req.seed, req.dwell, req.mode, req.policy,
                                            req.perturbation, req.steps, req.tolerances.overrides())

    @app.post("/simulate")
    def simulate(req: SimulateRequest):
        return handlers.handle_simulate(req.scenario, req.experiment, req.runs, req.seed, req.horizon, req.threads,
                                        req.include_csv)

    @app.post("/reproduce/{fig}")
    def reproduce(fig: int, req: ReproduceRequest | None = None):
        if fig not in FIGURE_IDS:
            raise HTTPException(status_code=404, detail=f"figure must be one of {list(FIGURE_IDS)}")
        req = req or ReproduceRequest()
        return handlers.handle_reproduce(fig, req.runs, req.seed, req.horizon, req.scenario_seed, req.coding_seed,
                                         req.threads, req.include_csv)

    @app.post("/thresholds", response_model=ThresholdsResponse)
    def thresholds(req: ThresholdsRequest):
        return handlers.handle_thresholds(req.dfs, req.confidences, req.window)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        return handlers.handle_validate(req.scenario, req.tolerances.overrides())

    return app


app = create_app()
