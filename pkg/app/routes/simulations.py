"""
Endpoints for closed-loop runs, parameter sweeps and controller functions.
Every response is a batch result; runs are not controllable while they execute.
"""
from typing import Dict, List, Optional

import numpy as np
from fastapi import APIRouter, Depends, HTTPException, status
from pydantic import BaseModel, ValidationError

from app.core.container import get_experiment_runner
from app.core.errors import DivergenceError, StcLabError
from app.schemas import schemas
from app.services import disturbances
from app.services.experiments import ExperimentRunner

router = APIRouter(tags=["Simulations"])


class SweepResponse(BaseModel):
    axis: schemas.SweepAxis
    metric: schemas.SweepMetric
    values: List[float]
    results: Dict[schemas.ControllerVariant, List[Optional[float]]]


def to_http_error(exc: StcLabError) -> HTTPException:
    """Map a laboratory error onto an HTTP error response."""
    if isinstance(exc, DivergenceError):
        return HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"message": str(exc), "step": exc.step},
        )
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))


@router.post("/simulations/run", response_model=schemas.RunSummary)
def run_simulation(
    request: schemas.SimulationRequest,
    runner: ExperimentRunner = Depends(get_experiment_runner),
):
    """
    Simulates one controller variant on the discrete plant.

    Args:
        request: Variant, gains, disturbance name, initial conditions and horizon.
        runner: Experiment runner from the container.

    Returns:
        t_C, e_f and the final |x1|; a diverged run reports the step instead.

    Raises:
        HTTPException 400: Inconsistent configuration (e.g. horizon shorter than h).
    """
    try:
        sim = schemas.SimConfig(
            variant=request.variant,
            gains=runner.gains_for(request.variant, request.gains, runner.settings.HANAN_G),
            signal=disturbances.signal_from_name(request.signal.value),
            x1_0=request.x1_0,
            nu_0=request.nu_0,
            horizon_T=request.horizon_T,
        )
        _, summary = runner.simulate(sim, request.tail_start)
    except StcLabError as exc:
        raise to_http_error(exc)
    return summary


@router.post("/simulations/sweep", response_model=SweepResponse)
def run_sweep(
    request: schemas.SweepRequest,
    runner: ExperimentRunner = Depends(get_experiment_runner),
):
    """
    Sweeps one gain axis and returns one metric per variant and grid value.
    Points that diverge or never meet the threshold are null.
    """
    try:
        cfg = schemas.ExperimentConfig.build(
            schemas.ExperimentName.SWEEP_TC.value,
            request.model_dump(mode="json"),
        )
        table = runner.sweep_table(cfg)
    except ValidationError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
    except StcLabError as exc:
        raise to_http_error(exc)
    return SweepResponse(**table.model_dump())


@router.post("/controllers/psi", response_model=schemas.PsiResponse)
def controller_functions(
    request: schemas.PsiRequest,
    runner: ExperimentRunner = Depends(get_experiment_runner),
):
    """Evaluates (Ψ1, Ψ2) of a variant at the given x1 samples and ν."""
    try:
        return runner.psi_samples(request.variant, np.array(request.x1), request.nu, request.gains)
    except StcLabError as exc:
        raise to_http_error(exc)

