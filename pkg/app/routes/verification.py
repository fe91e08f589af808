"""
Endpoints for the numerical audits of the proposed controller.
"""
import math

from fastapi import APIRouter, HTTPException, Query, status

from app.core.errors import StcLabError
from app.routes.simulations import to_http_error
from app.schemas import schemas
from app.services import verification

router = APIRouter(prefix="/verification", tags=["Verification"])


@router.post("/decrease", response_model=schemas.LyapunovReport)
def check_decrease(request: schemas.DecreaseRequest):
    """
    Sampled Lyapunov decrease audit outside the invariant set.

    Args:
        request: Gains, disturbance bound L, Lyapunov budget, sample count and seed.

    Returns:
        Report with the sample count, violations, worst margin and case histogram.

    Raises:
        HTTPException 400: If L > 0 and beta does not exceed the convergence bound.
    """
    try:
        return verification.check_decrease(
            request.gains, request.lipschitz_L, request.v_budget, request.samples, request.seed
        )
    except StcLabError as exc:
        raise to_http_error(exc)


@router.get("/deadbeat", response_model=schemas.DeadbeatReport)
def deadbeat(
    h: float = Query(gt=0),
    beta: float = Query(default=10.0, gt=0),
    alpha: float = Query(default=math.sqrt(10.0), gt=0),
    n_states: int = Query(default=1000, ge=1, le=100_000),
    seed: int = 0,
):
    """Nilpotency of the in-band closed-loop matrix and two-step arrival at the origin."""
    if not all(math.isfinite(v) for v in (h, beta, alpha)):
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="parameters must be finite")
    return verification.deadbeat_check(h, beta=beta, alpha=alpha, n_states=n_states, seed=seed)
