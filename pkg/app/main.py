"""
Main application module.
Initializes the FastAPI application serving the laboratory's batch endpoints.
"""

import logging

from fastapi import FastAPI

from app.config.settings import settings
from app.routes import simulations, verification

# Logging configuration
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def create_application() -> FastAPI:
    """
    Create and configure the FastAPI application.

    Returns:
        FastAPI: Application with the simulation and verification routers.
    """
    application = FastAPI(
        title=settings.PROJECT_NAME,
        description="Simulation and verification laboratory for discrete-time super-twisting controllers",
        version="1.0.0",
    )
    application.include_router(simulations.router, prefix=settings.API_V1_STR)
    application.include_router(verification.router, prefix=settings.API_V1_STR)
    return application


app = create_application()


@app.get("/")
def root():
    return {
        "message": f"Welcome to the {settings.PROJECT_NAME}",
        "documentation": "/docs",
        "version": "1.0.0",
        "endpoints": {
            "simulations": {
                "run": f"{settings.API_V1_STR}/simulations/run",
                "sweep": f"{settings.API_V1_STR}/simulations/sweep",
                "psi": f"{settings.API_V1_STR}/controllers/psi",
            },
            "verification": {
                "decrease": f"{settings.API_V1_STR}/verification/decrease",
                "deadbeat": f"{settings.API_V1_STR}/verification/deadbeat",
            },
        },
    }
