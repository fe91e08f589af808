from dependency_injector import containers, providers

from app.config.settings import get_settings
from app.services.experiments import ExperimentRunner


class Container(containers.DeclarativeContainer):
    # Configuration
    config = providers.Singleton(get_settings)

    # Experiments - a fresh runner bound to the shared settings on each call
    experiment_runner = providers.Factory(ExperimentRunner, settings=config)


# Create a global container instance
container = Container()


# Dependency utility function
def get_experiment_runner() -> ExperimentRunner:
    return container.experiment_runner()
