from abc import ABC, abstractmethod

from muonpp.services.rmt.dto import ExperimentReport


class AbstractExperiment(ABC):
    """A seeded Monte-Carlo experiment that turns one mathematical claim into a verdict."""

    name: str = ""

    @abstractmethod
    def run(self, *args, **kwargs) -> ExperimentReport:
        pass
