from muonpp.exceptions import MuonPPError


class TrainingDivergedError(MuonPPError):
    def __init__(self, message: str, step: int, loss: float):
        super().__init__(message)
        self.step = step
        self.loss = loss
