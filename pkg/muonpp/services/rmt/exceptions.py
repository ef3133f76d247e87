from muonpp.exceptions import MuonPPError


class ExperimentError(MuonPPError):
    pass
