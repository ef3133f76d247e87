class MuonPPError(Exception):
    pass


class InvalidInputError(MuonPPError, ValueError):
    pass


class DegenerateInputError(MuonPPError, ValueError):
    pass
