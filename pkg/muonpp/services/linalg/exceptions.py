from muonpp.exceptions import MuonPPError


class JacobiConvergenceError(MuonPPError):
    pass


class MatrixFormatError(MuonPPError, ValueError):
    pass
