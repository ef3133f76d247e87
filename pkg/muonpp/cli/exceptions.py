from typing import Optional

from muonpp.exceptions import InvalidInputError


class ConfigError(InvalidInputError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key
