import logging
import sys
from typing import Optional, Sequence

from muonpp.cli.config import parse_config, usage
from muonpp.cli.exceptions import ConfigError
from muonpp.cli.runner import EXIT_OK, EXIT_USAGE, dispatch

logger = logging.getLogger("muonpp.cli")


def configure_logging(level: str = "WARNING") -> None:
    # stdout is reserved for result lines
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    configure_logging()
    if argv and argv[0] in ("-h", "--help"):
        print(usage())
        return EXIT_OK
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        logger.error(str(exc))
        print(usage(), file=sys.stderr)
        return EXIT_USAGE
    configure_logging(config.log_level)
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
