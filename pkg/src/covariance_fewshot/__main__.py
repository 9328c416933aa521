import logging
import sys

from covariance_fewshot.app import run
from covariance_fewshot.logging_config import configure_logging


def main() -> int:
    """
    Main entry point for CovarianceFewShot.

    Configures logging, runs the requested command and returns its exit code.
    """
    configure_logging()
    log = logging.getLogger(__name__)
    log.debug("Logging configured")

    return run()


if __name__ == "__main__":
    sys.exit(main())
