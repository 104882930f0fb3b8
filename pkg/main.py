import sys

from loguru import logger

from src.app import SparseTempApp
from src.config.logging_config import setup_logging


def main() -> None:
    setup_logging()
    logger.debug("Starting sparse-temp CLI")
    sys.exit(SparseTempApp().run(sys.argv[1:]))


if __name__ == "__main__":
    main()
