"""
Shared entry-point plumbing for the stage scripts: environment, logging and
the mapping from failures to exit codes.
"""

import logging
import os
import sys

from dotenv import load_dotenv

from errors import ConfigError, ParseError
from pipeline import STAGE_EXIT_CODES, StageError
from run_config import config_from_args


def configure_logging():
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO"),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def load_config_or_exit(args):
    try:
        return config_from_args(args)
    except ConfigError as e:
        print("❌ Invalid configuration:")
        for message in e.field_errors:
            print(f"   {message}")
        sys.exit(STAGE_EXIT_CODES["config"])
    except FileNotFoundError as e:
        print(f"❌ Error: {e}")
        sys.exit(STAGE_EXIT_CODES["config"])


def run_script(main):
    """Run a stage script's main() and translate failures into exit codes."""
    try:
        main()
    except KeyboardInterrupt:
        print("\n⚠️  Interrupted by user")
        sys.exit(0)
    except StageError as e:
        print(f"❌ {e.stage} stage failed: {e.cause}")
        sys.exit(e.exit_code)
    except (ParseError, FileNotFoundError, OSError) as e:
        print(f"❌ Error: {e}")
        sys.exit(STAGE_EXIT_CODES["io"])
    except Exception as e:
        print(f"❌ Error: {e}")
        sys.exit(1)
