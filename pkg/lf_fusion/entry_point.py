# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Runnable entry point for the command line."""
from typing import Optional, Sequence
import logging
import sys

from lf_fusion.cli.commands import PARSER, handle_command
from lf_fusion.config import load_config
from lf_fusion.errors import InputError, LfFusionError
from lf_fusion.util.parallel import set_threads

logger = logging.getLogger("lf_fusion")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = PARSER.parse_args(argv)
    try:
        config = load_config(args.config)
        logging.basicConfig(level=args.log_level or config.log_level)
        set_threads(
            config.threads if args.threads is None else args.threads
        )
        handle_command(args, config)
    except LfFusionError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
