"""Entry point for running the HLM Gibbs sampler from a source checkout."""

import logging
import sys

from hlm_backend.cli import cli


def main():
    try:
        cli(prog_name="hlm-gibbs")
    except Exception as e:
        logging.exception("Application error: %s", e)
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
