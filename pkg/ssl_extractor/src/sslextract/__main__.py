"""Entry point for `python3 -m sslextract`."""

import sys

from .cli import main

sys.exit(main())
