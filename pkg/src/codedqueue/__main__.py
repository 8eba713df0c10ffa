"""Run as ``python -m codedqueue``."""

import sys

from codedqueue.cli import main

sys.exit(main())
