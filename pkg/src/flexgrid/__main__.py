"""Allow ``python -m flexgrid``."""

import sys

from flexgrid.cli import main

sys.exit(main())
