"""Allow ``python -m airnet``."""

import sys

from .cli import main

sys.exit(main())
