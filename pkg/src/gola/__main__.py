import sys

from gola.cli import main

sys.exit(main())
