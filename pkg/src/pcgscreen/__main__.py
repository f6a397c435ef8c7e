import sys

from pcgscreen.cli import main

sys.exit(main())
