import sys

from dpsim.cli import main

sys.exit(main())
