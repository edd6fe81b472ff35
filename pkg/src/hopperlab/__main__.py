import sys

from hopperlab.cli import main

sys.exit(main())
