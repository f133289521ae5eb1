import sys

from probscale.cli import main

sys.exit(main())
