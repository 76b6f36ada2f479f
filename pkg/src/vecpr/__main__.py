import sys

from vecpr.cli import main

sys.exit(main())
