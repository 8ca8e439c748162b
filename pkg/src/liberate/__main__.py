import sys

from liberate.cli import main

sys.exit(main())
