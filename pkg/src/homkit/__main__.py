import sys

from homkit.cli import main

sys.exit(main())
