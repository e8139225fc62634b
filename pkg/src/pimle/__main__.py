import sys

from pimle.cli import main

sys.exit(main())
