import sys

from dgsearch.cli import main

sys.exit(main())
