import sys

from mbsalloc.cli import main

sys.exit(main())
