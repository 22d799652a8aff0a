import sys

from promptdiff.cli import main

sys.exit(main())
