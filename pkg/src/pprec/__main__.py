import sys

from pprec.cli import main

sys.exit(main())
