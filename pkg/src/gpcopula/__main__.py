import sys

from gpcopula.cli import main

sys.exit(main())
