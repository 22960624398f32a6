import sys

from vpfp.cli import main

sys.exit(main())
