import sys

from ergodic_rvi.cli import main

sys.exit(main())
