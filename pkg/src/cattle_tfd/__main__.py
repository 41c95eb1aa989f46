import sys

from cattle_tfd.cli import main

sys.exit(main())
