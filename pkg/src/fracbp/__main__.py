import sys

from fracbp.cli import main

sys.exit(main())
