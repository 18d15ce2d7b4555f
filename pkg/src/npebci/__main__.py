import sys

from npebci.cli import main

sys.exit(main())
