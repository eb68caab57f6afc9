import sys

from maskclr.cli import main

sys.exit(main())
