import sys

from hspk.cli import main

sys.exit(main())
