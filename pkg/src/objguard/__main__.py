import sys

from objguard.cli import main

sys.exit(main())
