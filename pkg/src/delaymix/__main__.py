import sys

from delaymix.cli import main

sys.exit(main())
