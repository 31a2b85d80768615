import sys

from ntg.main import main

sys.exit(main())
