import sys

from latentcbf.cli.main import main

sys.exit(main())
