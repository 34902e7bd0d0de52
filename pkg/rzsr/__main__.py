import sys

from rzsr.main import main

sys.exit(main())
