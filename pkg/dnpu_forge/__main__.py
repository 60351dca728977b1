import sys

from dnpu_forge.main import main

sys.exit(main())
