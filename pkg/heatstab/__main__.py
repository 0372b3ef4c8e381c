import sys

from heatstab.main import main

sys.exit(main())
