import sys

from ensemble_rkhs.cli import main

sys.exit(main())
