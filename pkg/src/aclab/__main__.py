from aclab.cli import main
import sys

sys.exit(main())
