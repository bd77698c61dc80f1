from fracsys.cli import main
import sys
sys.exit(main())
