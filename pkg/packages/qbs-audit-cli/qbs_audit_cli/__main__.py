"""Allow ``python -m qbs_audit_cli`` to run the command line."""

import sys

from qbs_audit_cli.cli import main

sys.exit(main())
