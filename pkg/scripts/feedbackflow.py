#!/usr/bin/env python3

import sys
import os
import os.path

# This adds ../ to the path.
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from feedbackflow.cli import main  # noqa: E402

sys.exit(main())
