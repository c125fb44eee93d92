#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved

import sys

from distsum.scripts.distsum_cli import main


sys.exit(main())
