#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved

__version__ = "0.1.0"
