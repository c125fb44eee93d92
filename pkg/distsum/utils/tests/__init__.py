#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
