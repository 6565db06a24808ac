#!/usr/bin/env python

# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Train, evaluate and inspect polyp segmentation models.'''

import sys

import lmj.polyp.cli


if __name__ == '__main__':
    sys.exit(lmj.polyp.cli.main())
