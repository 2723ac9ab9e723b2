# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

__version__ = "0.1.0"
