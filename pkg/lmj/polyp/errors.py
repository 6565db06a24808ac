# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Exceptions raised by the polyp segmentation code.'''


class PolypError(Exception):
    '''Base class for everything this package raises on purpose.'''


class ConfigurationError(PolypError, ValueError):
    '''A preset, variant or configuration value is not valid.'''


class ShapeError(PolypError, ValueError):
    '''A tensor does not have the shape an operation requires.'''


class ValidationError(PolypError, ValueError):
    '''Input data violates a contract (non-binary mask, bad size, ...).'''


class IngestionError(PolypError, IOError):
    '''A dataset on disk is incomplete or unreadable.'''


class TrainingError(PolypError, RuntimeError):
    '''Training diverged.'''
