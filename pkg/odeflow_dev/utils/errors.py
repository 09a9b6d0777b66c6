__all__ = ['OdeFlowError', 'ShapeMismatch', 'NonFiniteError', 'NonFiniteState', 'MaxStepsExceeded',
           'EmptyMaskError', 'CodecError', 'BadMagic', 'TruncatedFile', 'DimensionOverflow', 'MalformedHeader',
           'CheckpointMismatch', 'ConfigError', 'DivergenceError']


class OdeFlowError(RuntimeError):
    pass


class ShapeMismatch(OdeFlowError, ValueError):
    pass


class NonFiniteError(OdeFlowError):
    pass


class NonFiniteState(NonFiniteError):
    pass


class MaxStepsExceeded(OdeFlowError):
    pass


class EmptyMaskError(OdeFlowError, ValueError):
    pass


class CodecError(OdeFlowError):
    pass


class BadMagic(CodecError):
    pass


class TruncatedFile(CodecError):
    pass


class DimensionOverflow(CodecError):
    pass


class MalformedHeader(CodecError):
    pass


class CheckpointMismatch(CodecError):
    pass


class ConfigError(OdeFlowError, ValueError):
    pass


class DivergenceError(OdeFlowError):
    pass
