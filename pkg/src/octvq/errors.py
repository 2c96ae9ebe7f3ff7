"""Exception hierarchy shared by the codec modules."""


class CodecError(Exception):
    """Base class for every error the codec raises on bad input."""


class PlyError(CodecError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PlyHeaderError(PlyError):
    pass


class PlyFormatError(PlyError):
    pass


class PlyTruncatedError(PlyError):
    pass


class StreamError(CodecError):
    pass


class BadMagicError(StreamError):
    pass


class VersionError(StreamError):
    pass


class ModelMismatchError(StreamError):
    pass


class TruncatedStreamError(StreamError):
    pass


class CorruptStreamError(StreamError):
    pass


class ModelFileError(CodecError):
    pass


class TrainingError(CodecError):
    pass


class ConfigError(CodecError):
    pass
