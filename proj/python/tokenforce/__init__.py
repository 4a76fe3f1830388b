"""White-box token-forcing attacks on a deterministic toy transformer."""

try:
    from ._tokenforce import *  # noqa: F401,F403
    from ._tokenforce import __doc__  # noqa: F401
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _tokenforce import *  # noqa: F401,F403
