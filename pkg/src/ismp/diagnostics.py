"""Warning collection.

Degraded-but-valid outcomes (fallback normals, skipped FPFH pairs, identity
registration, ...) are logged and, inside a ``collect()`` block, recorded so
the pipeline can put them in its run manifest. Collectors are context-local,
so worker threads each record their own sample.
"""
import contextlib
import contextvars
import logging

LOGGER = logging.getLogger("ismp")
LOGGER.addHandler(logging.NullHandler())

_active = contextvars.ContextVar("ismp_warnings", default=None)


def warn(module, kind, message):
    text = f"{module}:{kind}: {message}"
    LOGGER.warning(text)
    sink = _active.get()
    if sink is not None:
        sink.append(text)


@contextlib.contextmanager
def collect():
    sink = []
    token = _active.set(sink)
    try:
        yield sink
    finally:
        _active.reset(token)
