import logging

ROOT_LOGGER_NAME = "bssoundboard"
LOG_FORMAT = "%(asctime)s | %(levelname)-7s | %(name)s | %(message)s"


def get_logger(name: str) -> logging.Logger:
    """
    Devuelve el logger del módulo ``name`` colgado de la jerarquía ``bssoundboard``.

    Los módulos de la librería nunca instalan handlers; eso lo hace ``configure_logging`` desde el CLI.
    """
    if name == ROOT_LOGGER_NAME or name.startswith(ROOT_LOGGER_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def configure_logging(verbosity: int = 0) -> logging.Logger:
    """
    Instala un único handler de consola en el logger raíz del paquete.

    verbosity: -1 → WARNING, 0 → INFO, ≥1 → DEBUG.
    """
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG

    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, "_bssoundboard", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._bssoundboard = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.propagate = False
    return root
