# vim: tabstop=4 shiftwidth=4 softtabstop=4

from importlib import metadata

DYMGNN_VENDOR = "dymgnn developers"
DYMGNN_PRODUCT = "dymgnn"

FALLBACK_VERSION = '1.0.0'


def version_string():
    try:
        return metadata.version("dymgnn")
    except Exception:
        return FALLBACK_VERSION
