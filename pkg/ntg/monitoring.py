"""
Error monitoring: optional Sentry integration for long training runs.

Call `init_sentry()` once at startup.  Use `capture_failure()` for errors
that abort a command; it always logs and forwards to Sentry when enabled.
"""

import logging

from ntg.config import NTG_SENTRY_DSN

logger = logging.getLogger(__name__)
_sentry_enabled = False


def init_sentry() -> bool:
    """Initialise Sentry SDK if NTG_SENTRY_DSN is configured. Returns True on success."""
    global _sentry_enabled
    if not NTG_SENTRY_DSN:
        logger.debug("NTG_SENTRY_DSN not set, Sentry disabled.")
        return False

    try:
        import sentry_sdk

        sentry_sdk.init(
            dsn=NTG_SENTRY_DSN,
            traces_sample_rate=0.0,
            send_default_pii=False,
        )
        _sentry_enabled = True
        logger.info("Sentry initialised.")
        return True
    except Exception as exc:
        logger.warning("Failed to initialise Sentry: %s", exc)
        return False


def capture_failure(error: BaseException, context_info: str = "") -> None:
    """Log a command-aborting error and forward it to Sentry if enabled."""
    logger.error("%s failed: %s", context_info or "command", error, exc_info=error)

    if _sentry_enabled:
        import sentry_sdk

        with sentry_sdk.new_scope() as scope:
            if context_info:
                scope.set_tag("ntg.command", context_info)
            sentry_sdk.capture_exception(error)
