from .app import DEFAULT_CHANNEL, SessionStore, create_app

__all__ = ["DEFAULT_CHANNEL", "SessionStore", "create_app"]
