"""IT-HS Byzantine agreement: party state machine, simulator, adversaries, explorer."""

from .messages import Kind, Message
from .protocol import (
    FIRST_VIEW,
    ConfigurationError,
    Decide,
    Delivered,
    LocalViewAdvance,
    Mutation,
    PartyState,
    PersistHint,
    Send,
    SetViewTimer,
    Terminate,
    ViewTimerFired,
    accept_key,
    handle_event,
    init_party,
    open_lock,
    primary_of,
    select_proposal,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "FIRST_VIEW",
    "ConfigurationError",
    "Decide",
    "Delivered",
    "Kind",
    "LocalViewAdvance",
    "Message",
    "Mutation",
    "PartyState",
    "PersistHint",
    "Send",
    "SetViewTimer",
    "Terminate",
    "ViewTimerFired",
    "accept_key",
    "handle_event",
    "init_party",
    "open_lock",
    "primary_of",
    "select_proposal",
    "step",
]
