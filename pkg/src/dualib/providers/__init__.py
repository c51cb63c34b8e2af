"""Chat and embedding providers: scripted (offline), desk policy, and HTTP."""

from __future__ import annotations

from .base import ChatRequest, Message, StructuredReply, chat, chat_many, make_request
from .desk import DeskPolicy, understand
from .embedding import EmbeddingBank, HashingEmbedder, HttpEmbedder, cosine
from .http import HttpChatProvider, HttpTransport
from .replies import parse_reply
from .scripted import ScriptedProvider, load_script

__all__ = [
    "ChatRequest", "DeskPolicy", "EmbeddingBank", "HashingEmbedder", "HttpChatProvider", "HttpEmbedder",
    "HttpTransport", "Message", "ScriptedProvider", "StructuredReply", "chat", "chat_many", "cosine",
    "load_script", "make_request", "parse_reply", "understand",
]
