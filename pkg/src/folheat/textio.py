"""Whitespace-token reader for the line-based text formats (mesh, checkpoint).

Comments run from ``#`` to end of line. Tokens may wrap across lines; the
reader tracks line numbers so parse errors can point at the offending line.
"""

from __future__ import annotations

from .errors import MeshFormatError


class TokenReader:
    def __init__(self, text: str, *, error_cls=MeshFormatError):
        self._tokens: list[tuple[int, str]] = []
        self._error_cls = error_cls
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0]
            for tok in body.split():
                self._tokens.append((lineno, tok))
        self._pos = 0

    def fail(self, message: str):
        lineno = self._tokens[self._pos - 1][0] if self._tokens else 0
        raise self._error_cls(f"line {lineno}: {message}")

    def exhausted(self) -> bool:
        return self._pos >= len(self._tokens)

    def next_str(self, what: str = "token") -> str:
        if self.exhausted():
            lineno = self._tokens[-1][0] if self._tokens else 0
            raise self._error_cls(f"line {lineno}: unexpected end of file, expected {what}")
        lineno, tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def next_int(self, what: str = "integer") -> int:
        tok = self.next_str(what)
        try:
            return int(tok)
        except ValueError:
            self.fail(f"expected {what}, got {tok!r}")

    def next_float(self, what: str = "number") -> float:
        tok = self.next_str(what)
        try:
            return float(tok)
        except ValueError:
            self.fail(f"expected {what}, got {tok!r}")

    def expect(self, word: str):
        tok = self.next_str(repr(word))
        if tok != word:
            self.fail(f"expected {word!r}, got {tok!r}")


def wrap_tokens(tokens, per_line: int = 8) -> str:
    """Render tokens as text wrapped to ``per_line`` items per line."""
    items = [str(t) for t in tokens]
    lines = []
    for i in range(0, len(items), per_line):
        lines.append(" ".join(items[i : i + per_line]))
    return "\n".join(lines)
