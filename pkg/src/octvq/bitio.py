"""MSB-first bit packing."""

from octvq.errors import TruncatedStreamError


class BitWriter:
    def __init__(self):
        self._chunks = []
        self.nbits = 0

    def write(self, value, width):
        if width == 0:
            return
        if value < 0 or value >> width:
            raise ValueError(f"{value} does not fit in {width} bits")
        self._chunks.append(format(value, f"0{width}b"))
        self.nbits += width

    def write_bits(self, bits):
        """Append a bit sequence (iterable of truthy values, or a '0'/'1' string)."""
        s = bits if isinstance(bits, str) else "".join("1" if b else "0" for b in bits)
        self._chunks.append(s)
        self.nbits += len(s)

    def bitstring(self):
        return "".join(self._chunks)

    def to_bytes(self):
        """Packed bytes, zero-padded to a byte boundary."""
        s = self.bitstring()
        pad = -len(s) % 8
        s += "0" * pad
        return int(s, 2).to_bytes(len(s) // 8, "big") if s else b""


class BitReader:
    def __init__(self, data, nbits=None):
        self._bits = "".join(format(b, "08b") for b in data) if isinstance(
            data, (bytes, bytearray)) else data
        self.limit = len(self._bits) if nbits is None else min(nbits, len(self._bits))
        self.pos = 0

    def read(self, width):
        if width == 0:
            return 0
        end = self.pos + width
        if end > self.limit:
            raise TruncatedStreamError(
                f"needed {width} bits at bit {self.pos}, only {self.limit - self.pos} left")
        value = int(self._bits[self.pos:end], 2)
        self.pos = end
        return value

    def remaining(self):
        return self.limit - self.pos
