"""Bit-exact codecs for DCI format 0, scheduling requests and short BSR CEs.

All bit strings are MSB-first text of ``'0'``/``'1'``. DCI 0 layout (35 bits)::

    offset  width  field
         0     16  rnti
        16      1  format flag (0 = format 0)
        17      1  frequency hopping flag
        18     13  resource indication value (RB start + length)
        31      1  new data indicator
        32      2  TPC command
        34      1  CQI request

Scheduling request (38 bits)::

    rnti(16) | PUCCH resource index(11) | periodicity code(3) | offset(7) | present(1)

Short BSR CE (11 bits)::

    lcid(5) | buffer size index(6)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

N_UL_RB = 100
DCI0_MAX_BITS = 37

RNTI_BITS = 16
RIV_BITS = 13
TPC_OFFSET = 32
DCI0_LAYOUT = (
    ("rnti", 16), ("format_flag", 1), ("hopping", 1), ("riv", RIV_BITS),
    ("ndi", 1), ("tpc_command", 2), ("cqi_request", 1),
)
DCI0_BITS = sum(w for _, w in DCI0_LAYOUT)
assert DCI0_BITS <= DCI0_MAX_BITS

SR_PERIODICITIES = (5, 10, 20, 40, 80)
SR_RESOURCE_BITS = 11
SR_BITS = RNTI_BITS + SR_RESOURCE_BITS + 3 + 7 + 1

LCID_MAX = 10
LCID_DATA = 3
BSR_BITS = 5 + 6
BSR_TABLE_MAX = 150_000
BSR_LEVELS = 64

BSR_CE_BYTES = 2  # subheader + CE


class CodecError(ValueError):
    pass


def _field(value: int, width: int) -> str:
    return format(value, f"0{width}b")


def riv_encode(rb_start: int, rb_len: int, n_rb: int = N_UL_RB) -> int:
    """Resource indication value for a contiguous uplink allocation."""
    if rb_len < 1 or rb_start < 0 or rb_start + rb_len > n_rb:
        raise CodecError(f"invalid allocation start={rb_start} len={rb_len}")
    if rb_len - 1 <= n_rb // 2:
        return n_rb * (rb_len - 1) + rb_start
    return n_rb * (n_rb - rb_len + 1) + (n_rb - 1 - rb_start)


def riv_decode(riv: int, n_rb: int = N_UL_RB) -> tuple[int, int]:
    start, len_minus_1 = riv % n_rb, riv // n_rb
    if len_minus_1 <= n_rb // 2 and start + len_minus_1 + 1 <= n_rb:
        return start, len_minus_1 + 1
    # mirrored branch (long allocations)
    rb_len = n_rb - len_minus_1 + 1
    rb_start = n_rb - 1 - start
    if rb_len - 1 <= n_rb // 2 or rb_start < 0 or rb_start + rb_len > n_rb:
        raise CodecError(f"RIV {riv} does not map to a valid allocation")
    return rb_start, rb_len


@dataclass(frozen=True)
class Dci0:
    rnti: int
    rb_start: int = 0
    rb_len: int = 1
    tpc_command: int = 1
    hopping: int = 0
    ndi: int = 0
    cqi_request: int = 0

    @property
    def riv(self) -> int:
        return riv_encode(self.rb_start, self.rb_len)


def encode_dci0(d: Dci0) -> str:
    if not 0 <= d.rnti < 2**RNTI_BITS:
        raise CodecError(f"rnti {d.rnti} out of range")
    if d.tpc_command not in (0, 1, 2, 3):
        raise CodecError(f"tpc_command {d.tpc_command} out of range")
    for name in ("hopping", "ndi", "cqi_request"):
        if getattr(d, name) not in (0, 1):
            raise CodecError(f"{name} must be 0 or 1")
    values = {"rnti": d.rnti, "format_flag": 0, "hopping": d.hopping, "riv": d.riv,
              "ndi": d.ndi, "tpc_command": d.tpc_command, "cqi_request": d.cqi_request}
    bits = "".join(_field(values[name], width) for name, width in DCI0_LAYOUT)
    assert len(bits) <= DCI0_MAX_BITS
    return bits


@lru_cache(maxsize=4096)
def decode_dci0(bits: str) -> Dci0:
    if len(bits) != DCI0_BITS or bits.strip("01"):
        raise CodecError(f"DCI 0 must be {DCI0_BITS} bits, got {len(bits)}")
    fields = {}
    pos = 0
    for name, width in DCI0_LAYOUT:
        fields[name] = int(bits[pos:pos + width], 2)
        pos += width
    if fields["format_flag"] != 0:
        raise CodecError("format flag set: not a DCI format 0 message")
    start, length = riv_decode(fields["riv"])
    return Dci0(rnti=fields["rnti"], rb_start=start, rb_len=length,
                tpc_command=fields["tpc_command"], hopping=fields["hopping"],
                ndi=fields["ndi"], cqi_request=fields["cqi_request"])


@dataclass(frozen=True)
class SchedulingRequestConfig:
    resource_index: int
    periodicity_ms: int = 10
    offset_ms: int = 0

    def __post_init__(self):
        if not 0 <= self.resource_index < 2**SR_RESOURCE_BITS:
            raise ValueError(f"PUCCH resource index {self.resource_index} out of range")
        if self.periodicity_ms not in SR_PERIODICITIES:
            raise ValueError(f"SR periodicity {self.periodicity_ms} not in {SR_PERIODICITIES}")
        if not 0 <= self.offset_ms < self.periodicity_ms:
            raise ValueError("SR offset must be within the period")

    def is_opportunity(self, ms: int) -> bool:
        return (ms - self.offset_ms) % self.periodicity_ms == 0


@dataclass(frozen=True)
class SchedulingRequest:
    rnti: int
    sr_config: SchedulingRequestConfig


def encode_sr(sr: SchedulingRequest) -> str:
    if not 0 <= sr.rnti < 2**RNTI_BITS:
        raise CodecError(f"rnti {sr.rnti} out of range")
    c = sr.sr_config
    return (_field(sr.rnti, RNTI_BITS) + _field(c.resource_index, SR_RESOURCE_BITS)
            + _field(SR_PERIODICITIES.index(c.periodicity_ms), 3) + _field(c.offset_ms, 7) + "1")


def decode_sr(bits: str) -> SchedulingRequest:
    if len(bits) != SR_BITS or bits.strip("01"):
        raise CodecError(f"SR must be {SR_BITS} bits, got {len(bits)}")
    if bits[-1] != "1":
        raise CodecError("SR presence bit not set")
    rnti = int(bits[:16], 2)
    res = int(bits[16:27], 2)
    code = int(bits[27:30], 2)
    off = int(bits[30:37], 2)
    if code >= len(SR_PERIODICITIES):
        raise CodecError(f"bad periodicity code {code}")
    try:
        cfg = SchedulingRequestConfig(res, SR_PERIODICITIES[code], off)
    except ValueError as exc:
        raise CodecError(str(exc)) from exc
    return SchedulingRequest(rnti, cfg)


def _build_bsr_table() -> tuple[int, ...]:
    # level 0 is an empty buffer; levels 1..63 are exponentially spaced 1..150000
    table = [0]
    for k in range(1, BSR_LEVELS):
        v = round(BSR_TABLE_MAX ** ((k - 1) / (BSR_LEVELS - 2)))
        table.append(max(v, table[-1] + 1))
    table[-1] = BSR_TABLE_MAX
    return tuple(table)


BSR_TABLE = _build_bsr_table()


def bsr_index(buffer_size_bytes: int) -> int:
    if buffer_size_bytes < 0:
        raise CodecError("negative buffer size")
    lo, hi = 0, BSR_LEVELS - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if BSR_TABLE[mid] <= buffer_size_bytes:
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass(frozen=True)
class BsrCe:
    lcid: int
    buffer_size_bytes: int


def encode_bsr(b: BsrCe) -> str:
    if not 0 <= b.lcid <= LCID_MAX:
        raise CodecError(f"lcid {b.lcid} out of range")
    return _field(b.lcid, 5) + _field(bsr_index(b.buffer_size_bytes), 6)


def decode_bsr(bits: str) -> BsrCe:
    if len(bits) != BSR_BITS or bits.strip("01"):
        raise CodecError(f"BSR CE must be {BSR_BITS} bits, got {len(bits)}")
    lcid = int(bits[:5], 2)
    if lcid > LCID_MAX:
        raise CodecError(f"lcid {lcid} out of range")
    return BsrCe(lcid, BSR_TABLE[int(bits[5:], 2)])


@dataclass(frozen=True)
class MacPdu:
    rnti: int
    bsr: BsrCe | None = None
    payload_kind: str = "padding"
    payload_len_bytes: int = 0
    sdu: bytes = b""

    def __post_init__(self):
        if self.payload_kind not in ("data", "padding"):
            raise ValueError(f"bad payload kind {self.payload_kind!r}")
        if self.payload_kind == "padding" and self.sdu:
            raise ValueError("padding PDUs carry no SDU")

    @property
    def reported_bytes(self) -> int | None:
        """Buffer size as the receiver decodes it (quantized)."""
        if self.bsr is None:
            return None
        return _quantized(self.bsr)


@lru_cache(maxsize=1024)
def _quantized(b: BsrCe) -> int:
    return decode_bsr(encode_bsr(b)).buffer_size_bytes
