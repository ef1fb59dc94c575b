"""Ethical Black Box: an operational data recorder for social robots.

Submodules:

* :mod:`ebb.model`: record types, the field catalog and validation
* :mod:`ebb.codec`: the text wire format with FNV-1a checksums
* :mod:`ebb.ringstore`: fixed-slot, crash-safe on-media ring store
* :mod:`ebb.ingestd`: network daemon that writes robot records to a store
* :mod:`ebb.simbot`: deterministic simulated robot and replay
* :mod:`ebb.cli`: the ``ebbctl`` operator tool
"""

from __future__ import annotations

from .codec import compute_checksum, encode_record, parse_record, parse_stream, scan_stream
from .errors import EbbError
from .model import (
    CATALOG,
    EbbDate,
    EbbTime,
    Field,
    Record,
    RecordType,
    build_record,
    catalog_lookup,
    validate_record,
)
from .ringstore import (
    EbbStore,
    MediaGeometry,
    append_rd,
    make_md,
    read_chronological,
    store_init,
    store_open,
    verify_store,
)

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "EbbDate",
    "EbbError",
    "EbbStore",
    "EbbTime",
    "Field",
    "MediaGeometry",
    "Record",
    "RecordType",
    "append_rd",
    "build_record",
    "catalog_lookup",
    "compute_checksum",
    "encode_record",
    "make_md",
    "parse_record",
    "parse_stream",
    "read_chronological",
    "scan_stream",
    "store_init",
    "store_open",
    "validate_record",
    "verify_store",
]
