"""Zero-overhead flash translation.

The MMU holds a read-only, block-granularity data block mapping table
(DBMT) cached by a TLB. Data blocks of one plane are grouped to share a
log block; the group -> log block map is the LBMT. Page-level remapping
of written data lives in each log block's row decoder (see ``znand``).

Blocks are striped channel-first: the k-th block registered on the
device lands on linear plane ``k mod n_planes`` where channel varies
fastest, then package, die and plane. Apps register in id order. Groups never mix apps, so a group has a single
owner for garbage collection.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple

from .config import Geometry, GB
from .errors import ConsistencyError, PageFault

DATA = "data"
LOG = "log"


class FlashAddress(NamedTuple):
    channel: int
    package: int
    die: int
    plane: int
    block: int
    page: int
    role: str = DATA
    page_index: int = 0


class TranslationResult(NamedTuple):
    addr: FlashAddress
    tlb_hit: bool
    pdbn: int
    plbn: int
    page_index: int
    plane_id: int
    group: int


@dataclass(slots=True)
class DbmtEntry:
    vbn: int
    lbn: int
    pdbn: int
    plbn: int
    group: int = -1
    app: int = 0


@dataclass(slots=True)
class Group:
    gid: int
    plane_id: int
    app: int
    members: list = field(default_factory=list)  # vbns


class Lbmt:
    """Data-block group -> shared log block."""

    def __init__(self, group_size: int):
        self.group_size = group_size
        self.plbn: dict[int, int] = {}
        self.groups: dict[int, Group] = {}

    def __getitem__(self, gid: int) -> int:
        return self.plbn[gid]

    def __len__(self):
        return len(self.plbn)


class Tlb:
    """Fully associative LRU cache of DBMT entries."""

    def __init__(self, entries: int = 128, enabled: bool = True):
        self.entries = entries
        self.enabled = enabled
        self.map: OrderedDict[int, DbmtEntry] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def lookup(self, vbn: int, dbmt: dict) -> tuple[DbmtEntry, bool]:
        if self.enabled:
            e = self.map.get(vbn)
            if e is not None:
                self.map.move_to_end(vbn)
                self.hits += 1
                return e, True
        e = dbmt.get(vbn)
        if e is None:
            raise PageFault(f"unmapped virtual block {vbn}")
        self.misses += 1
        if self.enabled:
            self.map[vbn] = e
            if len(self.map) > self.entries:
                self.map.popitem(last=False)
        return e, False


class Geo:
    """Address arithmetic shared by every flash-side module."""

    def __init__(self, g: Geometry):
        self.g = g
        self.C, self.K, self.D, self.P = g.channels, g.packages, g.dies, g.planes
        self.blocks = g.blocks
        self.pages = g.pages
        self.page_size = g.page_size
        self.block_bytes = g.block_bytes
        self.n_planes = g.total_planes
        self.ppp = g.planes_per_package  # planes per package
        self.sectors = g.sectors_per_page

    def plane_of_stripe(self, k: int) -> int:
        """Global plane id of the k-th striping slot (channel varies fastest)."""
        C, K, D, P = self.C, self.K, self.D, self.P
        ch = k % C
        pk = (k // C) % K
        die = (k // (C * K)) % D
        pl = (k // (C * K * D)) % P
        return self.plane_id(ch, pk, die, pl)

    def plane_id(self, ch: int, pk: int, die: int, pl: int) -> int:
        return ((ch * self.K + pk) * self.D + die) * self.P + pl

    def plane_coords(self, plane_id: int) -> tuple[int, int, int, int]:
        pl = plane_id % self.P
        die = (plane_id // self.P) % self.D
        pk = (plane_id // (self.P * self.D)) % self.K
        ch = plane_id // (self.P * self.D * self.K)
        return ch, pk, die, pl

    def package_of_plane(self, plane_id: int) -> int:
        return plane_id // self.ppp

    def block_address(self, pbn: int, page: int, role: str = DATA, page_index: int = 0) -> FlashAddress:
        plane_id, blk = divmod(pbn, self.blocks)
        ch, pk, die, pl = self.plane_coords(plane_id)
        return FlashAddress(ch, pk, die, pl, blk, page, role, page_index)


class Ftl:
    """DBMT + LBMT + TLB; translates virtual addresses to flash addresses."""

    def __init__(self, geometry: Geometry, array, tlb_entries: int = 128, tlb_enabled: bool = True):
        self.geo = Geo(geometry)
        self.array = array
        self.dbmt: dict[int, DbmtEntry] = {}
        self.by_pdbn: dict[int, int] = {}
        self.lbmt = Lbmt(geometry.group_size)
        self.tlb = Tlb(tlb_entries, tlb_enabled)
        self._next_lbn = 0
        self._open_group: dict[tuple[int, int], Group] = {}
        self._stripe_next = 0
        self.page_faults = 0

    # ---------------------------------------------------------- registration
    def register(self, app: int, vbns) -> None:
        """Pre-map an application's virtual blocks (sorted order, striped)."""
        geo = self.geo
        for vbn in sorted(set(int(v) for v in vbns)):
            if vbn in self.dbmt:
                continue
            k = self._stripe_next
            self._stripe_next = k + 1
            plane_id = geo.plane_of_stripe(k)
            pdbn = self.array.allocate_block(plane_id, role=DATA)
            group = self._open_group.get((app, plane_id))
            if group is None or len(group.members) >= self.lbmt.group_size:
                gid = len(self.lbmt.groups)
                group = Group(gid, plane_id, app)
                self.lbmt.groups[gid] = group
                self.lbmt.plbn[gid] = self.array.allocate_block(plane_id, role=LOG)
                self._open_group[(app, plane_id)] = group
            group.members.append(vbn)
            entry = DbmtEntry(vbn, self._next_lbn, pdbn, self.lbmt.plbn[group.gid], group.gid, app)
            self._next_lbn += 1
            self.dbmt[vbn] = entry
            self.by_pdbn[pdbn] = vbn

    # ------------------------------------------------------------ translation
    def translate(self, vaddr: int, op: int = 0, address: bool = True) -> TranslationResult:
        """MMU lookup; ``address=False`` skips building the physical address."""
        geo = self.geo
        vbn, off = divmod(vaddr, geo.block_bytes)
        try:
            e, hit = self.tlb.lookup(vbn, self.dbmt)
        except PageFault:
            self.page_faults += 1
            raise
        pidx = off // geo.page_size
        plane_id = e.pdbn // geo.blocks
        if not address:
            return TranslationResult(None, hit, e.pdbn, e.plbn, pidx, plane_id, e.group)
        if op:
            addr = geo.block_address(e.plbn, -1, LOG, pidx)
        else:
            addr = geo.block_address(e.pdbn, pidx, DATA, pidx)
        return TranslationResult(addr, hit, e.pdbn, e.plbn, pidx, plane_id, e.group)

    def entry(self, vbn: int) -> DbmtEntry:
        return self.dbmt[vbn]

    def group_of_pdbn(self, pdbn: int) -> int:
        vbn = self.by_pdbn.get(pdbn)
        if vbn is None:
            raise ConsistencyError(f"pdbn {pdbn} is not a live data block")
        return self.dbmt[vbn].group

    # -------------------------------------------------------------------- gc
    def apply_gc_result(self, merge) -> list[int]:
        """Point merged groups at their new blocks; return blocks to erase."""
        gid = merge.group
        if gid not in self.lbmt.plbn:
            raise ConsistencyError(f"unknown group {gid}")
        if self.lbmt.plbn[gid] != merge.plbn:
            raise ConsistencyError(f"group {gid} log block is {self.lbmt.plbn[gid]}, merge names {merge.plbn}")
        group = self.lbmt.groups[gid]
        for old, new in merge.relocations.items():
            vbn = self.by_pdbn.get(old)
            if vbn is None or self.dbmt[vbn].group != gid:
                raise ConsistencyError(f"merge references stale data block {old}")
            if new in self.by_pdbn:
                raise ConsistencyError(f"destination block {new} is already live")
        for old, new in merge.relocations.items():
            vbn = self.by_pdbn.pop(old)
            self.dbmt[vbn].pdbn = new
            self.by_pdbn[new] = vbn
        self.lbmt.plbn[gid] = merge.new_plbn
        for vbn in group.members:
            self.dbmt[vbn].plbn = merge.new_plbn
        return list(merge.relocations) + [merge.plbn]

    # ----------------------------------------------------------------- debug
    def dump_tables(self) -> dict:
        return {
            "dbmt": [{"vbn": e.vbn, "lbn": e.lbn, "pdbn": e.pdbn, "plbn": e.plbn, "group": e.group, "app": e.app}
                     for _, e in sorted(self.dbmt.items())],
            "lbmt": {"group_size": self.lbmt.group_size,
                     "groups": {str(g): {"plbn": p, "plane": self.lbmt.groups[g].plane_id,
                                         "app": self.lbmt.groups[g].app,
                                         "members": list(self.lbmt.groups[g].members)}
                                for g, p in sorted(self.lbmt.plbn.items())}},
        }


@dataclass(frozen=True)
class DbmtFootprint:
    blocks: int
    pages: int
    field_bits: int
    entry_bytes: int
    dbmt_bytes: int
    page_entry_bytes: int
    page_table_bytes: int

    @property
    def ratio(self) -> float:
        return self.page_table_bytes / self.dbmt_bytes


def _bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def dbmt_footprint(geometry: Geometry) -> DbmtFootprint:
    """Block-granularity DBMT size versus a flat page-granularity table.

    A DBMT entry is indexed by VBN and stores LBN, PDBN and PLBN, each
    wide enough to name any block. A page-level table stores one physical
    page number per logical page.
    """
    blocks = geometry.total_blocks
    pages = blocks * geometry.pages
    fb = _bits(blocks)
    entry = math.ceil(3 * fb / 8)
    pentry = math.ceil(_bits(pages) / 8)
    return DbmtFootprint(blocks, pages, fb, entry, blocks * entry, pentry, pages * pentry)


def geometry_for_capacity(capacity: int, base: Geometry | None = None) -> Geometry:
    """Scale the blocks-per-plane count so the device holds ``capacity`` bytes."""
    base = base or Geometry()
    per_block = base.block_bytes * base.total_planes
    return Geometry(**{**base.__dict__, "blocks": max(1, round(capacity / per_block))})


ONE_TB = 1024 * GB
