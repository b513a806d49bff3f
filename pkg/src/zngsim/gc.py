"""Log-block merge garbage collection.

A merge rewrites every data block of the group that has logged pages
into a fresh block of the same plane (latest copy of each page, in page
order), allocates an empty log block, and erases the old blocks. Data
blocks with nothing logged keep their place. All flash work of a merge
is serial on the group's plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ftl import DATA, LOG, Ftl
from .znand import ZNandArray


@dataclass
class GcMerge:
    group: int
    app: int
    plane_id: int
    plbn: int
    sources: list = field(default_factory=list)
    relocations: dict = field(default_factory=dict)     # old pdbn -> new pdbn
    resolved: dict = field(default_factory=dict)        # (old pdbn, page) -> source ppn
    new_plbn: int = -1
    pages_moved: int = 0
    blocks_erased: int = 0
    start: int = 0
    end: int = 0

    def log_row(self) -> dict:
        return {"group": self.group, "app": self.app, "plane": self.plane_id, "start": self.start,
                "end": self.end, "pages_moved": self.pages_moved, "blocks_erased": self.blocks_erased}


def run_gc(gid: int, ftl: Ftl, array: ZNandArray, now: int, not_before: int = 0) -> GcMerge:
    """Merge group ``gid`` and update the mapping tables.

    Work starts in the first plane gap long enough for the whole merge,
    no earlier than ``not_before`` (the owner's last in-flight completion).
    The merge is not booked on the plane: it yields to other applications'
    commands (program/erase suspend) and its length is not stretched by
    them. The owner is kept off the flash until ``end`` by the caller.
    """
    group = ftl.lbmt.groups[gid]
    plbn = ftl.lbmt.plbn[gid]
    plane = group.plane_id
    pages = array.geo.pages
    lp = array.lpmt[plbn]
    logged: dict[int, list[int]] = {}
    for key in lp.index:
        logged.setdefault(key // pages, []).append(key % pages)

    merge = GcMerge(gid, group.app, plane, plbn)
    copies = 0
    for vbn in group.members:
        pdbn = ftl.dbmt[vbn].pdbn
        merge.sources.append(pdbn)
        if pdbn not in logged:
            continue
        new = array.allocate_block(plane, DATA, enforce_limit=False)
        for pidx in range(pages):
            ppn, content = array.resolve(pdbn, pidx, plbn)
            if content is None:
                continue
            array.program(new, pidx, content)
            merge.resolved[(pdbn, pidx)] = ppn
            copies += 1
        merge.relocations[pdbn] = new
    merge.new_plbn = array.allocate_block(plane, LOG)
    merge.pages_moved = copies
    array.reads[plane] += copies

    erasable = ftl.apply_gc_result(merge)
    for pbn in erasable:
        array.erase(pbn, None)
    busy = copies * (array.t_read + array.t_program) + len(erasable) * array.t_erase
    merge.blocks_erased = len(erasable)
    merge.start = array.planes[plane].probe(max(now, not_before), busy)
    array.gc_cycles[plane] = array.gc_cycles.get(plane, 0) + busy
    merge.end = merge.start + busy
    return merge
