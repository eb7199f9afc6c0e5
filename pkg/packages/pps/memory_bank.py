"""
Per-frame memory of stabilized proposals.

Each frame holds at most one generation: storing a frame replaces its previous
entry. Confidences are kept as they were before the lambda reweighting, so the
current lambda_t can be applied on every read.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Tuple, Union

from packages.geometry.boxes import Proposal, ProposalSet, View
from packages.geometry.records import read_proposal_sets, write_proposal_sets


@dataclass(frozen=True)
class MemoryBank:
    entries: Mapping[int, Tuple[Proposal, ...]] = field(default_factory=dict)
    policy: str = "replace"

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, frame_id: int) -> bool:
        return frame_id in self.entries

    def get(self, frame_id: int) -> Tuple[Proposal, ...]:
        return tuple(self.entries.get(frame_id, ()))

    def as_set(self, frame_id: int) -> ProposalSet:
        return ProposalSet(frame_id, View.MULTI, self.get(frame_id))

    def store(self, proposals: ProposalSet) -> "MemoryBank":
        return self.store_all([proposals])

    def store_all(self, sets: Iterable[ProposalSet]) -> "MemoryBank":
        """Copy of the bank with every given frame's entry replaced"""
        entries: Dict[int, Tuple[Proposal, ...]] = dict(self.entries)
        for s in sets:
            entries[s.frame_id] = tuple(s.items)
        return MemoryBank(entries, self.policy)

    def frame_ids(self):
        return sorted(self.entries)


def save_bank(bank: MemoryBank, path: Union[str, Path]) -> Path:
    return write_proposal_sets(path, (bank.as_set(fid) for fid in bank.frame_ids()))


def load_bank(path: Union[str, Path]) -> MemoryBank:
    sets = read_proposal_sets(path)
    return MemoryBank({fid: s.items for fid, s in sets.items()})
