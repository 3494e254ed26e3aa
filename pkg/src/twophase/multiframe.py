"""Combine two overlapping stratified sampling frames into one weighted set.

Records eligible for both frames are duplicated: the primary-frame draw
carries weight ``phi/pi_P`` and the secondary-frame draw
``(1-phi)/pi_S`` with ``phi = pi_P / (pi_P + pi_S)``, so each dual-frame
record contributes expected total weight exactly one (Hansen-Hurwitz).
Variance estimation clusters the duplicated rows by source record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FrameRow", "FrameWeights", "combine_frames", "variance_groups"]


@dataclass(frozen=True)
class FrameRow:
    """One analysis row in the combined frame."""

    record_id: str
    frame: str
    weight: float
    stratum: str
    duplicated: bool


@dataclass
class FrameWeights:
    """Combined-frame rows in a fixed, reproducible order."""

    rows: list[FrameRow]

    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rows], dtype=np.float64)

    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.rows]

    def strata_keys(self) -> np.ndarray:
        return np.array([f"{r.frame}:{r.stratum}" for r in self.rows])

    def cluster_ids(self) -> np.ndarray:
        return np.array([r.record_id for r in self.rows])


def combine_frames(primary_frame: str, secondary_frame: str,
                   pi_primary: dict[str, float], pi_secondary: dict[str, float],
                   sampled_primary: dict[str, str], sampled_secondary: dict[str, str],
                   ) -> FrameWeights:
    """Build Hansen-Hurwitz rows from two independent stratified samples.

    Parameters
    ----------
    pi_primary : sampling probability per primary-frame member id.
    pi_secondary : sampling probability per secondary-frame member id
        (its keys define dual-frame membership; the secondary frame must
        be a subset of the primary frame).
    sampled_primary, sampled_secondary : drawn record id -> design
        stratum id, one entry per draw in that frame.

    A record drawn in both frames contributes one row per frame, flagged
    ``duplicated``; its single set of validated values backs both rows.
    """
    missing = set(pi_secondary) - set(pi_primary)
    if missing:
        raise ValueError(
            f"secondary frame is not a subset of the primary frame: {sorted(missing)[:3]}")
    for name, sampled, pi in ((primary_frame, sampled_primary, pi_primary),
                              (secondary_frame, sampled_secondary, pi_secondary)):
        for rid in sampled:
            p = pi.get(rid)
            if p is None:
                raise ValueError(f"no sampling probability for {rid!r} in frame {name!r}")
            if not 0 < p <= 1:
                raise ValueError(f"pi for {rid!r} in frame {name!r} must lie in (0, 1]")

    rows = []
    for rid in sorted(sampled_primary):
        p_o = pi_primary[rid]
        dual = rid in pi_secondary
        if dual:
            phi = p_o / (p_o + pi_secondary[rid])
            weight = phi / p_o
        else:
            weight = 1.0 / p_o
        rows.append(FrameRow(rid, primary_frame, weight,
                             sampled_primary[rid], dual))
    for rid in sorted(sampled_secondary):
        p_a = pi_secondary[rid]
        p_o = pi_primary[rid]
        phi = p_o / (p_o + p_a)
        w_o, w_a = phi / p_o, (1.0 - phi) / p_a
        # Expected-weight identity: pi_O*(phi/pi_O) + pi_A*((1-phi)/pi_A) == 1.
        assert abs(p_o * w_o + p_a * w_a - 1.0) < 1e-12
        rows.append(FrameRow(rid, secondary_frame, w_a,
                             sampled_secondary[rid], True))
    return FrameWeights(rows=rows)


def variance_groups(fw: FrameWeights) -> tuple[np.ndarray, np.ndarray]:
    """Variance clustering for the combined frame.

    Returns ``(strata_keys, cluster_ids)`` for
    :func:`twophase.models.sandwich_variance`: rows that share a source
    record form one cluster whose influence is summed before the
    between-record step; each row keeps its own frame's design stratum.
    """
    return fw.strata_keys(), fw.cluster_ids()
