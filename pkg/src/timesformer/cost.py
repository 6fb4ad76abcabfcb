"""Closed-form parameter and FLOP accounting.

FLOPs are counted as multiply-accumulates: one MAC is one FLOP.  Softmax,
LayerNorm and activation costs are left out.  The attention term counts
both the query-key scores and the weighted sum of values, i.e.
``2 * D * (neighbourhood size)`` per querying token.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .attention import STAGES, cls_stage, comparisons_per_patch as _comparisons, projected_stages, stage_layout
from .config import ModelConfig, Scheme
from .embedding import PosMode
from .errors import ConfigurationError

log = logging.getLogger(__name__)

TERA = 1e12


@dataclass
class CostReport:
    params_total: int = 0
    params: dict[str, int] = field(default_factory=dict)
    flops_total: int = 0
    flops: dict[str, int] = field(default_factory=dict)
    views: int = 1
    comparisons_per_patch: int = 0

    @property
    def tflops(self) -> float:
        return self.flops_total / TERA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tflops"] = self.tflops
        return d


def _pos_rows(config: ModelConfig) -> int:
    g = config.grid
    return {PosMode.NONE: 0, PosMode.SPACE_ONLY: g.n + 1, PosMode.SPACE_TIME: g.tokens}[config.pos_mode]


def param_count(config: ModelConfig) -> CostReport:
    d, c, r, L = config.D, config.num_classes, config.mlp_ratio, config.L
    stages = STAGES[config.scheme]
    parts = {
        "embedding.patch": 3 * config.P ** 2 * d + d,
        "embedding.pos": _pos_rows(config) * d,
        "embedding.cls": d,
    }
    for s in stages:
        parts[f"blocks.{s}_attention"] = L * (4 * d * d + 4 * d)
        parts[f"blocks.{s}_ln"] = L * 2 * d
    if config.temporal_fc:
        for s in projected_stages(config.scheme):
            parts[f"blocks.{s}_fc"] = L * (d * d + d)
    parts["blocks.mlp"] = L * (2 * r * d * d + r * d + d)
    parts["blocks.mlp_ln"] = L * 2 * d
    parts["final_ln"] = 2 * d
    parts["head"] = d * d + d + d * c + c
    report = CostReport(params=parts, comparisons_per_patch=comparisons_per_patch(config.scheme, config))
    report.params_total = sum(parts.values())
    return report


def flop_count(config: ModelConfig, views: int = 1) -> CostReport:
    """Inference MACs for ``views`` crops of one clip, by component."""
    if views < 1:
        raise ConfigurationError(f"views must be positive, got {views}")
    d, c, r, L = config.D, config.num_classes, config.mlp_ratio, config.L
    g = config.grid
    t_all, t_patch = g.tokens, g.tokens - 1
    owner = cls_stage(config.scheme, config.stage_order)
    projected = projected_stages(config.scheme) if config.temporal_fc else ()

    per_view = {"embedding.patch": t_patch * 3 * config.P ** 2 * d}
    for s in STAGES[config.scheme]:
        keys = t_patch * stage_layout(s, g).neighborhood_size + (t_all if s == owner else 0)
        per_view[f"blocks.{s}_qkv"] = L * 3 * t_all * d * d
        per_view[f"blocks.{s}_attention"] = L * 2 * keys * d
        per_view[f"blocks.{s}_out"] = L * t_all * d * d
        if s in projected:
            per_view[f"blocks.{s}_fc"] = L * t_all * d * d
    per_view["blocks.mlp"] = L * 2 * r * t_all * d * d
    per_view["head"] = d * d + d * c

    flops = {k: v * views for k, v in per_view.items()}
    report = param_count(config)
    report.flops = flops
    report.flops_total = sum(flops.values())
    report.views = views
    return report


def comparisons_per_patch(scheme: Scheme | str, config: ModelConfig) -> int:
    return _comparisons(Scheme(scheme), config.grid)


SWEEP_SCHEMES = (Scheme.JOINT, Scheme.DIVIDED)


def sweep(axis: str, values: Iterable[int], config: ModelConfig, views: int = 1,
          schemes: Iterable[Scheme] = SWEEP_SCHEMES) -> list[tuple]:
    """Rows ``(value, scheme, tflops)``; indivisible crop sizes give a single skip row."""
    if axis not in ("frames", "crop"):
        raise ConfigurationError(f"sweep axis must be 'frames' or 'crop', got {axis!r}")
    rows: list[tuple] = []
    for v in values:
        if axis == "crop" and v % config.P:
            log.warning("crop %d is not divisible by patch size %d; skipped", v, config.P)
            rows.append((v, "skipped", float("nan")))
            continue
        cfg = config.replace(F=v) if axis == "frames" else config.replace(H=v, W=v)
        for s in schemes:
            rows.append((v, Scheme(s).value, flop_count(cfg.replace(scheme=s), views).tflops))
    return rows


def sweep_csv(rows: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "scheme", "tflops"])
    for value, scheme, tf in rows:
        w.writerow([value, scheme, f"{tf:.6g}"])
    return buf.getvalue()
