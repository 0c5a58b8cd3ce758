"""Shared fixtures: the pretrained source model and cached desk runs.

Pretraining and full desk streams are expensive, so they are computed once
per session and shared; tests must never mutate the returned nets in place
(clone first).
"""

from __future__ import annotations

import numpy as np
import pytest

from activeseg import adapter, metrics, numerics, streamlab
from activeseg.annotator import AnnotatorSpec
from activeseg.config import DESK_LR, desk_config


@pytest.fixture(scope="session")
def source_net():
    """Source model trained on clean scenes (desk defaults)."""
    train = streamlab.make_source_dataset(200, 5, 48, 48, seed=100)
    net = numerics.SegNet(numerics.standard_layers(3, (16, 16), 5), seed=0)
    numerics.pretrain(net, train, epochs=4, lr=3e-3, seed=0)
    return net


@pytest.fixture(scope="session")
def holdout_scenes():
    return streamlab.make_source_dataset(50, 5, 48, 48, seed=999)


class DeskLab:
    """Lazily computed, memoized desk-benchmark runs shared across tests."""

    def __init__(self, source_net):
        self.source_net = source_net
        self._streams = {}
        self._runs = {}
        self._frozen = {}

    def stream(self, seed, frames_per_domain=200):
        key = (seed, frames_per_domain)
        if key not in self._streams:
            cfg = desk_config()
            from dataclasses import replace

            stream_cfg = replace(cfg.stream, frames_per_domain=frames_per_domain)
            spec = stream_cfg.to_stream_spec(seed)
            self._streams[key] = (streamlab.build_stream(spec), spec.domain_ids())
        return self._streams[key]

    def run(self, adapter_kind, annotator_kind, budget, seed,
            frames_per_domain=200, lr=DESK_LR):
        key = (adapter_kind, annotator_kind, budget, seed, frames_per_domain, lr)
        if key not in self._runs:
            scenes, domain_ids = self.stream(seed, frames_per_domain)
            session = adapter.Session(
                self.source_net.clone(),
                numerics.AdamState.fresh(self.source_net.n_params, lr=lr),
                seed=seed)
            result = adapter.run_stream(
                session, scenes, domain_ids,
                adapter.AdapterSpec(kind=adapter_kind, budget=budget),
                AnnotatorSpec(kind=annotator_kind), adapter.SimulatedOracle())
            self._runs[key] = (result, session)
        return self._runs[key]

    def frozen_domain_mious(self, seed, frames_per_domain=200):
        key = (seed, frames_per_domain)
        if key not in self._frozen:
            scenes, domain_ids = self.stream(seed, frames_per_domain)
            per_domain = []
            cum = metrics.ConfusionMatrix(5)
            for d in sorted(set(int(x) for x in domain_ids)):
                idx = np.where(domain_ids == d)[0]
                cm = metrics.evaluate_frozen(self.source_net,
                                             [scenes[i] for i in idx], 5)
                per_domain.append(metrics.miou(cm)[1])
                cum.merge(cm)
            self._frozen[key] = (per_domain, metrics.miou(cum)[1])
        return self._frozen[key]


@pytest.fixture(scope="session")
def desk_lab(source_net):
    return DeskLab(source_net)


def miou_of_records(records):
    return records[-1].miou_cum


def final_domain_miou(records):
    last_domain = records[-1].domain_id
    return [r for r in records if r.domain_id == last_domain][-1].miou_domain


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"{name}: {'PASS' if passed else 'FAIL'}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
