"""Training-dynamics properties checked on the desk-scale runs shared with the acceptance suite."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import DESK_SEEDS

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("seed", DESK_SEEDS)
def test_joint_loss_non_increasing_after_epoch_3(desk, seed):
    L = desk.run("full", seed).result.log.column("L")
    rises = [(e + 3, a, b) for e, (a, b) in enumerate(zip(L[2:], L[3:])) if b > a]
    assert not rises, rises


def test_zero_ranking_weight_leaves_other_heads_working(desk):
    full = desk.run("full", 7).report
    off = desk.run("full", 7, lambdas=(0.25, 0.0, 0.25)).report
    assert abs(off.overall["mrr"] - off.random_baseline["mrr"]) <= 0.1
    assert off.overall["mrr"] < full.overall["mrr"] - 0.3
    assert off.domain_identification["f1"] >= full.domain_identification["f1"] - 0.05
    assert off.generation["bleu4"] >= full.generation["bleu4"] - 0.05


def test_joint_beats_separate_training(desk):
    joint = np.mean([desk.run("full", s).report.overall["mrr"] for s in DESK_SEEDS])
    sep = np.mean([desk.run("separate", s).report.overall["mrr"] for s in DESK_SEEDS])
    assert joint >= sep


@pytest.mark.parametrize("seed", DESK_SEEDS)
def test_separate_members_reduce_their_losses(desk, seed):
    log = desk.run("separate", seed).result.log
    for key in ("L_dm", "L_rk", "L_dec"):
        col = log.column(key)[:10]
        assert col[-1] < col[0], (key, col)
