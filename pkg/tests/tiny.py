"""A deliberately small planted world for fast training tests."""

import numpy as np

from conceptlogic.model import ConceptLogicClassifier
from conceptlogic.world import WorldConfig, generate_world, planted_matrix, planted_vocabulary, train_test_split_world


def tiny_world(seed=0, n_train=96, n_test=48):
    vocab = planted_vocabulary(8, n_temporal=2)
    matrix = planted_matrix(vocab, 4, seed, density=0.4)
    cfg = WorldConfig(T=4, V=6, D=8, num_actions=4, vocabulary=vocab, matrix=matrix, text_dim=6)
    world = generate_world(cfg, seed)
    train, test = train_test_split_world(world, n_train, n_test, seed)
    return world, train, test


def tiny_model(world, **kw):
    opts = dict(groups_spatial=2, groups_sequence=2, hidden=6, align_dim=4, nodes=(6, 6), epochs=6,
                batch_size=16, encoder_warmup_epochs=1, logic_frozen_epochs=3, random_state=0)
    opts.update(kw)
    return ConceptLogicClassifier(world.vocabulary, world.matrix, world.config.part_map, **opts)
