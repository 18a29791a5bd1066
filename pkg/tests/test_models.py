import numpy as np
import pytest
from classes.errors import ConfigError
from classes.models import AdaFSModel, FullFieldModel, ModelPair, build_model
from classes.numerics import grad_check
from classes.train_config import TrainConfig

VOCAB6 = [4, 3, 5, 4, 3, 4]


def _batch(vocab_sizes, batch, seed):
    rng = np.random.default_rng(seed)
    ids = np.stack([rng.integers(0, v, size=batch) for v in vocab_sizes], axis=1)
    labels = (rng.random(batch) < 0.5).astype(np.float64)
    labels[:2] = [0.0, 1.0]
    return ids, labels


def _joint_loss(model, ids, labels, params, **switches):
    def loss_fn():
        model.zero_grad()
        trace = model.forward(ids, training=True)
        losses = model.backward(trace, labels, **switches)
        return losses["total"], [p.grad.copy() for p in params]
    return loss_fn


@pytest.mark.parametrize("backbone_main, backbone_aux", [("mlp", "mlp"), ("deepfm", "mlp"), ("dcn", "deepfm"),
                                                         ("mlp", "dcn")])
def test_full_objective_gradient(backbone_main, backbone_aux):
    model = ModelPair(VOCAB6, d1=6, d2=2, k=3, backbone_main=backbone_main, backbone_aux=backbone_aux,
                      hidden_dims=(4,), seed=11)
    ids, labels = _batch(VOCAB6, 8, seed=5)
    params = model.joint_parameters()
    error = grad_check(_joint_loss(model, ids, labels, params), [p.value for p in params])
    assert error < 1e-3


@pytest.mark.parametrize("enable_eal, enable_pal, reweight", [(False, False, True), (True, False, False),
                                                              (False, True, False)])
def test_objective_gradient_under_ablations(enable_eal, enable_pal, reweight):
    model = ModelPair(VOCAB6, d1=6, d2=2, k=3, reweight=reweight, hidden_dims=(4,), seed=2)
    ids, labels = _batch(VOCAB6, 8, seed=9)
    params = model.joint_parameters()
    loss_fn = _joint_loss(model, ids, labels, params, enable_eal=enable_eal, enable_pal=enable_pal)
    assert grad_check(loss_fn, [p.value for p in params]) < 1e-3


def test_loss_components_follow_switches():
    model = ModelPair(VOCAB6, d1=6, d2=2, k=3, hidden_dims=(4,), seed=2)
    ids, labels = _batch(VOCAB6, 8, seed=1)
    full = model.backward(model.forward(ids), labels)
    assert set(full) == {"bce_a", "bce_m", "eal", "pal", "total"}
    assert all(v >= 0 for v in full.values())
    assert full["total"] == pytest.approx(full["bce_a"] + full["bce_m"] + full["eal"] + full["pal"])
    bare = model.backward(model.forward(ids), labels, enable_eal=False, enable_pal=False)
    assert set(bare) == {"bce_a", "bce_m", "total"}


@pytest.mark.parametrize("mode", ["soft", "hard"])
def test_late_selection_gradient(mode):
    model = AdaFSModel(VOCAB6, emb_dim=3, mode=mode, k=3, hidden_dims=(4,), seed=4)
    ids, labels = _batch(VOCAB6, 8, seed=3)
    params = model.joint_parameters()
    assert grad_check(_joint_loss(model, ids, labels, params), [p.value for p in params]) < 1e-3


def test_pretraining_gradient():
    model = ModelPair(VOCAB6, d1=6, d2=2, k=3, hidden_dims=(4,), seed=8)
    ids, labels = _batch(VOCAB6, 8, seed=8)
    params = model.pretrain_parameters()

    def loss_fn():
        model.zero_grad()
        trace = model.pretrain_forward(ids)
        return model.pretrain_backward(trace, labels)["total"], [p.grad.copy() for p in params]

    assert grad_check(loss_fn, [p.value for p in params]) < 1e-3


def test_lookup_counts_per_instance():
    vocab = [5] * 16
    ids, _ = _batch(vocab, 10, seed=0)
    pair = ModelPair(vocab, d1=4, d2=2, k=8, hidden_dims=(4,), seed=0)
    trace = pair.forward(ids)
    assert pair.main_embeddings.total_lookups == 8 * 10
    assert pair.aux_embeddings.total_lookups == 16 * 10
    assert trace.activated_fields.shape == (10, 8)
    late = AdaFSModel(vocab, emb_dim=4, mode="hard", k=8, hidden_dims=(4,), seed=0)
    late.forward(ids)
    assert late.main_embeddings.total_lookups == 16 * 10
    baseline = FullFieldModel(vocab, emb_dim=4, hidden_dims=(4,), seed=0)
    baseline.forward(ids)
    assert baseline.main_embeddings.total_lookups == 16 * 10


def test_identical_models_predict_identically():
    pair = ModelPair(VOCAB6, d1=3, d2=3, k=3, hidden_dims=(4,), seed=6)
    pair.main_embeddings.load_state_dict(pair.aux_embeddings.state_dict())
    pair.main_predictor.load_state_dict(pair.aux_predictor.state_dict())
    ids, _ = _batch(VOCAB6, 5, seed=6)
    trace = pair.forward(ids, training=False)
    np.testing.assert_array_equal(trace.p_aux, trace.p_main)


def test_uniform_scores_select_a_fixed_half():
    pair = ModelPair(VOCAB6, d1=4, d2=2, k=3, hidden_dims=(4,), seed=1)
    pair.controller.fc.weight.value[...] = 0.0
    pair.controller.fc.bias.value[...] = 0.0
    ids, _ = _batch(VOCAB6, 7, seed=1)
    trace = pair.forward(ids)
    np.testing.assert_array_equal(trace.selection.indices, np.tile([0, 1, 2], (7, 1)))
    np.testing.assert_allclose(trace.selection.weights, 1.0 / 3)


def test_hard_selection_of_every_field_equals_soft_selection():
    soft = AdaFSModel(VOCAB6, emb_dim=3, mode="soft", hidden_dims=(4,), seed=13)
    hard = AdaFSModel(VOCAB6, emb_dim=3, mode="hard", k=6, hidden_dims=(4,), seed=13)
    ids, _ = _batch(VOCAB6, 6, seed=13)
    np.testing.assert_allclose(soft.predict(ids), hard.predict(ids), rtol=1e-12, atol=1e-14)


def test_hard_selection_zeroes_dropped_fields():
    model = AdaFSModel(VOCAB6, emb_dim=3, mode="hard", k=2, hidden_dims=(4,), seed=13)
    ids, _ = _batch(VOCAB6, 6, seed=2)
    trace = model.forward(ids)
    kept = np.zeros((6, 6), dtype=bool)
    np.put_along_axis(kept, trace.selection.indices, True, axis=1)
    assert not trace.main_selected[~kept].any()
    assert trace.main_selected[kept].any()


def test_pretrain_head_is_outside_the_joint_optimizer():
    pair = ModelPair(VOCAB6, d1=4, d2=2, k=3, hidden_dims=(4,), seed=1)
    joint = {id(p) for p in pair.joint_parameters()}
    head = {id(p) for p in pair.pretrain_head.parameters()}
    assert joint.isdisjoint(head)
    assert len(joint) + len(head) == len(pair.parameters())
    pretrain = {id(p) for p in pair.pretrain_parameters()}
    assert pretrain.isdisjoint({id(p) for p in pair.main_embeddings.parameters()})


def test_build_model_dispatch_and_determinism():
    config = TrainConfig(d1=4, d2=2, r=0.5, hidden_dims=(4,), seed=3)
    for method, cls in [("none", FullFieldModel), ("random", FullFieldModel), ("adafs", AdaFSModel),
                        ("aefs", ModelPair)]:
        a = build_model(config.with_overrides(method=method), VOCAB6)
        b = build_model(config.with_overrides(method=method), VOCAB6)
        assert isinstance(a, cls) and a.method == method
        for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(p.value, q.value, err_msg=name)
    random_model = build_model(config.with_overrides(method="random"), VOCAB6)
    assert len(random_model.fields) == 3
    assert list(random_model.fields) == sorted(random_model.fields)
    ids, _ = _batch(VOCAB6, 4, seed=0)
    trace = random_model.forward(ids)
    np.testing.assert_array_equal(trace.activated_fields, np.tile(random_model.fields, (4, 1)))
    assert random_model.main_embeddings.total_lookups == 12


def test_invalid_pair_dimensions():
    with pytest.raises(ConfigError):
        ModelPair(VOCAB6, d1=2, d2=4)
    with pytest.raises(ConfigError):
        ModelPair(VOCAB6, d1=4, d2=2, k=7)
    with pytest.raises(ConfigError):
        AdaFSModel(VOCAB6, emb_dim=2, mode="hard")
