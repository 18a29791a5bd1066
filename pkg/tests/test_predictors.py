import itertools
import math
import numpy as np
import pytest
from classes.errors import ConfigError, DimensionError
from classes.numerics import grad_check, sigmoid
from classes.predictors import (DCNPredictor, DeepFMPredictor, MLPPredictor, PredictorConfig, bce, bce_logit_grad,
                                build_predictor, fm_second_order)


def _loss_and_grads(predictor, embeddings, labels):
    def loss_fn():
        predictor.zero_grad()
        p = predictor.predict(embeddings)
        d_embeddings = predictor.backward(bce_logit_grad(p, labels))
        return bce(p, labels), [d_embeddings] + [q.grad.copy() for q in predictor.parameters()]
    return loss_fn


@pytest.mark.parametrize("variant", ["mlp", "deepfm", "dcn"])
def test_backbone_gradients(variant, rng):
    predictor = build_predictor(PredictorConfig(variant, input_fields=3, emb_dim=2, hidden_dims=(5, 4)), seed=7)
    # zero offsets put an all-inactive row exactly on the ReLU kink
    for name, p in predictor.named_parameters():
        if name.rsplit(".", 1)[-1] in ("bias", "beta", "b"):
            p.value[...] = rng.uniform(0.1, 0.3, size=p.value.shape)
    embeddings = rng.normal(size=(6, 3, 2))
    labels = np.array([1, 0, 1, 1, 0, 0], dtype=np.float64)
    params = [embeddings] + [q.value for q in predictor.parameters()]
    assert grad_check(_loss_and_grads(predictor, embeddings, labels), params) < 1e-3


def test_fm_term_matches_pairwise_dot_products(rng):
    embeddings = rng.normal(size=(4, 5, 3))
    brute = np.array([sum(float(embeddings[b, i] @ embeddings[b, j]) for i, j in itertools.combinations(range(5), 2))
                      for b in range(4)])
    np.testing.assert_allclose(fm_second_order(embeddings), brute, rtol=0, atol=1e-10)


def test_predictor_classes_and_sizes(rng):
    for variant, cls in [("mlp", MLPPredictor), ("deepfm", DeepFMPredictor), ("dcn", DCNPredictor)]:
        predictor = build_predictor(PredictorConfig(variant, input_fields=4, emb_dim=3), seed=0)
        assert isinstance(predictor, cls)
        assert predictor.in_features == 12
        logits = predictor.forward(rng.normal(size=(2, 4, 3)))
        assert logits.shape == (2,)


def test_predictor_rejects_wrong_field_count(rng):
    predictor = build_predictor(PredictorConfig("mlp", input_fields=4, emb_dim=3), seed=0)
    with pytest.raises(DimensionError):
        predictor.forward(rng.normal(size=(2, 5, 3)))


def test_predictor_config_validation():
    with pytest.raises(ConfigError):
        PredictorConfig("transformer")
    with pytest.raises(ConfigError):
        PredictorConfig("mlp", hidden_dims=())
    with pytest.raises(ConfigError):
        PredictorConfig("dcn", n_cross_layers=0)
    assert PredictorConfig("MLP").variant == "mlp"


def test_bce_values():
    assert bce(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(math.log(2), abs=1e-15)
    assert bce(np.array([1.0]), np.array([1.0])) == pytest.approx(1e-7, rel=1e-6)
    assert math.isfinite(bce(np.array([0.0]), np.array([1.0])))



def test_bce_logit_grad_inside_and_beyond_the_clamp():
    logits = np.array([-1.5, 0.3, 2.0])
    labels = np.array([0.0, 1.0, 1.0])
    step = 1e-6
    numeric = np.empty(3)
    for i in range(3):
        up, down = logits.copy(), logits.copy()
        up[i] += step
        down[i] -= step
        numeric[i] = (bce(sigmoid(up), labels) - bce(sigmoid(down), labels)) / (2 * step)
    np.testing.assert_allclose(bce_logit_grad(sigmoid(logits), labels), numeric, rtol=0, atol=1e-8)
    # saturated past the clamp: the loss is flat but the gradient still points at the label
    saturated = np.array([1 - 1e-9, 1e-9])
    wrong = np.array([0.0, 1.0])
    np.testing.assert_allclose(bce_logit_grad(saturated, wrong), (saturated - wrong) / 2)
    assert bce_logit_grad(saturated, wrong)[0] > 0 > bce_logit_grad(saturated, wrong)[1]

def test_same_seed_same_weights():
    a = build_predictor(PredictorConfig("dcn", input_fields=2, emb_dim=2), seed=3)
    b = build_predictor(PredictorConfig("dcn", input_fields=2, emb_dim=2), seed=3)
    for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.value, q.value, err_msg=name)
