"""Model assemblies trained by the Trainer.

``FullFieldModel``   main model only, on all fields or on a fixed field subset
``AdaFSModel``       late selection: embed all N fields, score, then scale/mask
``ModelPair``        early selection: a small auxiliary model picks k fields
                     per instance, the main model embeds only those
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence
import numpy as np
from keys import Keys
from classes.embedding import EmbeddingSet
from classes.errors import ConfigError
from classes.layers import Controller, Layer, Linear
from classes.numerics import SeedLike, affine_forward, as_generator, sigmoid
from classes.predictors import PredictorConfig, bce, bce_logit_grad, build_predictor
from classes.selection import (SelectionResult, embedding_alignment_loss, gather_fields, keep_count,
                               l1_normalize_backward, prediction_alignment_loss, scale_backward,
                               scale_embeddings, scatter_fields, select)


@dataclass
class ForwardTrace:
    p_main: np.ndarray
    activated_fields: np.ndarray
    scores: Optional[np.ndarray] = None
    selection: Optional[SelectionResult] = None
    aux_selected: Optional[np.ndarray] = None
    main_selected: Optional[np.ndarray] = None
    p_aux: Optional[np.ndarray] = None
    cache: Dict[str, np.ndarray] = field(default_factory=dict)


class CTRModel(Layer):
    method = ""

    def __init__(self):
        super().__init__()
        self.main_embeddings: Optional[EmbeddingSet] = None
        self.aux_embeddings: Optional[EmbeddingSet] = None

    def forward(self, ids: np.ndarray, training: bool = True) -> ForwardTrace:
        raise NotImplementedError

    def backward(self, trace: ForwardTrace, labels: np.ndarray, enable_eal: bool = True,
                 enable_pal: bool = True) -> Dict[str, float]:
        """Accumulates gradients of the training objective; returns its components"""
        raise NotImplementedError

    def joint_parameters(self):
        return self.parameters()

    def selected_fields(self, trace: ForwardTrace) -> Optional[np.ndarray]:
        """Per-instance field subset the model chose, None when it keeps every field"""
        return None if trace.selection is None else trace.selection.indices

    def predict(self, ids: np.ndarray) -> np.ndarray:
        return self.forward(ids, training=False).p_main


class FullFieldModel(CTRModel):
    """No-selection baseline, or main model restricted to a fixed field subset"""

    def __init__(self, vocab_sizes: Sequence[int], emb_dim: int, backbone: str = "mlp",
                 fields: Optional[Sequence[int]] = None, hidden_dims=Keys.HIDDEN_DIMS,
                 n_cross_layers: int = Keys.CROSS_LAYERS, seed: SeedLike = None):
        super().__init__()
        rng = as_generator(seed)
        n_fields = len(vocab_sizes)
        self.fields = None if fields is None else np.asarray(sorted(int(f) for f in fields), dtype=np.int64)
        self.method = "none" if fields is None else "random"
        width = n_fields if self.fields is None else len(self.fields)
        self.main_embeddings = self.add_child("main_embeddings", EmbeddingSet(vocab_sizes, emb_dim, rng))
        self.predictor = self.add_child("predictor", build_predictor(
            PredictorConfig(backbone, width, emb_dim, hidden_dims, n_cross_layers), rng))

    def forward(self, ids, training=True):
        self.train(training)
        if self.fields is None:
            embeddings = self.main_embeddings.embed(ids)
            activated = np.broadcast_to(np.arange(self.main_embeddings.n_fields), (ids.shape[0], self.main_embeddings.n_fields))
        else:
            activated = np.broadcast_to(self.fields, (ids.shape[0], len(self.fields)))
            embeddings = self.main_embeddings.embed_selected(ids, activated)
        p = sigmoid(self.predictor.forward(embeddings))
        return ForwardTrace(p_main=p, activated_fields=activated, main_selected=embeddings)

    def selected_fields(self, trace):
        return None if self.fields is None else trace.activated_fields

    def backward(self, trace, labels, enable_eal=True, enable_pal=True):
        d_embeddings = self.predictor.backward(bce_logit_grad(trace.p_main, labels))
        if self.fields is None:
            self.main_embeddings.backward(d_embeddings)
        else:
            self.main_embeddings.backward_selected(d_embeddings)
        loss = bce(trace.p_main, labels)
        return {"bce_m": loss, "total": loss}


class AdaFSModel(CTRModel):
    """Late selection: the controller scores embeddings that were all looked up"""

    method = "adafs"

    def __init__(self, vocab_sizes: Sequence[int], emb_dim: int, mode: str = "soft", k: Optional[int] = None,
                 backbone: str = "mlp", reweight: bool = True, hidden_dims=Keys.HIDDEN_DIMS,
                 n_cross_layers: int = Keys.CROSS_LAYERS, seed: SeedLike = None):
        super().__init__()
        if mode not in Keys.MODES:
            raise ConfigError(f"unknown selection mode {mode!r}")
        if mode == "hard" and k is None:
            raise ConfigError("hard selection needs k")
        rng = as_generator(seed)
        n_fields = len(vocab_sizes)
        self.mode = mode
        self.k = k
        self.reweight = reweight
        self.main_embeddings = self.add_child("main_embeddings", EmbeddingSet(vocab_sizes, emb_dim, rng))
        self.controller = self.add_child("controller", Controller(n_fields, emb_dim, rng))
        self.predictor = self.add_child("predictor", build_predictor(
            PredictorConfig(backbone, n_fields, emb_dim, hidden_dims, n_cross_layers), rng))

    def forward(self, ids, training=True):
        self.train(training)
        embeddings = self.main_embeddings.embed(ids)
        n_fields = embeddings.shape[1]
        scores = self.controller.forward(embeddings)
        selection = None
        if self.mode == "soft":
            weights = scores
        else:
            selection = select(scores, self.k, self.reweight)
            weights = scatter_fields(selection.weights, selection.indices, n_fields)
        scaled = scale_embeddings(embeddings, weights)
        p = sigmoid(self.predictor.forward(scaled))
        activated = np.broadcast_to(np.arange(n_fields), (ids.shape[0], n_fields))
        return ForwardTrace(p_main=p, activated_fields=activated, scores=scores, selection=selection,
                            main_selected=scaled, cache={"embeddings": embeddings, "weights": weights})

    def backward(self, trace, labels, enable_eal=True, enable_pal=True):
        embeddings, weights = trace.cache["embeddings"], trace.cache["weights"]
        d_scaled = self.predictor.backward(bce_logit_grad(trace.p_main, labels))
        d_embeddings, d_weights = scale_backward(d_scaled, embeddings, weights)
        if self.mode == "soft":
            d_scores = d_weights
        else:
            indices = trace.selection.indices
            d_selected = np.take_along_axis(d_weights, indices, axis=-1)
            if self.reweight:
                total = np.take_along_axis(trace.scores, indices, axis=-1).sum(axis=-1, keepdims=True)
                d_selected = l1_normalize_backward(d_selected, trace.selection.weights, total)
            d_scores = scatter_fields(d_selected, indices, embeddings.shape[1])
        d_embeddings = d_embeddings + self.controller.backward(d_scores)
        self.main_embeddings.backward(d_embeddings)
        loss = bce(trace.p_main, labels)
        return {"bce_m": loss, "total": loss}


class ModelPair(CTRModel):
    """Auxiliary model (d2, controller, predictor over k slots, d2->d1 map) and main model (d1)"""

    method = "aefs"

    def __init__(self, vocab_sizes: Sequence[int], d1: int = Keys.D_MAIN, d2: int = Keys.D_AUX,
                 k: Optional[int] = None, backbone_main: str = "mlp", backbone_aux: str = "mlp",
                 reweight: bool = True, hidden_dims=Keys.HIDDEN_DIMS, n_cross_layers: int = Keys.CROSS_LAYERS,
                 seed: SeedLike = None):
        super().__init__()
        if not 0 < d2 <= d1:
            raise ConfigError(f"need 0 < d2 <= d1, got d1={d1}, d2={d2}")
        rng = as_generator(seed)
        n_fields = len(vocab_sizes)
        self.k = keep_count(n_fields, Keys.KEEP_RATIO) if k is None else int(k)
        if not 1 <= self.k <= n_fields:
            raise ConfigError(f"k must lie in [1, {n_fields}], got {self.k}")
        self.d1, self.d2 = d1, d2
        self.reweight = reweight
        self.aux_embeddings = self.add_child("aux_embeddings", EmbeddingSet(vocab_sizes, d2, rng))
        self.controller = self.add_child("controller", Controller(n_fields, d2, rng))
        self.aux_predictor = self.add_child("aux_predictor", build_predictor(
            PredictorConfig(backbone_aux, self.k, d2, hidden_dims, n_cross_layers), rng))
        self.fc = self.add_child("fc", Linear(d2, d1, rng))
        self.main_embeddings = self.add_child("main_embeddings", EmbeddingSet(vocab_sizes, d1, rng))
        self.main_predictor = self.add_child("main_predictor", build_predictor(
            PredictorConfig(backbone_main, self.k, d1, hidden_dims, n_cross_layers), rng))
        # only used by pretraining, where the auxiliary model sees all N fields
        self.pretrain_head = self.add_child("pretrain_head", build_predictor(
            PredictorConfig(backbone_aux, n_fields, d2, hidden_dims, n_cross_layers), rng))

    @property
    def n_fields(self) -> int:
        return self.aux_embeddings.n_fields

    def joint_parameters(self):
        head = {id(p) for p in self.pretrain_head.parameters()}
        return [p for p in self.parameters() if id(p) not in head]

    def forward(self, ids, training=True):
        self.train(training)
        aux_all = self.aux_embeddings.embed(ids)
        scores = self.controller.forward(aux_all)
        selection = select(scores, self.k, self.reweight)
        aux_raw = gather_fields(aux_all, selection.indices)
        aux_selected = scale_embeddings(aux_raw, selection.weights)
        p_aux = sigmoid(self.aux_predictor.forward(aux_selected))
        main_raw = self.main_embeddings.embed_selected(ids, selection.indices)
        # the same W scales both sides
        main_selected = scale_embeddings(main_raw, selection.weights)
        p_main = sigmoid(self.main_predictor.forward(main_selected))
        return ForwardTrace(p_main=p_main, activated_fields=selection.indices, scores=scores,
                            selection=selection, aux_selected=aux_selected, main_selected=main_selected,
                            p_aux=p_aux, cache={"aux_raw": aux_raw, "main_raw": main_raw})

    def backward(self, trace, labels, enable_eal=True, enable_pal=True):
        weights, indices = trace.selection.weights, trace.selection.indices
        losses = {"bce_a": bce(trace.p_aux, labels), "bce_m": bce(trace.p_main, labels)}
        d_logit_aux = bce_logit_grad(trace.p_aux, labels)
        d_logit_main = bce_logit_grad(trace.p_main, labels)
        d_aux_selected = np.zeros_like(trace.aux_selected)
        d_main_selected = np.zeros_like(trace.main_selected)
        if enable_eal:
            losses["eal"], d_aux, d_main = embedding_alignment_loss(trace.aux_selected, trace.main_selected, self.fc)
            d_aux_selected += d_aux
            d_main_selected += d_main
        if enable_pal:
            losses["pal"], d_p_aux, d_p_main = prediction_alignment_loss(trace.p_aux, trace.p_main)
            d_logit_aux = d_logit_aux + d_p_aux * trace.p_aux * (1.0 - trace.p_aux)
            d_logit_main = d_logit_main + d_p_main * trace.p_main * (1.0 - trace.p_main)
        d_aux_selected += self.aux_predictor.backward(d_logit_aux)
        d_main_selected += self.main_predictor.backward(d_logit_main)
        d_aux_raw, d_weights_aux = scale_backward(d_aux_selected, trace.cache["aux_raw"], weights)
        d_main_raw, d_weights_main = scale_backward(d_main_selected, trace.cache["main_raw"], weights)
        self.main_embeddings.backward_selected(d_main_raw)
        d_weights = d_weights_aux + d_weights_main
        if self.reweight:
            total = np.take_along_axis(trace.scores, indices, axis=-1).sum(axis=-1, keepdims=True)
            d_weights = l1_normalize_backward(d_weights, weights, total)
        d_scores = scatter_fields(d_weights, indices, self.n_fields)
        d_aux_all = scatter_fields(d_aux_raw, indices, self.n_fields) + self.controller.backward(d_scores)
        self.aux_embeddings.backward(d_aux_all)
        losses["total"] = sum(losses.values())
        return losses

    def alignment_gaps(self, trace: ForwardTrace) -> Dict[str, float]:
        """Forward-only embedding and prediction discrepancies between the two models"""
        batch, k, d2 = trace.aux_selected.shape
        mapped = affine_forward(trace.aux_selected.reshape(batch * k, d2), self.fc.weight.value, self.fc.bias.value)
        diff = mapped.reshape(trace.main_selected.shape) - trace.main_selected
        return {"embedding_gap": float(np.mean(diff * diff)),
                "prediction_gap": float(np.mean((trace.p_aux - trace.p_main) ** 2))}

    # ------------------------------------------------------------ pretraining

    def pretrain_forward(self, ids: np.ndarray) -> ForwardTrace:
        self.train(True)
        aux_all = self.aux_embeddings.embed(ids)
        scores = self.controller.forward(aux_all)
        scaled = scale_embeddings(aux_all, scores)
        p = sigmoid(self.pretrain_head.forward(scaled))
        activated = np.broadcast_to(np.arange(self.n_fields), (ids.shape[0], self.n_fields))
        return ForwardTrace(p_main=p, activated_fields=activated, scores=scores, cache={"aux_all": aux_all})

    def pretrain_backward(self, trace: ForwardTrace, labels: np.ndarray) -> Dict[str, float]:
        aux_all = trace.cache["aux_all"]
        d_scaled = self.pretrain_head.backward(bce_logit_grad(trace.p_main, labels))
        d_aux_all, d_scores = scale_backward(d_scaled, aux_all, trace.scores)
        d_aux_all = d_aux_all + self.controller.backward(d_scores)
        self.aux_embeddings.backward(d_aux_all)
        loss = bce(trace.p_main, labels)
        return {"bce_a": loss, "total": loss}

    def pretrain_parameters(self):
        return (self.aux_embeddings.parameters() + self.controller.parameters()
                + self.pretrain_head.parameters())


def build_model(config, vocab_sizes: Sequence[int]) -> CTRModel:
    """Instantiates the model a TrainConfig asks for, deterministically from its seed"""
    rng = np.random.default_rng(config.seed)
    n_fields = len(vocab_sizes)
    k = keep_count(n_fields, config.r)
    common = dict(hidden_dims=config.hidden_dims, n_cross_layers=config.cross_layers)
    if config.method == "none":
        return FullFieldModel(vocab_sizes, config.d1, config.backbone_main, seed=rng, **common)
    if config.method == "random":
        fields = rng.choice(n_fields, size=k, replace=False)
        return FullFieldModel(vocab_sizes, config.d1, config.backbone_main, fields=fields, seed=rng, **common)
    if config.method == "adafs":
        return AdaFSModel(vocab_sizes, config.d1, mode=config.mode, k=k, backbone=config.backbone_main,
                          reweight=config.enable_topk_reweight, seed=rng, **common)
    if config.method == "aefs":
        return ModelPair(vocab_sizes, config.d1, config.d2, k=k, backbone_main=config.backbone_main,
                         backbone_aux=config.backbone_aux, reweight=config.enable_topk_reweight, seed=rng, **common)
    raise ConfigError(f"unknown method {config.method!r}, expected one of {Keys.METHODS}")
