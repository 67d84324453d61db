"""Shared test utilities: finite-difference gradient checking.

The case lists below are the single source of truth for "every op, at three
or more distinct shapes" — both the unit tests and the acceptance suite
sweep them: ``build_grad_cases`` covers the primitive ops,
``build_composite_grad_cases`` the pipeline-level composites.
"""
from __future__ import annotations

import numpy as np

from kgdialog import autodiff as ad
from kgdialog.composer import (AttentionParams, EncoderBlockParams,
                               FusionParams, MlpParams, compose_attributes,
                               fuse, reorganize_relations)
from kgdialog.decoder import (DecoderBlockParams, LossWeights, OutputHead,
                              SemanticEnhanceParams, decode_step,
                              predict_token, semantic_enhance, total_loss)
from kgdialog.regularizer import (LatentQuerySet, SemanticProjectionParams,
                                  project_semantic)

EPS = 1e-5
DENOM_FLOOR = 1e-6


def max_rel_error(f, params, eps: float = EPS) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` rebuilds the scalar loss from the current ``params`` data on every
    call, so perturbing ``p.data`` in place and re-running gives the numeric
    derivative.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        for idx in np.ndindex(*p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            hi = f().item()
            p.data[idx] = orig - eps
            lo = f().item()
            p.data[idx] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
            worst = max(worst, err)
    return worst


def _param(rng, rows, cols, lo=-1.0, hi=1.0):
    return ad.Tensor(rng.uniform(lo, hi, size=(rows, cols)), requires_grad=True)


def _project(out: ad.Tensor, seed: int) -> ad.Tensor:
    """Collapse a matrix output to a scalar via a fixed random weighting so
    every output element influences the loss."""
    c = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum_all(ad.mul(out, ad.Tensor(c)))


def build_grad_cases(seed: int = 0):
    """(label, loss_fn, params) triples covering every op at >= 3 shapes."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(label, f, params):
        cases.append((label, f, params))

    elementwise_shapes = [(1, 1), (2, 3), (5, 4)]
    for r, c in elementwise_shapes:
        a, b = _param(rng, r, c), _param(rng, r, c)
        case(f"add:{r}x{c}", lambda a=a, b=b: _project(ad.add(a, b), 1), [a, b])
        a2, b2 = _param(rng, r, c), _param(rng, r, c)
        case(f"sub:{r}x{c}", lambda a=a2, b=b2: _project(ad.sub(a, b), 2), [a2, b2])
        a3, b3 = _param(rng, r, c), _param(rng, r, c)
        case(f"mul:{r}x{c}", lambda a=a3, b=b3: _project(ad.mul(a, b), 3), [a3, b3])
        x = _param(rng, r, c)
        case(f"mul_scalar:{r}x{c}", lambda x=x: _project(ad.mul_scalar(x, -1.7), 4), [x])
        x2 = _param(rng, r, c)
        case(f"tanh:{r}x{c}", lambda x=x2: _project(ad.tanh(x), 5), [x2])
        x3 = _param(rng, r, c, lo=0.5, hi=2.0)
        case(f"log:{r}x{c}", lambda x=x3: _project(ad.log(x), 6), [x3])
        # keep samples away from the clamp kink at 0.3
        raw = rng.uniform(-1.0, 1.0, size=(r, c))
        raw[np.abs(raw - 0.3) < 0.15] += 0.4
        x4 = ad.Tensor(raw, requires_grad=True)
        case(f"clamp_min:{r}x{c}", lambda x=x4: _project(ad.clamp_min(x, 0.3), 7), [x4])
        x5 = _param(rng, r, c)
        case(f"sum_all:{r}x{c}", lambda x=x5: ad.sum_all(x), [x5])
        x6 = _param(rng, r, c)
        case(f"mean_rows:{r}x{c}", lambda x=x6: _project(ad.mean_rows(x), 8), [x6])
        x7 = _param(rng, r, c)
        case(f"transpose:{r}x{c}", lambda x=x7: _project(ad.transpose(x), 9), [x7])
        x8 = _param(rng, r, c)
        bias = _param(rng, 1, c)
        case(f"add_row:{r}x{c}", lambda x=x8, b=bias: _project(ad.add_row(x, b), 10),
             [x8, bias])
        x9 = _param(rng, r, c)
        s = _param(rng, r, 1)
        case(f"scale_rows:{r}x{c}", lambda x=x9, s=s: _project(ad.scale_rows(x, s), 11),
             [x9, s])
        x10 = _param(rng, r, c)
        case(f"softmax_rows:{r}x{c}",
             lambda x=x10: _project(ad.softmax_rows(x), 12), [x10])

    for (m, k, n) in [(1, 1, 1), (2, 3, 4), (5, 2, 3)]:
        a, b = _param(rng, m, k), _param(rng, k, n)
        case(f"matmul:{m}x{k}x{n}", lambda a=a, b=b: _project(ad.matmul(a, b), 13),
             [a, b])

    for (r, c) in [(2, 2), (3, 4), (1, 6)]:
        x = _param(rng, r, c)
        g, bta = _param(rng, 1, c, lo=0.5, hi=1.5), _param(rng, 1, c)
        case(f"layer_norm:{r}x{c}",
             lambda x=x, g=g, b=bta: _project(ad.layer_norm(x, g, b), 14), [x, g, bta])

    for sizes in [(1, 1), (2, 3, 1), (4, 2, 3)]:
        parts = [_param(rng, s, 3) for s in sizes]
        case(f"concat_rows:{sizes}",
             lambda ps=parts: _project(ad.concat_rows(ps), 15), parts)

    for (r, c, lo, hi) in [(3, 2, 0, 2), (5, 3, 1, 4), (4, 4, 0, 4)]:
        x = _param(rng, r, c)
        case(f"slice_rows:{r}x{c}[{lo}:{hi}]",
             lambda x=x, lo=lo, hi=hi: _project(ad.slice_rows(x, lo, hi), 16), [x])
        x2 = _param(rng, c, r)
        lo2, hi2 = min(lo, r - 1), min(hi, r)
        case(f"slice_cols:{c}x{r}[{lo2}:{hi2}]",
             lambda x=x2, lo=lo2, hi=hi2: _project(ad.slice_cols(x, lo, hi), 17), [x2])

    for (r, c, idx) in [(3, 2, [0, 2, 2]), (5, 4, [4, 1, 1, 0, 3]), (2, 3, [1])]:
        x = _param(rng, r, c)
        case(f"take_rows:{r}x{c}{idx}",
             lambda x=x, idx=idx: _project(ad.take_rows(x, idx), 18), [x])

    for (d_in, d_out, n) in [(2, 3, 1), (4, 4, 3), (3, 2, 5)]:
        x, w, b = _param(rng, n, d_in), _param(rng, d_in, d_out), _param(rng, 1, d_out)
        case(f"linear:{n}x{d_in}->{d_out}",
             lambda x=x, w=w, b=b: _project(ad.linear(x, w, b), 19), [x, w, b])

    for (d, h, n) in [(2, 3, 1), (4, 6, 2), (3, 5, 4)]:
        x = _param(rng, n, d)
        w1, b1 = _param(rng, d, h), _param(rng, 1, h)
        w2, b2 = _param(rng, h, d), _param(rng, 1, d)
        case(f"mlp:{n}x{d}(h={h})",
             lambda x=x, w1=w1, b1=b1, w2=w2, b2=b2:
             _project(ad.mlp(x, w1, b1, w2, b2), 20), [x, w1, b1, w2, b2])

    for (nq, nk, d, masked, scaled) in [(1, 1, 2, False, False),
                                        (3, 4, 3, False, False),
                                        (2, 5, 4, False, True),
                                        (4, 4, 3, True, False)]:
        q, kv = _param(rng, nq, d), _param(rng, nk, d)
        wq, wk, wv = (_param(rng, d, d) for _ in range(3))
        mask = ad.causal_mask(nq) if masked else None

        def attn_loss(q=q, kv=kv, wq=wq, wk=wk, wv=wv, mask=mask, scaled=scaled):
            out, _ = ad.cross_attention(q, kv if mask is None else q,
                                        wq, wk, wv, mask=mask, scale=scaled)
            return _project(out, 21)

        label = f"cross_attention:{nq}q{nk}k d={d} mask={masked} scale={scaled}"
        case(label, attn_loss, [q, kv, wq, wk, wv] if mask is None
             else [q, wq, wk, wv])

    for (r, c) in [(1, 2), (3, 3), (4, 2)]:
        a, b = _param(rng, r, c), _param(rng, r, c)
        case(f"frobenius_distance_sq:{r}x{c}",
             lambda a=a, b=b: ad.frobenius_distance_sq(a, b), [a, b])

    for (steps, v) in [(1, 3), (3, 5), (4, 2)]:
        logits = [_param(rng, 1, v) for _ in range(steps)]
        targets = [int(t) for t in rng.integers(0, v, size=steps)]

        def ce_loss(logits=logits, targets=targets):
            return ad.cross_entropy_loss(
                [ad.softmax_rows(z) for z in logits], targets)

        case(f"cross_entropy:{steps}steps V={v}", ce_loss, logits)

    return cases


# ------------------------------------------------- parameter factories

def make_attention(rng, d) -> AttentionParams:
    return AttentionParams(_param(rng, d, d), _param(rng, d, d),
                           _param(rng, d, d))


def make_mlp(rng, d, h) -> MlpParams:
    return MlpParams(_param(rng, d, h), _param(rng, 1, h),
                     _param(rng, h, d), _param(rng, 1, d))


def make_encoder_block(rng, d, h) -> EncoderBlockParams:
    return EncoderBlockParams(make_attention(rng, d),
                              _param(rng, 1, d, lo=0.5, hi=1.5),
                              _param(rng, 1, d),
                              make_mlp(rng, d, h),
                              _param(rng, 1, d, lo=0.5, hi=1.5),
                              _param(rng, 1, d))


def make_decoder_block(rng, d, h) -> DecoderBlockParams:
    def gain():
        return _param(rng, 1, d, lo=0.5, hi=1.5)

    return DecoderBlockParams(make_attention(rng, d), gain(), _param(rng, 1, d),
                              make_attention(rng, d), gain(), _param(rng, 1, d),
                              make_attention(rng, d), gain(), _param(rng, 1, d),
                              make_mlp(rng, d, h), gain(), _param(rng, 1, d))


def make_fusion(rng, d) -> FusionParams:
    return FusionParams(_param(rng, d, d), _param(rng, 1, d),
                        _param(rng, d, d), _param(rng, 1, d),
                        _param(rng, d, 1))


def attention_tensors(attn: AttentionParams) -> list[ad.Tensor]:
    return [attn.w_q, attn.w_k, attn.w_v]


def mlp_tensors(mlp: MlpParams) -> list[ad.Tensor]:
    return [mlp.w1, mlp.b1, mlp.w2, mlp.b2]


def encoder_block_tensors(block: EncoderBlockParams) -> list[ad.Tensor]:
    return (attention_tensors(block.attn)
            + [block.ln1_gain, block.ln1_bias]
            + mlp_tensors(block.mlp)
            + [block.ln2_gain, block.ln2_bias])


def decoder_block_tensors(block: DecoderBlockParams) -> list[ad.Tensor]:
    return (attention_tensors(block.self_attn)
            + [block.ln1_gain, block.ln1_bias]
            + attention_tensors(block.knowledge_attn)
            + [block.ln2_gain, block.ln2_bias]
            + attention_tensors(block.encoder_attn)
            + [block.ln3_gain, block.ln3_bias]
            + mlp_tensors(block.mlp)
            + [block.ln4_gain, block.ln4_bias])


def fusion_tensors(f: FusionParams) -> list[ad.Tensor]:
    return [f.w_t, f.b_t, f.w_h, f.b_h, f.a]


def build_composite_grad_cases(seed: int = 1):
    """(label, loss_fn, params) triples for every pipeline composite."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(label, f, params):
        cases.append((label, f, params))

    # compose_attributes: concat + shared encoder
    for i, (nk, nt, nv, d, h, n_blocks) in enumerate(
            [(1, 2, 1, 2, 3, 1), (2, 3, 0, 3, 4, 1), (0, 2, 2, 4, 5, 2)]):
        E_k, E_t, E_v = (_param(rng, nk, d), _param(rng, nt, d),
                         _param(rng, nv, d))
        blocks = tuple(make_encoder_block(rng, d, h) for _ in range(n_blocks))
        params = ([p for p, n in ((E_k, nk), (E_t, nt), (E_v, nv)) if n > 0]
                  + [t for b in blocks for t in encoder_block_tensors(b)])
        case(f"compose_attributes:{nk}+{nt}+{nv} d={d} blocks={n_blocks}",
             lambda E_k=E_k, E_t=E_t, E_v=E_v, blocks=blocks:
             _project(compose_attributes(E_k, E_t, E_v, blocks), 30 + i),
             params)

    # reorganize_relations: cross-attention reorganization
    for i, (nb, nh, d) in enumerate([(1, 1, 2), (3, 2, 3), (2, 4, 4)]):
        T_t, T_h = _param(rng, nb, d), _param(rng, nh, d)
        attn = make_attention(rng, d)
        case(f"reorganize_relations:{nb}x{nh} d={d}",
             lambda T_t=T_t, T_h=T_h, attn=attn:
             _project(reorganize_relations(T_t, T_h, attn)[0], 40 + i),
             [T_t, T_h] + attention_tensors(attn))

    # fuse: pairwise-softmax convex combination
    for i, (n, d) in enumerate([(1, 2), (3, 3), (4, 5)]):
        T_t, T_h_bar = _param(rng, n, d), _param(rng, n, d)
        fusion = make_fusion(rng, d)
        case(f"fuse:{n}x{d}",
             lambda T_t=T_t, T_h_bar=T_h_bar, fusion=fusion:
             _project(fuse(T_t, T_h_bar, fusion)[2], 50 + i),
             [T_t, T_h_bar] + fusion_tensors(fusion))

    # project_semantic: latent queries + MLP residual
    for i, (np_, nt, d, h) in enumerate([(1, 2, 2, 3), (2, 1, 3, 4),
                                         (3, 4, 4, 2)]):
        latent = LatentQuerySet(_param(rng, np_, d))
        T = _param(rng, nt, d)
        proj = SemanticProjectionParams(make_attention(rng, d),
                                        make_mlp(rng, d, h))
        case(f"project_semantic:P={np_} T={nt} d={d}",
             lambda latent=latent, T=T, proj=proj:
             _project(project_semantic(latent, T, proj), 60 + i),
             [latent.P_g, T] + attention_tensors(proj.attn)
             + mlp_tensors(proj.mlp))

    # decode_step: the full decoder stack at the last position
    for i, (nc, nk, ny, d, h, n_blocks) in enumerate(
            [(2, 1, 1, 2, 3, 1), (3, 0, 2, 3, 4, 1), (2, 2, 3, 3, 2, 2)]):
        T_c, E_k, E_y = (_param(rng, nc, d), _param(rng, nk, d),
                         _param(rng, ny, d))
        blocks = tuple(make_decoder_block(rng, d, h) for _ in range(n_blocks))
        params = ([p for p, n in ((T_c, nc), (E_k, nk), (E_y, ny)) if n > 0]
                  + [t for b in blocks for t in decoder_block_tensors(b)])
        case(f"decode_step:c={nc} k={nk} y={ny} d={d} blocks={n_blocks}",
             lambda T_c=T_c, E_k=E_k, E_y=E_y, blocks=blocks:
             _project(decode_step(T_c, E_k, E_y, blocks), 70 + i), params)

    # semantic_enhance: the final cross-attention read
    for i, (nz, ns, d) in enumerate([(1, 1, 2), (2, 3, 3), (4, 2, 4)]):
        z_bar, T_sem = _param(rng, nz, d), _param(rng, ns, d)
        enh = SemanticEnhanceParams(make_attention(rng, d),
                                    _param(rng, 1, d, lo=0.5, hi=1.5),
                                    _param(rng, 1, d))
        case(f"semantic_enhance:{nz}x{ns} d={d}",
             lambda z_bar=z_bar, T_sem=T_sem, enh=enh:
             _project(semantic_enhance(z_bar, T_sem, enh), 80 + i),
             [z_bar, T_sem] + attention_tensors(enh.attn)
             + [enh.ln_gain, enh.ln_bias])

    # predict_token: output head + row softmax
    for i, (n, d, v) in enumerate([(1, 2, 3), (3, 3, 5), (2, 4, 4)]):
        z_hat = _param(rng, n, d)
        head = OutputHead(_param(rng, d, v), _param(rng, 1, v))
        case(f"predict_token:{n}x{d}->V={v}",
             lambda z_hat=z_hat, head=head:
             _project(predict_token(z_hat, head), 90 + i),
             [z_hat, head.w_y, head.b_y])

    # total_loss: weighted sum with the parameter-norm penalty
    for i, (steps, v, d, weights) in enumerate(
            [(1, 3, 2, LossWeights(1.0, 0.1, 1e-3)),
             (2, 4, 3, LossWeights(0.5, 1.0, 0.0)),
             (3, 2, 2, LossWeights(2.0, 0.0, 1e-2))]):
        logits = [_param(rng, 1, v) for _ in range(steps)]
        targets = [int(t) for t in rng.integers(0, v, size=steps)]
        a, b = _param(rng, d, d), _param(rng, d, d)
        penalized = [_param(rng, 2, d), _param(rng, 1, d)]

        def loss_fn(logits=logits, targets=targets, a=a, b=b,
                    penalized=penalized, weights=weights):
            l_ce = ad.cross_entropy_loss(
                [ad.softmax_rows(z) for z in logits], targets)
            l_r = ad.frobenius_distance_sq(a, b)
            return total_loss(l_ce, l_r, penalized, weights)

        case(f"total_loss:{steps}steps V={v} {weights}", loss_fn,
             logits + [a, b] + penalized)

    return cases
