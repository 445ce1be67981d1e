"""Pure-numpy reference implementation of the training-epoch kernel.

The kernel contract (shared with the compiled backend):

  run_epoch(chains, opt, X, y, order, batch_size, d, gamma, alpha,
            dropout_rate, dropout_key) -> (mean_loss, bad_batch)

chains is a dict with layer lists "body", "pred", "rej", "aux"; each layer is
(W, b, relu_flag) with W of shape (out, in).  "rej" is empty in scalar mode,
in which case chains["raw_rho"] is a shape-(1,) array.  opt carries the
optimizer kind (0 adagrad, 1 sgd+momentum), lr, eps, mom, wd and slot arrays
aligned with the canonical parameter order: body (W, b)..., pred (W, b)...,
then raw_rho or rej (W, b)..., then aux (W, b)....

Parameters and slots are updated in place.  Each batch takes one optimizer
step on the batch-mean loss.  mean_loss is the sample-weighted epoch mean;
bad_batch is the index of the first batch with a non-finite loss (no step is
taken for it), or -1.

Dropout (rate > 0) multiplies body activations by inverted-scaled keep masks.
Mask bits come from the counter-based stream `dropout_key`, consumed in batch
-> layer -> row-major element order, keep iff uniform >= rate; both backends
draw identical masks.
"""

from __future__ import annotations

import numpy as np

from ..rng import Stream


def _sigma(a, gamma):
    return 1.0 / (1.0 + np.exp(np.clip(gamma * a, -500.0, 500.0)))


def _chain_forward(layers, a, masks=None):
    cache = []
    for i, (W, b, relu) in enumerate(layers):
        z = a @ W.T + b
        cache.append((a, z))
        a = np.maximum(z, 0.0) if relu else z
        if masks is not None and masks[i] is not None:
            a = a * masks[i]
    return a, cache


def _chain_backward(layers, cache, d_out, grads, offset, masks=None):
    d_a = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _, relu = layers[i]
        a_in, z = cache[i]
        if masks is not None and masks[i] is not None:
            d_a = d_a * masks[i]
        d_z = d_a * (z > 0.0) if relu else d_a
        grads[offset + 2 * i] = d_z.T @ a_in
        grads[offset + 2 * i + 1] = d_z.sum(axis=0)
        d_a = d_z @ W
    return d_a


def _apply_update(opt, params, grads):
    kind, lr, wd = opt["kind"], opt["lr"], opt["wd"]
    for p, g, s in zip(params, grads, opt["slots"]):
        if wd:
            p -= lr * wd * p
        if kind == 0:
            s += g * g
            p -= lr * g / (np.sqrt(s) + opt["eps"])
        else:
            s *= opt["mom"]
            s -= lr * g
            p += s


def run_epoch(chains, opt, X, y, order, batch_size, d, gamma, alpha,
              dropout_rate=0.0, dropout_key=0):
    body, pred = chains["body"], chains["pred"]
    rej, aux = chains["rej"], chains["aux"]
    scalar_rho = not rej
    n = X.shape[0]
    params = []
    for W, b, _ in body + pred:
        params += [W, b]
    if scalar_rho:
        params.append(chains["raw_rho"])
    else:
        for W, b, _ in rej:
            params += [W, b]
    for W, b, _ in aux:
        params += [W, b]

    drop = Stream(dropout_key) if dropout_rate > 0.0 else None
    counter = 0
    total = 0.0
    for bi, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        B = len(idx)
        xb = X[idx]
        yb = y[idx]

        masks = None
        if drop is not None:
            masks = []
            for W, _, _ in body:
                u = drop.uniforms(B * W.shape[0], start=counter)
                counter += B * W.shape[0]
                m = (u >= dropout_rate).astype(np.float64).reshape(B, W.shape[0])
                m /= (1.0 - dropout_rate)
                masks.append(m)

        feat, body_cache = _chain_forward(body, xb, masks)
        f, pred_cache = _chain_forward(pred, feat)
        f = f[:, 0]
        if scalar_rho:
            raw = np.full(B, chains["raw_rho"][0])
            rej_cache = None
        else:
            raw_out, rej_cache = _chain_forward(rej, feat)
            raw = raw_out[:, 0]
        rho = np.maximum(raw, 0.0)

        margin = yb * f
        s1 = _sigma(margin - rho, gamma)
        s2 = _sigma(margin + rho, gamma)
        lds = 2.0 * d * s1 + 2.0 * (1.0 - d) * s2
        t1 = 2.0 * d * s1 * (1.0 - s1)
        t2 = 2.0 * (1.0 - d) * s2 * (1.0 - s2)
        dmargin = -gamma * (t1 + t2)
        drho = gamma * (t1 - t2)

        if aux:
            logits, aux_cache = _chain_forward(aux, feat)
            cls = (yb > 0).astype(np.intp)
            hi = logits.max(axis=1)
            p0 = np.exp(logits[:, 0] - hi)
            p1 = np.exp(logits[:, 1] - hi)
            zsum = p0 + p1
            lce = hi + np.log(zsum) - logits[np.arange(B), cls]
            probs = np.stack([p0 / zsum, p1 / zsum], axis=1)
            dlogits = probs
            dlogits[np.arange(B), cls] -= 1.0
            loss_b = alpha * lds + (1.0 - alpha) * lce
            dlogits *= (1.0 - alpha) / B
            dmargin = dmargin * (alpha / B)
            drho = drho * (alpha / B)
        else:
            loss_b = lds
            dmargin = dmargin / B
            drho = drho / B

        batch_loss = float(loss_b.mean())
        if not np.isfinite(batch_loss):
            return total / n, bi
        total += batch_loss * B

        grads = [None] * len(params)
        off_pred = 2 * len(body)
        d_feat = _chain_backward(pred, pred_cache, (yb * dmargin)[:, None], grads, off_pred)
        off = off_pred + 2 * len(pred)
        d_raw = drho * (raw > 0.0)
        if scalar_rho:
            grads[off] = np.array([d_raw.sum()])
            off += 1
        else:
            d_feat = d_feat + _chain_backward(rej, rej_cache, d_raw[:, None], grads, off)
            off += 2 * len(rej)
        if aux:
            d_feat = d_feat + _chain_backward(aux, aux_cache, dlogits, grads, off)
        _chain_backward(body, body_cache, d_feat, grads, 0, masks)

        _apply_update(opt, params, grads)

    return total / n, -1
