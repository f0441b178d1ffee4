"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version with the same signature. The module-level names point at the numba
versions unless ``MDELM_DISABLE_NUMBA`` is set to a truthy value (or numba
cannot be imported), in which case they point at the numpy versions.

Both variants are always importable as ``nb_<name>`` / ``np_<name>`` so tests
and the benchmark can compare them directly. Results agree up to
floating-point summation order.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _flag("MDELM_DISABLE_NUMBA")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# RBF activations


def np_rbf_activations(X, centers, width, chunk=256):
    n = X.shape[0]
    out = np.empty((n, centers.shape[0]))
    denom = 2.0 * width * width
    for start in range(0, n, chunk):
        block = X[start:start + chunk]
        diff = block[:, None, :] - centers[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        out[start:start + chunk] = np.exp(-sq / denom)
    return out


def _rbf_activations(X, centers, width):
    n, d = X.shape
    m = centers.shape[0]
    out = np.empty((n, m))
    denom = 2.0 * width * width
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = X[i, k] - centers[j, k]
                s += t * t
            out[i, j] = np.exp(-s / denom)
    return out


nb_rbf_activations = _njit(_rbf_activations)


# ---------------------------------------------------------------------------
# Change in PRESS sum of squares for a set of label flips.
#
# E      : n x C current PRESS residuals R / (1 - h)
# w      : n     1 / (1 - h_jj)
# hat_rows : k x n rows of the hat matrix for the flipped samples
# idx    : k     flipped sample indices
# delta  : k x C target change per flipped sample
#
# Returns sum over (j, c) of (E + dE)^2 - E^2 with
# dE_j = w_j * sum_k ([j == idx_k] - HAT[idx_k, j]) * delta_k.


def np_flip_delta_sse(E, w, hat_rows, idx, delta):
    dR = -(hat_rows.T @ delta)
    dR[idx] += delta
    dE = dR * w[:, None]
    return float(np.sum(dE * (2.0 * E + dE)))


def _flip_delta_sse(E, w, hat_rows, idx, delta):
    n, C = E.shape
    k = idx.shape[0]
    total = 0.0
    coef = np.empty(k)
    for j in range(n):
        for q in range(k):
            coef[q] = -hat_rows[q, j]
            if idx[q] == j:
                coef[q] += 1.0
        for c in range(C):
            d = 0.0
            for q in range(k):
                d += coef[q] * delta[q, c]
            d *= w[j]
            total += d * (2.0 * E[j, c] + d)
    return total


nb_flip_delta_sse = _njit(_flip_delta_sse)


# ---------------------------------------------------------------------------
# Batched MD-ELM trial loop.
#
# Evaluates proposals (prop_idx[m], prop_new[m]) in order against the fixed
# committed labeling. An accepted proposal adds one to the score of each of its
# samples. Stops before an iteration once art_sum >= target_sum.
# Returns (iterations executed, accepted count, final art_sum).


def _trial_block(E, w, hat, labels, prop_idx, prop_new, is_art, scores,
                 art_sum, target_sum):
    n, C = E.shape
    m, k = prop_idx.shape
    Et = np.ascontiguousarray(E.T)
    dvec = np.empty((k, C))
    done = 0
    accepted = 0
    for it in range(m):
        if art_sum >= target_sum:
            break
        for q in range(k):
            i = prop_idx[it, q]
            for c in range(C):
                dvec[q, c] = 0.0
            dvec[q, prop_new[it, q]] += 1.0
            dvec[q, labels[i]] -= 1.0
        total = 0.0
        for c in range(C):
            nz = False
            for q in range(k):
                if dvec[q, c] != 0.0:
                    nz = True
            if not nz:
                continue
            # off-diagonal part for every row, branch-free so it vectorizes
            e = Et[c]
            sub = 0.0
            if k == 2:
                h0 = hat[prop_idx[it, 0]]
                h1 = hat[prop_idx[it, 1]]
                a0 = dvec[0, c]
                a1 = dvec[1, c]
                for j in range(n):
                    d = -w[j] * (a0 * h0[j] + a1 * h1[j])
                    sub += d * (2.0 * e[j] + d)
            else:
                for j in range(n):
                    acc = 0.0
                    for q in range(k):
                        acc += dvec[q, c] * hat[prop_idx[it, q], j]
                    d = -w[j] * acc
                    sub += d * (2.0 * e[j] + d)
            # rows that are themselves proposed also get the identity term
            for r in range(k):
                j = prop_idx[it, r]
                acc = 0.0
                for q in range(k):
                    acc += dvec[q, c] * hat[prop_idx[it, q], j]
                d_off = -w[j] * acc
                d_full = w[j] * (dvec[r, c] - acc)
                sub += d_full * (2.0 * e[j] + d_full) - d_off * (2.0 * e[j] + d_off)
            total += sub
        done += 1
        if total < 0.0:
            accepted += 1
            for q in range(k):
                i = prop_idx[it, q]
                scores[i] += 1
                if is_art[i]:
                    art_sum += 1
    return done, accepted, art_sum


nb_trial_block = _njit(_trial_block)


def np_trial_block(E, w, hat, labels, prop_idx, prop_new, is_art, scores,
                   art_sum, target_sum):
    C = E.shape[1]
    m, k = prop_idx.shape
    done = 0
    accepted = 0
    for it in range(m):
        if art_sum >= target_sum:
            break
        idx = prop_idx[it]
        delta = np.zeros((k, C))
        delta[np.arange(k), prop_new[it]] += 1.0
        delta[np.arange(k), labels[idx]] -= 1.0
        total = np_flip_delta_sse(E, w, hat[idx], idx, delta)
        done += 1
        if total < 0.0:
            accepted += 1
            scores[idx] += 1
            art_sum += int(np.count_nonzero(is_art[idx]))
    return done, accepted, art_sum


# ---------------------------------------------------------------------------
# One epoch of one-vs-rest logistic SGD with elastic-net penalty.
#
# Cumulative-penalty soft thresholding: u accumulates the total L1 penalty any
# weight could have received, q[c, j] the penalty it actually received. The
# clipping at zero means no update moves a weight across zero.
# State arrays (W, b, q) are updated in place; returns (t, u).


def _sgd_epoch(X, y, sw, order, W, b, q, t, u, alpha, l1_ratio, eta0):
    C, d = W.shape
    l2 = alpha * (1.0 - l1_ratio)
    l1 = alpha * l1_ratio
    for pos in range(order.shape[0]):
        i = order[pos]
        eta = eta0 / (1.0 + eta0 * alpha * t)
        u += eta * l1
        shrink = 1.0 - eta * l2
        for c in range(C):
            m = b[c]
            for j in range(d):
                m += W[c, j] * X[i, j]
            target = 1.0 if y[i] == c else -1.0
            z = target * m
            # derivative of log(1 + exp(-z)) wrt m, stable for large |z|
            if z > 0.0:
                e = np.exp(-z)
                g = -target * e / (1.0 + e)
            else:
                g = -target / (1.0 + np.exp(z))
            g *= sw[i]
            for j in range(d):
                wj = W[c, j] * shrink - eta * g * X[i, j]
                if wj > 0.0:
                    nw = wj - (u + q[c, j])
                    if nw < 0.0:
                        nw = 0.0
                elif wj < 0.0:
                    nw = wj + (u - q[c, j])
                    if nw > 0.0:
                        nw = 0.0
                else:
                    nw = 0.0
                q[c, j] += nw - wj
                W[c, j] = nw
            b[c] -= eta * g
        t += 1.0
    return t, u


nb_sgd_epoch = _njit(_sgd_epoch)


def np_sgd_epoch(X, y, sw, order, W, b, q, t, u, alpha, l1_ratio, eta0):
    C = W.shape[0]
    l2 = alpha * (1.0 - l1_ratio)
    l1 = alpha * l1_ratio
    classes = np.arange(C)
    for i in order:
        eta = eta0 / (1.0 + eta0 * alpha * t)
        u += eta * l1
        x = X[i]
        m = W @ x + b
        target = np.where(classes == y[i], 1.0, -1.0)
        z = target * m
        g = -target * np.exp(-np.logaddexp(0.0, z)) * sw[i]
        wj = W * (1.0 - eta * l2) - eta * g[:, None] * x[None, :]
        nw = np.where(
            wj > 0.0,
            np.maximum(0.0, wj - (u + q)),
            np.where(wj < 0.0, np.minimum(0.0, wj + (u - q)), 0.0),
        )
        q += nw - wj
        W[...] = nw
        b -= eta * g
        t += 1.0
    return t, u


if USE_NUMBA:
    rbf_activations = nb_rbf_activations
    flip_delta_sse = nb_flip_delta_sse
    trial_block = nb_trial_block
    sgd_epoch = nb_sgd_epoch
else:
    rbf_activations = np_rbf_activations
    flip_delta_sse = np_flip_delta_sse
    trial_block = np_trial_block
    sgd_epoch = np_sgd_epoch


def backend():
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
