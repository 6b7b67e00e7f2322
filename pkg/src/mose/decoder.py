"""Complex bilinear (ComplEx) scoring: Re<h, r, conj(t)>.

All vectors are packed 2d-real arrays (real parts then imaginary parts).
With hr/hi etc. denoting the split halves, the score expands to

    sum_k (hr*rr - hi*ri)_k * tr_k + (hr*ri + hi*rr)_k * ti_k

which is what both the scalar and batched paths compute. The scalar entry
point delegates to the batched kernel so the two agree bitwise.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ValidationError


@dataclasses.dataclass
class ScoreTensor:
    """(n_queries, n_entities) real scores for one modality."""

    values: np.ndarray
    modality: str

    @property
    def shape(self):
        return self.values.shape


def _split(x: np.ndarray):
    d2 = x.shape[-1]
    if d2 % 2:
        raise ValidationError(f"packed complex vector needs even width, got {d2}")
    return x[..., : d2 // 2], x[..., d2 // 2 :]


def _query_parts(heads: np.ndarray, relations: np.ndarray):
    if heads.shape != relations.shape:
        raise ValidationError(f"head/relation shape mismatch: {heads.shape} vs {relations.shape}")
    hr, hi = _split(heads)
    rr, ri = _split(relations)
    return hr * rr - hi * ri, hr * ri + hi * rr


def score_all(heads: np.ndarray, relations: np.ndarray, entities: np.ndarray) -> np.ndarray:
    """Score (B, 2d) queries against every row of an (E, 2d) entity matrix.

    Entry [b, e] equals score(heads[b], relations[b], entities[e]).
    """
    if entities.shape[-1] != heads.shape[-1]:
        raise ValidationError(
            f"entity width {entities.shape[-1]} does not match query width {heads.shape[-1]}"
        )
    qr, qi = _query_parts(heads, relations)
    er, ei = _split(entities)
    return qr @ er.T + qi @ ei.T


def score_all_backward(
    heads: np.ndarray,
    relations: np.ndarray,
    entities: np.ndarray,
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * score_all(...)) w.r.t. heads, relations
    and the full entity matrix."""
    hr, hi = _split(heads)
    rr, ri = _split(relations)
    er, ei = _split(entities)
    qr = hr * rr - hi * ri
    qi = hr * ri + hi * rr
    # d score / d entities: dense over all candidate rows.
    d_er = upstream.T @ qr
    d_ei = upstream.T @ qi
    # Back through the bilinear query parts.
    d_qr = upstream @ er
    d_qi = upstream @ ei
    d_hr = d_qr * rr + d_qi * ri
    d_hi = -d_qr * ri + d_qi * rr
    d_rr = d_qr * hr + d_qi * hi
    d_ri = -d_qr * hi + d_qi * hr
    d_heads = np.concatenate([d_hr, d_hi], axis=-1)
    d_relations = np.concatenate([d_rr, d_ri], axis=-1)
    d_entities = np.concatenate([d_er, d_ei], axis=-1)
    return d_heads, d_relations, d_entities


def score(h_vec: np.ndarray, r_vec: np.ndarray, t_vec: np.ndarray) -> float:
    """Scalar triple score; same kernel as :func:`score_all`."""
    h = np.atleast_2d(np.asarray(h_vec, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r_vec, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t_vec, dtype=np.float64))
    if not h.shape == r.shape == t.shape:
        raise ValidationError(
            f"dimension mismatch: h {h.shape}, r {r.shape}, t {t.shape}"
        )
    return float(score_all(h, r, t)[0, 0])


def score_triples(heads: np.ndarray, relations: np.ndarray, tails: np.ndarray) -> np.ndarray:
    """Row-wise triple scores for (B, 2d) inputs."""
    if not heads.shape == relations.shape == tails.shape:
        raise ValidationError("score_triples expects matching (B, 2d) inputs")
    qr, qi = _query_parts(heads, relations)
    tr, ti = _split(tails)
    return np.sum(qr * tr + qi * ti, axis=-1)


def n3_penalty(vectors: np.ndarray) -> float:
    """Cubed-modulus regularizer: sum over rows and components of |z|^3
    with |z| the complex modulus of each packed component."""
    re, im = _split(vectors)
    mod = np.sqrt(re * re + im * im)
    return float(np.sum(mod**3))


def n3_grad(vectors: np.ndarray) -> np.ndarray:
    """d n3_penalty / d vectors; d|z|^3/d re = 3 |z| re (and same for im)."""
    re, im = _split(vectors)
    mod = np.sqrt(re * re + im * im)
    return np.concatenate([3.0 * mod * re, 3.0 * mod * im], axis=-1)
