"""Per-branch and fused retrieval evaluation of a trained model."""

import numpy as np

from .config import BRANCHES
from .data import split_query_gallery, stack_images
from .metrics import evaluate, fuse_distances, minmax_normalize

EXPORT_COLUMNS = ("d_global_pre", "d_global", "d_self", "d_mutual", "d_fused")


def query_gallery_distances(model, samples, branches=None, weights=None):
    """Flip-averaged eval features for the held-out-camera split and all distance matrices.

    Returns ``(query, gallery, mats)`` where ``mats`` maps ``global_pre``,
    each branch name and ``fused`` to a Q x G matrix. ``fused`` combines
    the requested branches only.
    """
    branches = tuple(b for b in BRANCHES if b in (branches or model.branches))
    if weights is None:
        weights = model.cfg.fusion_weights
    query, gallery = split_query_gallery(samples)
    qf = model.extract(stack_images(query))
    gf = model.extract(stack_images(gallery))
    mats = model.distances(qf, gf)
    w = [weights[BRANCHES.index(b)] for b in branches]
    mats["fused"] = fuse_distances([mats[b] for b in branches], w)
    return query, gallery, mats


def evaluate_model(model, samples, branches=None, weights=None):
    """``{branch or 'fused': EvalReport}`` for the requested branches."""
    branches = tuple(b for b in BRANCHES if b in (branches or model.branches))
    query, gallery, mats = query_gallery_distances(model, samples, branches, weights)
    ids = [np.array([s.id for s in part]) for part in (query, gallery)]
    cams = [np.array([s.cam for s in part]) for part in (query, gallery)]
    return {
        name: evaluate(mats[name], ids[0], ids[1], cams[0], cams[1])
        for name in (*branches, "fused")
    }


def report_text(reports):
    return "".join(rep.to_text(prefix=f"{name}.") for name, rep in reports.items())


def export_rows(model, samples, branches=None, weights=None):
    """One row per (query, gallery) pair with raw and min-max normalized distances."""
    query, gallery, mats = query_gallery_distances(model, samples, branches, weights)
    keys = [c[2:] for c in EXPORT_COLUMNS]
    normed = {k: minmax_normalize(mats[k]) for k in keys}
    rows = []
    for qi, q in enumerate(query):
        for gi, g in enumerate(gallery):
            row = {"query_idx": qi, "gallery_idx": gi, "same_id": int(q.id == g.id)}
            for k in keys:
                row["d_" + k] = float(mats[k][qi, gi])
            for k in keys:
                row[f"d_{k}_norm"] = float(normed[k][qi, gi])
            rows.append(row)
    return rows


def export_csv(rows):
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) if isinstance(r[c], int) else repr(r[c]) for c in cols))
    return "\n".join(lines) + "\n"
