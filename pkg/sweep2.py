"""Dev-only: criterion-oriented sweep (spread x drop at noise=1)."""
import time

import numpy as np

import protoseg.data as data_mod
from protoseg.data import CorpusSpec, generate_corpus
from protoseg.losses import LossConfig
from protoseg.model import ModelConfig, infer
from protoseg.trainer import TrainConfig, train
from protoseg.inference import segment_corpus
from protoseg.matching import VideoEval, match_at_level


def run(spread, drop, noise=1.0, seed=0):
    data_mod.MEAN_SPREAD = spread
    spec = CorpusSpec(drop_prob=drop, noise=noise)
    corpus = generate_corpus(spec)
    cfg = ModelConfig(input_dim=32, n_activities=4, n_prototypes=10)
    t0 = time.perf_counter()
    r = train(corpus.videos, cfg, TrainConfig(epochs=240, seed=seed), LossConfig())
    affin = {v.video_id: infer(v.features, r.params, cfg)[0] for v in corpus.videos}
    acts = {v.video_id: v.activity for v in corpus.videos}
    gtv = {v.video_id: v for v in corpus.videos}
    nprime = {}
    for v in corpus.videos:
        nprime.setdefault(v.activity, set()).update(int(a) for a in np.unique(v.gt_actions) if a)
    nprime = {a: len(s) for a, s in nprime.items()}

    def labs(**kw):
        return segment_corpus(affin, acts, scope="activity", n_keep=nprime, **kw)

    def mof(labelings, scope):
        vids = [VideoEval(v, acts[v], l.labels, gtv[v].gt_actions) for v, l in labelings.items()]
        return match_at_level(vids, scope).mof

    naive = labs()
    dec = labs(decode=True)
    smdec = labs(smooth=True, sigma=5.0, decode=True)
    a0, a1, a2 = mof(naive, "activity"), mof(dec, "activity"), mof(smdec, "activity")
    g2 = mof(smdec, "global")
    ok5 = g2 >= 0.75 and a2 >= 0.85
    ok6 = a1 > a0 and a2 > a1
    tag = ("C5" if ok5 else "--") + ("C6" if ok6 else "--")
    print(
        f"{tag} spread={spread} drop={drop} noise={noise} seed={seed}: "
        f"naive={a0:.3f} dec={a1:.3f} sm+dec={a2:.3f} global(sm+dec)={g2:.3f} "
        f"({time.perf_counter() - t0:.0f}s)",
        flush=True,
    )


if __name__ == "__main__":
    for spread in (1.75, 2.0, 2.25):
        for drop in (0.25, 0.35):
            run(spread, drop)
