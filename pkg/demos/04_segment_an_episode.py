"""
Segmenting one episode end to end
=================================

Hybrid prototypes, the class-agnostic map and the cosine decoder, on a
single synthetic 1-shot episode.
"""

from hybridfss import Pipeline, RunConfig, build_synthetic_bank, generate_episodes, iou

cfg = RunConfig(episodes=1, seed=11).updated(noise_sigma=0.05)
(ep,) = generate_episodes(cfg)
bank = build_synthetic_bank(cfg)
c, h, w = ep.query_features.shape

pred = Pipeline(cfg, bank, c, h, w).predict(ep)
print("class", ep.class_id, "| query foreground", int(ep.query_gt.sum()), "pixels")
print("logit range %.2f .. %.2f, threshold %.2f" % (pred.logits.min(), pred.logits.max(), pred.tau))
print("IoU %.3f" % iou(pred.mask, ep.query_gt))


def show(mask):
    return ["".join("#" if v else "." for v in row) for row in mask]


print()
for gt_row, pred_row in zip(show(ep.query_gt), show(pred.mask)):
    print(gt_row, "  ", pred_row)

# three shots fused by majority vote
cfg3 = cfg.updated(shot=3)
(ep3,) = generate_episodes(cfg3)
pred3 = Pipeline(cfg3, build_synthetic_bank(cfg3), c, h, w).predict(ep3)
print("\n3-shot IoU %.3f" % iou(pred3.mask, ep3.query_gt))
