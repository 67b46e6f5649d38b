"""
Class-agnostic prior from base-class prototypes
===============================================

Base-class prototypes (masked average features) are averaged and matched
against every query pixel. The resulting map lights up every object the bank
knows about, the target and any other base-class object in the scene.
"""

import numpy as np

from hybridfss import SyntheticConfig, build_bank, generate_episode, generate_instance, probability_map

cfg = SyntheticConfig(channels=16, height=16, width=16, num_base_classes=4,
                      noise_sigma=0.05, latent_object_rate=1.0, seed=3)

instances = []
for cls in cfg.base_classes:
    for i in range(5):
        pair = generate_instance(cfg, cls, i)
        instances.append((pair.features, pair.mask, cls))
bank = build_bank(instances)
print("bank:", bank.prototypes.shape, "classes", bank.class_ids, "instances", bank.instance_counts)

ep = generate_episode(cfg, class_id=0, episode_index=0)
pm = probability_map(bank, ep.query_features)[0]
print("target class", ep.class_id, "latent class", ep.latent_class)

target = ep.query_gt.astype(bool)
latent = ep.latent_mask.astype(bool)
background = ~(target | latent)
print("mean map value: target %.3f, latent object %.3f, background %.3f"
      % (pm[target].mean(), pm[latent].mean(), pm[background].mean()))

# left: T target, L latent object; right: # where the map exceeds half its max
print()
for y in range(cfg.height):
    labels = "".join("T" if target[y, x] else "L" if latent[y, x] else "." for x in range(cfg.width))
    hot = "".join("#" if pm[y, x] > 0.5 * pm.max() else "." for x in range(cfg.width))
    print(labels, "  ", hot)
