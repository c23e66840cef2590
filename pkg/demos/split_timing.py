"""Show how pruning shrinks split-learning epoch time and cut-layer
payload, using the analytic time model (no training involved).
"""

import flexprune as fp
from flexprune.pruning import apply_plan, build_score_table, magnitude_scores, plan_prune
from flexprune.splitsim import ComputeModel, LinkModel, epoch_time

link = LinkModel()       # 150 Mbit/s up, 20 Mbit/s down
compute = ComputeModel()  # 5 GMAC/s device, 50 GMAC/s server

print(f"{'rho':>4s} {'total s':>8s} {'device':>8s} {'server':>8s} "
      f"{'uplink':>8s} {'downlink':>9s} {'MB/epoch':>9s}")
for rho in (0.0, 0.2, 0.4, 0.6, 0.8):
    net = fp.build_cnn(conv_channels=(8, 16), dense_units=384, seed=1)
    if rho > 0:
        table = build_score_table(net, magnitude_scores(net), None, 0.0)
        apply_plan(net, plan_prune(table, rho))
    bd = epoch_time(net, link, compute, batch_size=100, batches_per_epoch=16)
    mb = (bd.bytes_up + bd.bytes_down) / 1e6
    print(f"{rho:4.1f} {bd.total:8.3f} {bd.t_device_compute:8.3f} "
          f"{bd.t_server_compute:8.3f} {bd.t_uplink:8.3f} {bd.t_downlink:9.3f} {mb:9.1f}")
