"""Train the same task with buffered asynchronous and synchronous rounds.

Both runs see the same simulated population. The script prints how long
each took to reach the target loss and how many uploads it cost.

    python3 demos/async_vs_sync.py
"""

from asyncfl import experiments
from asyncfl.scenario import resolve

a = resolve("async_basic")
b = resolve("sync_basic")
report = experiments.compare(a, b, seeds=(0,))
run = report["runs"][0]
for label, side in (("async", run["a"]), ("sync", run["b"])):
    print(f"{label:>5}: target loss at {side['time_to_target_loss']:.0f} s after "
          f"{side['trips_to_target']} uploads, {side['updates_per_hour']:.0f} model updates/hour")
print(f"async is {report['mean_time_ratio']:.1f}x faster and uses "
      f"{report['mean_trip_ratio']:.1f}x fewer uploads")
