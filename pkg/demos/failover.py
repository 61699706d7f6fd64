"""Kill an aggregator mid-training and show the recovery in the event log.

    python3 demos/failover.py
"""

from asyncfl import experiments
from asyncfl.scenario import resolve

scenario = resolve("failover_aggregator")
result, summary = experiments.run(scenario)
interesting = {"failed", "declared_dead", "buffer_lost", "task_reassigned"}
for rec in result.log:
    if rec.transition in interesting and not rec.entity.startswith("session/"):
        print(f"t={rec.t:8.2f}  {rec.entity:<16} {rec.transition}")
task = summary["tasks"]["lm"]
print(f"stop reason: {summary['stop_reason']}; reached loss {task['final_loss']:.3f} "
      f"at version {task['versions']}")
