"""Swarm-vs-swarm engagement simulation and TD3 training.

A defending swarm is steered by group-level control distributions: a policy
picks how many groups to split the swarm into and a Normal(mean, variance)
acceleration command per group; every agent samples its own control from its
group's distribution. Observations are Gaussian-mixture summaries of both
swarms' positions, so the state size is independent of agent count.
"""

__version__ = "0.1.0"
