"""Causally guided discovery of subgoal hierarchies: simulators, discovery, strategies and cost analysis."""
