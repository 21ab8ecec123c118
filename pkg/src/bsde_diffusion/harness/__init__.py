"""Experiment harness: oracles, statistics, benchmark, pipelines, CLI."""

from .analytic import AnalyticDistribution, analytic_perturbed_score, make_score_fn
from .mannwhitney import StatsResult, mann_whitney_u
