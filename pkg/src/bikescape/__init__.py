"""bikescape: a multi-agent pipeline that edits street-view imagery into
bicycle-infrastructure design scenarios, with candidate re-ranking, binary
compliance checks, and human review checkpoints."""

__version__ = "0.1.0"
