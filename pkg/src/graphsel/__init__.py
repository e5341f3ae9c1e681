"""Document semantic graphs and edge-aware graph attention for knowledge selection.

The package turns AMR-parsed, coreference-annotated documents into
heterogeneous document graphs, attaches per-turn dialog context nodes, and
trains a typed graph attention network (on a small built-in autodiff core)
to rank knowledge sentences and concepts for each dialog turn.
"""

__version__ = "0.1.0"
