"""Toolkit for building relevance classifiers for new cyber-threat events from
a handful of labeled posts.

Subpackages cover the full loop: corpus ingestion and annotation merging
(`corpus`), model-capability interfaces with deterministic mocks (`backends`),
class-conditioned text generation (`augment`), embedding-centroid filtering
with an expert review queue (`filtering`, `review_service`), cloze-pattern
training objectives (`fewshot`), staged fine-tuning (`pipeline`), and the
multi-seed evaluation harness (`evalharness`). `ctikit.cli` wires everything
into one command.
"""

__version__ = "0.1.0"
