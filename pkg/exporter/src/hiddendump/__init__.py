"""Hidden-state exporter: pretrained causal LM -> boundary-dump directory."""

from .export import (
    ExportError,
    ExportJob,
    capture_boundaries,
    export_hidden_states,
    find_decoder_blocks,
    reference_cosine_dissimilarity,
)
from .sdt import write_boundary_dump, write_tensor

__version__ = "0.1.0"
