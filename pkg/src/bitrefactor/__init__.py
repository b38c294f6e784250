"""Precision-progressive refactoring of floating-point arrays.

Arrays are split into hierarchical levels, each level is turned into
negabinary bitplanes, groups of planes are compressed with the cheapest of
three lossless codecs and the result is stored in a seekable stream. Readers
fetch only the groups needed for a requested L-inf tolerance, or for a
tolerance on a derived quantity over several variables.
"""
from .bitplane import Layout
from .container import (FetchPlan, Reader, RetrievalState, StreamMeta, load_state, plan_retrieval, reconstruct,
                        refactor, refactor_batch, save_state)
from .decomposer import Decomposer, decompose, recompose
from .errors import (BadBitplaneCount, CorruptPayload, EmptyInput, NonFiniteInput, RefactorError, ShapeMismatch,
                     ShortInput, StageFailure, UnknownMethodTag, UnreachableTolerance)
from .lossless import GroupingPolicy, Method
from .qoi import QoiSpec, Strategy, progressive_qoi_retrieve

__version__ = "0.1.0"
