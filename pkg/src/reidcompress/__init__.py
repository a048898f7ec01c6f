"""Re-identification embedding compression at desk scale.

Train a small encoder with triplet and ID-classifier losses on synthetic
multi-view identity data, shrink its embeddings by slicing, a learned
low-rank head, iterative structured pruning or int8 quantization-aware
training, and measure mAP / rank-k against the compression ratio.
"""

from .dataset import (Dataset, QueryGallerySplit, TripletBatch, generate_synthetic,
                      load_embeddings, sample_triplets, split_identities, split_query_gallery)
from .errors import (ConfigurationError, DimensionError, EvaluationError, StoreFormatError,
                     TrainingDivergedError)
from .model import (ClassifierParams, CompressionMode, DimSelection, EncoderParams, LowRankHead,
                    embed_for_retrieval, encode, init_params)
from .retrieval import EvalReport, evaluate_config, mean_average_precision, rank_k_accuracy
from .store import (QuantizedStore, dequantize, quantize_uniform, read_store, size_report,
                    write_store)
from .training import (TrainConfig, TrainedModel, iterative_prune_train, select_prune_dims,
                       train)

__version__ = "0.1.0"
