from .batch import GraphBatch, make_batch, pair_index
from .decoder import (AtomDecoder, DecodeTrace, EdgeDecoder, PropertyHead, assemble_molecule,
                      edge_features, edge_masks, edge_probabilities)
from .encoder import LOGVAR_MAX, LOGVAR_MIN, Encoder, reparameterize
from .vae import ModelConfig, MolVAE
