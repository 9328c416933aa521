from .embeddings import (
    EmbeddingSet,
    load_embeddings,
    make_embedding_set,
    save_embeddings,
    save_embeddings_csv,
)
from .episodes import SUPPORTED_SHOTS, FewShotTask, class_generator, sample_few_shot
from .synthetic import (
    OracleParameters,
    SyntheticDataset,
    SyntheticSpec,
    bayes_oracle,
    bayes_oracle_predict,
    gen_synthetic,
)

__all__ = [
    "EmbeddingSet",
    "load_embeddings",
    "make_embedding_set",
    "save_embeddings",
    "save_embeddings_csv",
    "SUPPORTED_SHOTS",
    "FewShotTask",
    "class_generator",
    "sample_few_shot",
    "OracleParameters",
    "SyntheticDataset",
    "SyntheticSpec",
    "bayes_oracle",
    "bayes_oracle_predict",
    "gen_synthetic",
]
