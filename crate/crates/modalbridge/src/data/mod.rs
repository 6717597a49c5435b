//! Synthetic paired-modality dataset.
