//! Training pipeline.
