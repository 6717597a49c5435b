//! Transfer losses.
