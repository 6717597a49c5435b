//! Network zoo.
