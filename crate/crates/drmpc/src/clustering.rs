//! Stage-cost clustering placeholder.
