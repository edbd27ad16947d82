//! Run configuration. (under construction)
