//! Result serialization. (under construction)
