//! Orbit search. (under construction)
