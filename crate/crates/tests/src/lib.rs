//! Reference oracles used to check the library, written without calling
//! into the code they check.

pub mod reference;
