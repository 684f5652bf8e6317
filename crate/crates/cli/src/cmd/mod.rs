pub mod asympt;
pub mod empirical;
pub mod ge;
pub mod partition;
pub mod selftest;
pub mod simulate;
