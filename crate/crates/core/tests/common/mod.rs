#![allow(dead_code)]

pub mod fixtures;
pub mod grad;
pub mod oracle;
pub mod run;
