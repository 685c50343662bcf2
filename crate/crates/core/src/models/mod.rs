pub mod gibbs;
pub mod posterior;
