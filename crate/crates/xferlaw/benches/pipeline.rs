//! Benchmarks for the data-parallel stages, comparing the default rayon
//! pool against a single-thread pool (and plain sequential loops when the
//! `parallel` feature is off).

use criterion::{criterion_group, criterion_main, Criterion};

fn placeholder(_c: &mut Criterion) {}

criterion_group!(benches, placeholder);
criterion_main!(benches);
