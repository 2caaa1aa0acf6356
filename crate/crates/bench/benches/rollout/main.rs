mod designs;
mod estimators;
mod search;

use criterion::{criterion_group, criterion_main};

criterion_group!(benches, designs::bench, estimators::bench, search::bench);
criterion_main!(benches);
