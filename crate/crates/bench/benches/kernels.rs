//! Benchmarks for the hot kernels: block generation, quantized entropy,
//! pairwise energies, and the enumeration decoder.

use criterion::{criterion_group, criterion_main, Criterion};

use midcs_core::dimension::{entropy_of_cell_rows, quantize_cell};
use midcs_core::energy::{energy_sum, DEFAULT_CAP_LOG2};
use midcs_core::experiments::DecoderConfig;
use midcs_core::proc_gen::{sample_process, ProcessKind, ProcessSpec};
use midcs_core::sensing::sample_matrix;

fn generation(c: &mut Criterion) {
    let spec = ProcessSpec::new(ProcessKind::IidMixed { p: 0.3 });
    c.bench_function("sample_iid_mixed_16x10000", |b| {
        b.iter(|| sample_process(&spec, 16, 10_000, 7).unwrap())
    });
}

fn quantized_entropy(c: &mut Criterion) {
    let batch = sample_process(&ProcessSpec::new(ProcessKind::IidUniform), 4, 50_000, 7).unwrap();
    c.bench_function("quantize_entropy_4x50000_k64", |b| {
        b.iter(|| {
            let cells: Vec<i64> = batch.data.iter().map(|&v| quantize_cell(v, 64)).collect();
            entropy_of_cell_rows(&cells, 4).unwrap()
        })
    });
}

fn pair_energy(c: &mut Criterion) {
    let batch = sample_process(&ProcessSpec::new(ProcessKind::IidUniform), 2, 2_000, 7).unwrap();
    c.bench_function("energy_sum_2000_points", |b| {
        b.iter(|| energy_sum(&batch, 0.5, DEFAULT_CAP_LOG2).unwrap())
    });
}

fn sparse_decode(c: &mut Criterion) {
    let batch = sample_process(&ProcessSpec::new(ProcessKind::IidMixed { p: 0.25 }), 20, 4, 7)
        .unwrap();
    let a = sample_matrix(10, 20, 11).unwrap();
    let decoder = DecoderConfig::SparseEnum { s_max: 6, budget: 30_000_000 };
    c.bench_function("sparse_enum_n20_m10", |b| {
        b.iter(|| {
            for t in 0..batch.trials {
                let y = a.apply(batch.row(t));
                decoder.decode(&y, &a).unwrap();
            }
        })
    });
}

criterion_group!(kernels, generation, quantized_entropy, pair_energy, sparse_decode);
criterion_main!(kernels);
