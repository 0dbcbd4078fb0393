use aisacs_core::domain::label_histogram;
use aisacs_core::eval::roc_auto;
use aisacs_core::features::build_examples;
use aisacs_core::nn::train;
use aisacs_core::synth::{generate_cohort, Preset};
use aisacs_core::{ClassWeights, Direction, FeatureConfig, Medication, NetConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

fn pipeline(c: &mut Criterion) {
    let cohort = generate_cohort(&Preset::S2.spec(0)).unwrap().ground_truth;
    let features = FeatureConfig::default();
    let examples = build_examples(&cohort, &features);

    c.bench_function("build_examples/s2", |b| b.iter(|| build_examples(black_box(&cohort), &features)));

    for med in [Medication::Esa, Medication::Iron] {
        let net = NetConfig::for_medication(med).scaled(3, 32, 1);
        let weights = ClassWeights::inverse_frequency(&label_histogram(&cohort, med), med);
        let name = med.as_str().to_ascii_lowercase();
        c.bench_function(&format!("train_epoch/{name}/3x32"), |b| {
            b.iter(|| train(med, &features, &net, black_box(&examples), &weights).unwrap())
        });
        let model = train(med, &features, &net, &examples, &weights).unwrap().model;
        c.bench_function(&format!("predict/{name}/3x32"), |b| b.iter(|| model.predict(black_box(&examples)).unwrap()));
    }

    let model = train(
        Medication::Esa,
        &features,
        &NetConfig::for_medication(Medication::Esa).scaled(3, 32, 1),
        &examples,
        &ClassWeights::uniform(Medication::Esa),
    )
    .unwrap()
    .model;
    let probs = model.predict(&examples).unwrap();
    let refs: Vec<Direction> = examples.iter().map(|e| e.esa_label).collect();
    c.bench_function("roc/s2", |b| {
        b.iter_batched(|| probs.clone(), |p| roc_auto(&p, black_box(&refs)).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
