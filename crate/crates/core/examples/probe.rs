use peakclass_core::config::AppConfig;
use peakclass_core::eval::{self, ClassifierKind};
use peakclass_core::model::FeatureKind;
use peakclass_core::synth::{generate_dataset, QualitySpec, TraceSpec};
use peakclass_core::train::{self, TrainOptions};

fn run(stds: [f64; 3], seeds: u64, titles: usize) {
    let mut acc_p = 0.0;
    let mut acc_n = 0.0;
    let mut acc_l = 0.0;
    let mut acc_a = 0.0;
    for seed in 0..seeds {
        let spec = TraceSpec {
            n_titles: titles,
            qualities: vec![
                QualitySpec { label: 1, name: "360P".into(), mean_bits: 1.2e6, std_bits: stds[0] },
                QualitySpec { label: 2, name: "480P".into(), mean_bits: 2.0e6, std_bits: stds[1] },
                QualitySpec { label: 3, name: "720P".into(), mean_bits: 4.0e6, std_bits: stds[2] },
            ],
            seed: 1000 + seed,
            ..TraceSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        let cfg = AppConfig::default();
        let names = spec.quality_names();
        let opts = TrainOptions {
            with_naive: true,
            with_lz78: false,
            seed: 2000 + seed,
            ..TrainOptions::default()
        };
        let model = train::train_model(&cfg, &ds.train, names.clone(), &opts).unwrap();
        acc_p += eval::evaluate(&cfg, &model, &ds.test_fixed, ClassifierKind::Proposed)
            .unwrap()
            .accuracy();
        acc_n += eval::evaluate(&cfg, &model, &ds.test_fixed, ClassifierKind::Naive)
            .unwrap()
            .accuracy();
        let mut adaptive = ds.test_adaptive_seen.clone();
        adaptive.extend(ds.test_adaptive_unseen.clone());
        acc_a += eval::evaluate(&cfg, &model, &adaptive, ClassifierKind::Proposed)
            .unwrap()
            .accuracy();

        let td_opts = TrainOptions {
            feature_kind: FeatureKind::Timediff,
            with_lz78: true,
            seed: 3000 + seed,
            ..TrainOptions::default()
        };
        let td_model = train::train_model(&cfg, &ds.train, names, &td_opts).unwrap();
        acc_l += eval::evaluate(&cfg, &td_model, &ds.test_fixed, ClassifierKind::Lz78)
            .unwrap()
            .accuracy();
    }
    let n = seeds as f64;
    println!(
        "stds={:?} titles={titles} seeds={seeds}: proposed={:.4} naive={:.4} lz78-td={:.4} adaptive={:.4}",
        stds,
        acc_p / n,
        acc_n / n,
        acc_l / n,
        acc_a / n
    );
}

fn main() {
    let t0 = std::time::Instant::now();
    run([0.18e6, 0.28e6, 0.75e6], 5, 40);
    println!("elapsed {:?}", t0.elapsed());
    run([0.25e6, 0.40e6, 0.80e6], 5, 40);
    println!("elapsed {:?}", t0.elapsed());
}
