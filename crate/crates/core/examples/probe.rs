// joint scan: both acceptance directions across noise levels
use tgd_core::config::{AblateTerm, RunConfig};
use tgd_core::data::{long_tail_subsample, synth_dataset};
use tgd_core::metrics::MetricsWriter;
use tgd_core::train::{evaluate, pretrain_teacher, Distiller};

fn candidate(noise: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.noise = noise;
    cfg.sampled_per_instance = 3;
    cfg.alpha = 0.02;
    cfg.beta = 0.02;
    cfg.gamma = 0.03;
    cfg
}

fn main() {
    for noise in [0.30f64, 0.32, 0.34] {
        let cfg = candidate(noise);
        let splits = synth_dataset(cfg.classes, cfg.per_class, cfg.channels, cfg.height, cfg.width, cfg.noise, cfg.data_seed).unwrap();
        let run = |train: &tgd_core::data::LabeledDataset, teacher: &tgd_core::net::ToyNet, seed: u64, ablate: Vec<AblateTerm>| -> f64 {
            let mut c = candidate(noise);
            c.seed = seed;
            c.ablate = ablate;
            let mut d = Distiller::new(c, teacher.clone()).unwrap();
            let mut metrics = MetricsWriter::in_memory();
            d.run(train, &splits.test, &mut metrics, None).unwrap();
            metrics.records.iter().rev().find(|r| r.split == "eval").unwrap().accuracy
        };
        let kd_ab = vec![AblateTerm::Inner, AblateTerm::Local, AblateTerm::Global];
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let mut m = MetricsWriter::in_memory();
        let teacher = pretrain_teacher(&cfg, &splits.train, None, &mut m).unwrap();
        let ttrain = evaluate(&teacher, &splits.train, 16).unwrap();
        let mut dk = vec![]; let mut dng = vec![];
        for seed in 1..=5u64 {
            let f = run(&splits.train, &teacher, seed, vec![]);
            let k = run(&splits.train, &teacher, seed, kd_ab.clone());
            let ng = run(&splits.train, &teacher, seed, vec![AblateTerm::Global]);
            dk.push(f-k); dng.push(f-ng);
        }
        let mut at = std::collections::BTreeMap::new();
        for rho in [1.0f64, 50.0] {
            let lt = long_tail_subsample(&splits.train, rho, 555).unwrap();
            let mut m2 = MetricsWriter::in_memory();
            let t2 = pretrain_teacher(&cfg, &lt, None, &mut m2).unwrap();
            let mut fl = vec![]; let mut kl = vec![];
            for seed in 1..=5u64 {
                fl.push(run(&lt, &t2, seed, vec![]));
                kl.push(run(&lt, &t2, seed, kd_ab.clone()));
            }
            at.insert(rho as u64, (mean(&fl), mean(&kl)));
        }
        let (f1, k1) = at[&1]; let (f50, k50) = at[&50];
        println!("noise={noise}: teacher_train={ttrain:.3} | c7: f-kd={:+.4} f-ng={:+.4} | c8 drops full={:.4} kd={:.4} ok={}",
            mean(&dk), mean(&dng), f1-f50, k1-k50, f1-f50 <= k1-k50);
    }
}
