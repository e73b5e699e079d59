//! Train on the planted-cluster dataset and print recovery metrics for the
//! default model and its ablations. Usage: `planted [seed...]`.

use cuberec::dataset::{split_group_interactions, Split};
use cuberec::eval::{evaluate, AblationToggle};
use cuberec::model::ComposerKind;
use cuberec::synthetic::{generate, SyntheticConfig};
use cuberec::trainer::{train, TrainConfig};

fn main() {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seed"))
        .collect();
    let seeds = if seeds.is_empty() { vec![42] } else { seeds };

    for seed in seeds {
        let started = std::time::Instant::now();
        let synth = SyntheticConfig::default();
        let ds = generate(&synth, seed).expect("generate");
        let ds = split_group_interactions(&ds, (0.8, 0.1, 0.1), seed).expect("split");

        let cfg = TrainConfig {
            variant: ComposerKind::Geometric,
            dim: 16,
            pretrain_epochs: 60,
            stage2_epochs: 100,
            seed,
            ..TrainConfig::default()
        };

        let (model, report) = train(&ds, &cfg, None).expect("train");
        let default_recall = evaluate(&model, &ds, &[10], Split::Test)
            .expect("eval")
            .overall[0]
            .recall;
        let pre_epochs = report.pretrain.len();
        let s2_epochs = report.stage2.len();

        let mut results = vec![("default".to_string(), default_recall)];
        for toggle in [AblationToggle::RemoveSsl, AblationToggle::PointDistance] {
            let mut ab_cfg = cfg.clone();
            toggle.apply(&mut ab_cfg);
            let (ab_model, _) = train(&ds, &ab_cfg, None).expect("train ablation");
            let recall = evaluate(&ab_model, &ds, &[10], Split::Test)
                .expect("eval ablation")
                .overall[0]
                .recall;
            results.push((toggle.name().to_string(), recall));
        }

        println!(
            "seed {seed}: {:?} (pretrain {pre_epochs} ep, stage2 {s2_epochs} ep, {:.1}s)",
            results,
            started.elapsed().as_secs_f64()
        );
    }
}
