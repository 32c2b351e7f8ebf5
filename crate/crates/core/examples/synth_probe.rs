use rand::Rng;
use seqrule::data::{gen_synthetic, SyntheticKind};
use seqrule::logic::{format_rule, rule_metrics};
use seqrule::nn::rng_from_seed;
use seqrule::rulenet::program_tensor;
use seqrule::symbolize::SymbolizerConfig;
use seqrule::train::{
    discretize_split, extract_scored_rules, predict_score, train_joint, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let kind = if args.get(3).map(|s| s == "trig").unwrap_or(false) {
        SyntheticKind::Trigonometric
    } else {
        SyntheticKind::Triangular
    };
    let mut wins = 0;
    for seed in 0..10u64 {
        let start = std::time::Instant::now();
        let ds = gen_synthetic(kind, 2, 0.1f64.sqrt(), &mut rng_from_seed(1000 + seed)).unwrap();
        let cfg = TrainConfig {
            symbolizer: SymbolizerConfig {
                window_len: 5,
                regions: 3,
                clusters: 3,
                embed_dim: 4,
                alpha: 1000.0,
            },
            rulenet_hidden: vec![8],
            rules: 4,
            pretrain_epochs: 30,
            joint_epochs: epochs,
            batch_size: 4,
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let mut rng = rng_from_seed(seed);
        let model = match train_joint(&ds, &cfg, &mut rng) {
            Ok(m) => m,
            Err(e) => {
                println!("seed {seed}: diverged: {e}");
                continue;
            }
        };
        let h0 = &model.loss_history[0];
        let hl = model.loss_history.last().unwrap();
        let scores: Vec<f64> = ds
            .train
            .iter()
            .map(|s| predict_score(&model, &s.values).unwrap())
            .collect();
        let labels: Vec<usize> = ds.train.iter().map(|s| s.label).collect();
        let mp = program_tensor(&model.rulenet).unwrap();
        let max_entry = mp
            .matrix
            .data
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let train_disc = discretize_split(&model, &ds.train).unwrap();
        let rules = extract_scored_rules(&model, &train_disc, 1).unwrap();
        let test_disc = discretize_split(&model, &ds.test).unwrap();
        let verdict = if let Some(top) = rules.first() {
            let m = rule_metrics(top, &test_disc, cfg.symbolizer.clusters).unwrap();
            let ok = m.precision == Some(1.0) && m.recall == 1.0;
            if ok {
                wins += 1;
            }
            format!(
                "top {} -> test p={:?} r={} {}",
                format_rule(top),
                m.precision,
                m.recall,
                if ok { "WIN" } else { "ميss" }
            )
        } else {
            "no rules".to_string()
        };
        println!(
            "seed {seed}: loss {:.3}->{:.3} (rule {:.3}->{:.3}) scores {:?} labels {labels:?} mp_max {max_entry:.2} rules {} | {verdict} [{:.1}s]",
            h0.total,
            hl.total,
            h0.rule,
            hl.rule,
            scores.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>(),
            rules.len(),
            start.elapsed().as_secs_f64(),
        );
        let _ = rng.random::<f64>();
    }
    println!("wins: {wins}/10");
}
