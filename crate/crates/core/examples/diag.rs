use bcpnn_core::config::ExperimentConfig;
use bcpnn_core::dataio::EncodedDataset;
use bcpnn_core::pipeline::{eval_ortho, train_in_memory, pick_eval_indices, evaluate_hidden};
use bcpnn_core::synth;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_scale(0.25).unwrap();
    cfg.seed = 7;

    let n_train: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10000);
    let alpha: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(cfg.alpha);
    cfg.alpha = alpha;
    let train = EncodedDataset::from_images(synth::generate_images(n_train, 100));
    let test = EncodedDataset::from_images(synth::generate_images(2000, 200));
    let t0 = std::time::Instant::now();
    let container = train_in_memory(&cfg, &train, true).unwrap();
    println!("train: {:.2}s", t0.elapsed().as_secs_f64());

    let idx = pick_eval_indices(&cfg, test.len());
    let hidden = evaluate_hidden(&container, &test, &idx).unwrap();
    let g = container.feedforward.hidden_geometry();
    let mut mean_peak = 0.0;
    for rep in &hidden.feedforward {
        let mut p = 0.0;
        for hc in rep.chunks(g.minicolumns()) {
            p += hc.iter().fold(0.0f64, |a, &b| a.max(b));
        }
        mean_peak += p / g.num_hypercolumns() as f64;
    }
    println!("mean peak ff activity: {:.4}", mean_peak / hidden.feedforward.len() as f64);
    let conv = hidden.converged.iter().filter(|&&c| c).count();
    let mut steps: Vec<usize> = hidden.steps.iter().map(|s| s.unwrap_or(20)).collect();
    steps.sort();
    println!("converged: {}/{} median steps {}", conv, idx.len(), steps[steps.len()/2]);

    let t1 = std::time::Instant::now();
    let report = eval_ortho(&container, &test, Some(&train)).unwrap();
    println!("ortho eval: {:.2}s", t1.elapsed().as_secs_f64());
    for (k, r, n) in &report.rows {
        println!("{k}: {r:.4} (n={n})");
    }
}
