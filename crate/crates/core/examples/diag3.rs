use bcpnn_core::analysis::cosine_similarity;
use bcpnn_core::config::ExperimentConfig;
use bcpnn_core::dataio::{self, EncodedDataset};
use bcpnn_core::pipeline::{evaluate_hidden, pick_eval_indices, train_in_memory, train_input_attractor};
use bcpnn_core::synth;

// cluster states at 0.95 similarity, report count and class purity
fn mode_stats(states: &[Vec<f64>], labels: &[u8], tag: &str) {
    let mut leaders: Vec<(Vec<f64>, Vec<u8>)> = Vec::new();
    for (s, &l) in states.iter().zip(labels) {
        let mut placed = false;
        for (lead, members) in leaders.iter_mut() {
            if cosine_similarity(lead, s) > 0.95 {
                members.push(l);
                placed = true;
                break;
            }
        }
        if !placed {
            leaders.push((s.clone(), vec![l]));
        }
    }
    let mut purity_weighted = 0.0;
    let mut total = 0usize;
    for (_, members) in &leaders {
        let mut counts = [0usize; 10];
        for &m in members {
            counts[m as usize] += 1;
        }
        purity_weighted += *counts.iter().max().unwrap() as f64;
        total += members.len();
    }
    println!(
        "{tag}: {} modes over {} states, weighted purity {:.3}, largest {}",
        leaders.len(),
        total,
        purity_weighted / total as f64,
        leaders.iter().map(|(_, m)| m.len()).max().unwrap()
    );
}

fn main() {
    let rec_epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let mut cfg = ExperimentConfig::default();
    cfg.apply_scale(0.25).unwrap();
    cfg.recurrent_epochs = rec_epochs;
    cfg.seed = 7;
    let train = EncodedDataset::from_images(synth::generate_images(10000, 100));
    let test = EncodedDataset::from_images(synth::generate_images(2000, 200));
    let container = train_in_memory(&cfg, &train, false).unwrap();
    let idx = pick_eval_indices(&cfg, test.len());
    let labels: Vec<u8> = idx.iter().map(|&k| test.label(k).unwrap()).collect();

    let hidden = evaluate_hidden(&container, &test, &idx).unwrap();
    mode_stats(&hidden.attractor, &labels, "hidden attractor");
    let conv = hidden.converged.iter().filter(|&&c| c).count();
    let mut steps: Vec<usize> = hidden.steps.iter().map(|s| s.unwrap_or(20)).collect();
    steps.sort();
    println!("hidden conv {}/{} median {}", conv, idx.len(), steps[steps.len() / 2]);

    let baseline = train_input_attractor(&cfg, Some(&train), &test, &idx).unwrap();
    let mut base_states = Vec::new();
    let mut base_conv = 0;
    for &k in &idx {
        let (s, c, _) = baseline.attractor_final(&test.activity(k), None).unwrap();
        if c { base_conv += 1; }
        base_states.push(dataio::on_unit_values(&s));
    }
    mode_stats(&base_states, &labels, "input attractor");
    println!("baseline conv {}/{}", base_conv, idx.len());
}
