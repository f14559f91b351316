use bcpnn_core::config::ExperimentConfig;
use bcpnn_core::dataio::EncodedDataset;
use bcpnn_core::pipeline::train_in_memory;
use bcpnn_core::synth;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_scale(0.25).unwrap();
    cfg.seed = 7;
    let n_train = 3000;
    cfg.train_limit = n_train;
    cfg.recurrent_epochs = 1;
    let train = EncodedDataset::from_images(synth::generate_images(n_train, 100));
    let test = EncodedDataset::from_images(synth::generate_images(200, 200));
    let container = train_in_memory(&cfg, &train, false).unwrap();
    let ff = &container.feedforward;
    let g = ff.hidden_geometry();
    let m = g.minicolumns();

    // winner histogram per hypercolumn over 200 test samples
    let mut hist = vec![vec![0usize; m]; g.num_hypercolumns()];
    let mut signatures = std::collections::HashSet::new();
    for k in 0..test.len() {
        let h = ff.encode(&test.activity(k)).unwrap();
        let mut sig = Vec::new();
        for t in 0..g.num_hypercolumns() {
            let hc = &h.values()[g.hypercolumn_range(t)];
            let mut best = 0;
            for (i, &v) in hc.iter().enumerate() {
                if v > hc[best] { best = i; }
            }
            hist[t][best] += 1;
            sig.push(best as u8);
        }
        signatures.insert(sig);
    }
    println!("distinct encodings over 200 test samples: {}", signatures.len());
    for t in 0..4 {
        let mut h: Vec<(usize, usize)> = hist[t].iter().cloned().enumerate().filter(|&(_, c)| c > 0).collect();
        h.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        println!("hypercolumn {t}: active units {} top {:?}", h.len(), &h[..h.len().min(6)]);
    }
    // bias spread
    let b = ff.params().bias();
    let bmin = b.iter().cloned().fold(f64::MAX, f64::min);
    let bmax = b.iter().cloned().fold(f64::MIN, f64::max);
    println!("bias range: [{bmin:.3}, {bmax:.3}]");
    // weight magnitude
    let mut wmax = 0.0f64;
    for t in 0..g.num_hypercolumns() {
        for &w in ff.params().weight_block(t) {
            wmax = wmax.max(w.abs());
        }
    }
    println!("max |w|: {wmax:.3}");
}
