// Scratch experiment: accuracy/timing at the benchmark's working scale.
use doa_core::dataset::{generate_dataset, split, DatasetParams, Split};
use doa_core::music::music_accuracy;
use doa_core::nn::{evaluate_accuracy, train, ArchConfig, Model, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let l: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let snr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let n: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(500);
    let r: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(45.0);
    let a: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(180.0);

    let params = DatasetParams {
        antenna_count: l,
        resolution_deg: r,
        angle_range_deg: a,
        snr_db: snr,
        observations_per_class: n,
        samples_per_observation: 128,
        master_seed: 42,
    };
    let t0 = std::time::Instant::now();
    let ds = split(generate_dataset(&params).unwrap()).unwrap();
    let k = params.class_count().unwrap();
    println!("gen: {:.2}s (K={k}, {} obs)", t0.elapsed().as_secs_f64(), ds.len());

    let t1 = std::time::Instant::now();
    let model = Model::build([2 * l, 128, 1], k, &ArchConfig::default(), 7).unwrap();
    let cfg = TrainConfig { epochs, seed: 8, ..TrainConfig::default() };
    let out = train(model, &ds, &cfg).unwrap();
    let train_secs = t1.elapsed().as_secs_f64();

    let test = ds.tensor_for_split(Split::Test).unwrap();
    let acc = evaluate_accuracy(&out.model, &test).unwrap();
    let best_val = out.metrics.iter().map(|m| m.val_accuracy).fold(0.0, f64::max);
    let t2 = std::time::Instant::now();
    let music = music_accuracy(&ds).unwrap();
    println!(
        "L={l} R={r} A={a} SNR={snr}: cnn test {acc:.3} (best val {best_val:.3}) in {train_secs:.1}s; music {music:.3} in {:.1}s",
        t2.elapsed().as_secs_f64()
    );
    for m in out.metrics.iter().step_by(5) {
        println!("  epoch {:>3}: loss {:.4} val {:.3}", m.epoch, m.train_loss, m.val_accuracy);
    }
}
