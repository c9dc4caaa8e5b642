// Scratch harness for the three-mode ordering experiment.
use odamot_core::linmodel::batch_train;
use odamot_core::metrics::clear_mot;
use odamot_core::mtl::MtlConfig;
use odamot_core::sim::{generate, make_pretrain_set, ScenarioConfig};
use odamot_core::tracker::{Mode, Tracker, TrackerConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let lambda: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let n_frames: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200);
    let n_neg: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);

    let start = Instant::now();
    let mut medians: Vec<(Mode, f64, f64)> = Vec::new();
    for mode in [Mode::Odamot, Mode::Cit, Mode::Cft] {
        let mut motas = Vec::new();
        let mut recalls = Vec::new();
        for seed in 0..5u64 {
            let scfg = ScenarioConfig { n_frames, seed, ..ScenarioConfig::default() };
            let scenario = generate(&scfg);
            let (pos, neg) = make_pretrain_set(&scfg, 400, 800, 9000 + seed);
            let pretrained = batch_train(&pos, &neg, 3e-3, 2).unwrap();
            let tcfg = TrackerConfig {
                mode,
                seed,
                mtl: MtlConfig { epochs, lambda, n_neg, ..MtlConfig::default() },
                ..TrackerConfig::default()
            };
            let mut tracker = Tracker::new(tcfg, pretrained);
            let features = scenario.features();
            for t in 0..scfg.n_frames {
                tracker.step(&scenario.bundle(t), &features).unwrap();
            }
            let hyp = tracker.history_sequence(scfg.n_frames, "Car");
            let gt = scenario.ground_truth();
            let r = clear_mot(&gt, &hyp, 0.5).unwrap();
            motas.push(r.mota);
            recalls.push(r.recall);
            eprintln!(
                "{} seed {}: MOTA {:.3} Rec {:.3} Prec {:.3} IDS {} FRG {} FP {} FN {}",
                mode, seed, r.mota, r.recall, r.precision, r.id_switches, r.fragmentations,
                r.false_positives, r.misses
            );
        }
        motas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push((mode, motas[2], recalls[2]));
    }
    println!("epochs={epochs} lambda={lambda} frames={n_frames} elapsed={:.1}s", start.elapsed().as_secs_f64());
    for (mode, mota, rec) in &medians {
        println!("{mode}: median MOTA {mota:.4} median Rec {rec:.4}");
    }
}
