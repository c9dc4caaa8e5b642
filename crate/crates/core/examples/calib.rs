// Scratch calibration probe for the synthetic feature geometry.
use odamot_core::linmodel::batch_train;
use odamot_core::sim::{generate, make_pretrain_set, ScenarioConfig};

fn main() {
    let base = ScenarioConfig::default();
    for (proto, noise, inward, lreg) in [
        (1.0, 0.50, 0.90, 3e-3),
        (1.0, 0.55, 0.90, 3e-3),
        (1.0, 0.55, 0.85, 3e-3),
        (1.1, 0.55, 0.90, 3e-3),
        (1.0, 0.60, 0.85, 3e-3),
    ] {
        println!("--- proto={proto} noise={noise} inward={inward} l2={lreg}");
        for mult in [0.0, 1.0, 2.0, 4.0] {
            let cfg = ScenarioConfig {
                proto_norm: proto,
                shift_inward: inward,
                feature_noise: noise,
                shift: mult * noise,
                seed: 3,
                n_frames: 40,
                ..base.clone()
            };
            let (pos, neg) = make_pretrain_set(&cfg, 600, 1200, 42);
            let model = batch_train(&pos[..400], &neg[..800], lreg, 2).unwrap();
            let acc = pos[400..].iter().filter(|f| model.predict_prob(f).unwrap() > 0.5).count()
                + neg[800..].iter().filter(|f| model.predict_prob(f).unwrap() < 0.5).count();
            let acc = acc as f64 / 600.0;
            let norm: f64 = model.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
            let s = generate(&cfg);
            let mut per_obj: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
            let mut bg_over = 0usize;
            let mut bg_total = 0usize;
            let mut frames = 0usize;
            for t in 0..cfg.n_frames {
                let b = s.bundle(t);
                frames += 1;
                for (id, g) in &b.gt {
                    let best = b
                        .proposals
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| odamot_core::geom::iou(p, g) >= 0.5)
                        .map(|(i, _)| model.predict_prob(&b.features[i]).unwrap())
                        .fold(0.0f64, f64::max);
                    let e = per_obj.entry(*id).or_insert((0, 0));
                    e.1 += 1;
                    if best >= 0.5 {
                        e.0 += 1;
                    }
                }
                for (i, p) in b.proposals.iter().enumerate() {
                    let best = b.gt.iter().map(|(_, g)| odamot_core::geom::iou(p, g)).fold(0.0f64, f64::max);
                    if best == 0.0 {
                        bg_total += 1;
                        if model.predict_prob(&b.features[i]).unwrap() >= 0.5 {
                            bg_over += 1;
                        }
                    }
                }
            }
            let mut rates: Vec<f64> = per_obj.values().map(|(h, n)| *h as f64 / *n as f64).collect();
            rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!(
                "shift={:4.2} acc={:.3} |w|={:5.2} obj detect rates {:?}  bg FP/frame {:.3}",
                cfg.shift, acc, norm,
                rates.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>(),
                bg_over as f64 / frames as f64
            );
        }
    }
}
