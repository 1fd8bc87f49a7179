//! Acceptance gate: nine checks covering straight-through exactness,
//! gradient routing, loss and EER oracles, codec sanity, toy-scale training
//! trends, determinism, and structural contracts. Each check is one test
//! whose name carries its criterion number; the body prints a PASS line with
//! the measured quantities when it succeeds and panics with the measurements
//! when it does not.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tidemark::audio::{MelFrontend, MelParams, SAMPLE_RATE};
use tidemark::autodiff::{Graph, Tensor, TensorId};
use tidemark::channel::{channel_augment_graph, CodecSpec};
use tidemark::eval::compute_eer;
use tidemark::losses::{
    loss_discriminator, loss_feature_matching, loss_generator_adv, loss_mel, loss_watermark,
    route_generator_loss, FeatureMatchKind, GeneratorLossParts, LossWeights, RoleMode,
};
use tidemark::models::LayerKind;
use tidemark::training::optim::{clip_gradient_norm, gradient_norm};
use tidemark::training::step::Trainer;

// ---------------------------------------------------------------------------
// Criterion 1: straight-through exactness.
// ---------------------------------------------------------------------------

/// Gradient of `loss(input)` where the input enters as a bound parameter.
fn grad_of(loss: impl Fn(&mut Graph, TensorId) -> TensorId, x: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let p = g.param(Tensor::new(vec![1, 1, x.len()], x.to_vec()));
    let l = loss(&mut g, p);
    let mut grads = g.backward(l).expect("backward");
    grads.take(p).expect("input gradient").data().to_vec()
}

#[test]
fn criterion_1_straight_through_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let t = 512;
    let mel = MelFrontend::new(MelParams {
        n_fft: 128,
        win_length: 128,
        hop: 32,
        n_mels: 8,
        ..MelParams::default()
    });
    let target: Vec<f64> = (0..t).map(|_| rng.random_range(-0.4..0.4)).collect();

    // Three distinct losses applied downstream of the channel output.
    let losses: Vec<(&str, Box<dyn Fn(&mut Graph, TensorId) -> TensorId>)> = vec![
        ("mean squared energy", {
            Box::new(|g: &mut Graph, y: TensorId| {
                let sq = g.square(y);
                g.mean_all(sq)
            })
        }),
        ("l1 to a fixed target", {
            let target = target.clone();
            Box::new(move |g: &mut Graph, y: TensorId| {
                let r = g.leaf(Tensor::new(vec![1, 1, target.len()], target.clone()));
                let d = g.sub(y, r);
                let a = g.abs(d);
                g.mean_all(a)
            })
        }),
        ("log-mel l1 to a fixed target", {
            let target = target.clone();
            Box::new(move |g: &mut Graph, y: TensorId| {
                let r = g.leaf(Tensor::new(vec![1, 1, target.len()], target.clone()));
                loss_mel(g, &mel, r, y).expect("mel loss")
            })
        }),
    ];

    let pairs = 100;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-0.5..0.5)).collect();
        // The decoded signal is the input plus codec-like distortion.
        let decoded: Vec<f64> = x
            .iter()
            .map(|v| (v + rng.random_range(-0.05..0.05)).clamp(-1.0, 1.0))
            .collect();

        for (name, loss) in &losses {
            // Forward through the estimator must equal the decoded signal
            // bit-exactly.
            let mut g = Graph::new();
            let p = g.param(Tensor::new(vec![1, 1, t], x.clone()));
            let ste = g.straight_through(p, Tensor::new(vec![1, 1, t], decoded.clone()));
            assert_eq!(
                g.value(ste).data(),
                &decoded[..],
                "criterion 1 FAIL: straight-through forward is not the decoded signal ({name})"
            );
            let l = loss(&mut g, ste);
            let mut grads = g.backward(l).expect("backward");
            let through = grads.take(p).expect("gradient through the estimator");

            // The same loss evaluated directly at the decoded signal.
            let direct = grad_of(loss, &decoded);
            let dev = through
                .data()
                .iter()
                .zip(&direct)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                dev <= 1e-6,
                "criterion 1 FAIL: d loss/d x deviates from d loss/d x_tilde by {dev:.3e} ({name})"
            );
            worst = worst.max(dev);
        }
    }
    println!(
        "criterion 1 (straight-through exactness): PASS — {pairs} pairs x 3 losses, \
         worst gradient deviation {worst:.3e} (tolerance 1e-6)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient-flow matrix through a real mp3@64 channel.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_flow_matrix() {
    let channel = common::codec_channel(7);
    let spec = CodecSpec::mp3(64);
    let clips = common::corpus(4, 21);

    let mut flows = Vec::new();
    for mode in [RoleMode::Observer, RoleMode::Collaborator] {
        let cfg = common::toy_config(mode, 9, 1, vec![spec]);
        let trainer = Trainer::new(&cfg, channel.clone()).expect("trainer");

        // One generator pass, the watermark loss through the codec channel,
        // and nothing else contributing generator gradients: the other loss
        // terms enter as constants.
        let mut g = Graph::new();
        let bg = trainer.gen.bind(&mut g);
        let bw = trainer.wm.bind_frozen(&mut g);
        let batch: Vec<f64> = clips
            .iter()
            .flat_map(|w| w.samples[..4096].to_vec())
            .collect();
        let x_real = g.leaf(Tensor::new(vec![clips.len(), 1, 4096], batch));
        let mel_real = trainer.frontend.log_mel_graph(&mut g, x_real);
        let x_gen = trainer.gen.forward(&mut g, &bg, mel_real);

        let differentiable = mode == RoleMode::Collaborator;
        let (x_hat_real, _) =
            channel_augment_graph(&mut g, x_real, &channel, &spec, false, SAMPLE_RATE)
                .expect("real path");
        let (x_tilde_gen, _) =
            channel_augment_graph(&mut g, x_gen, &channel, &spec, differentiable, SAMPLE_RATE)
                .expect("generated path");
        let wm_real = trainer.wm.forward(&mut g, &bw, x_hat_real).expect("score real");
        let wm_gen = trainer.wm.forward(&mut g, &bw, x_tilde_gen).expect("score gen");
        let l_wm = loss_watermark(&mut g, wm_real, wm_gen);

        let zero = g.leaf(Tensor::new(vec![], vec![0.0]));
        let parts = GeneratorLossParts {
            adv: zero,
            fm: zero,
            mel: zero,
            wm: l_wm,
        };
        let total = route_generator_loss(&mut g, mode, parts, &LossWeights::default());
        let mut grads = g.backward(total).expect("backward");
        let grads = bg.collect_grads(&mut grads);
        flows.push((mode, gradient_norm(&grads)));
    }

    let (_, observer_norm) = flows[0];
    let (_, collaborator_norm) = flows[1];
    assert_eq!(
        observer_norm, 0.0,
        "criterion 2 FAIL: observer generator received watermark gradient (norm {observer_norm})"
    );
    assert!(
        collaborator_norm > 0.0,
        "criterion 2 FAIL: collaborator generator received no watermark gradient"
    );
    println!(
        "criterion 2 (gradient-flow matrix through mp3@64): PASS — observer L_WM gradient norm \
         {observer_norm}, collaborator {collaborator_norm:.6e}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: the five losses against independent scalar re-computations.
// ---------------------------------------------------------------------------

/// Independent log-mel: naive DFT over reflect-padded, Hann-windowed frames,
/// HTK triangle filters, floored natural log. Shares no code with the
/// library's FFT pipeline.
fn naive_log_mel(x: &[f64], p: &MelParams) -> Vec<f64> {
    let pad = (p.n_fft - p.hop) / 2;
    let t = x.len();
    let sample = |pos: isize| -> f64 {
        let idx = if pos < 0 {
            (-pos) as usize
        } else if pos >= t as isize {
            2 * (t - 1) - pos as usize
        } else {
            pos as usize
        };
        x[idx]
    };
    let lead = (p.n_fft - p.win_length) / 2;
    let window: Vec<f64> = (0..p.n_fft)
        .map(|n| {
            if n < lead || n >= lead + p.win_length {
                0.0
            } else {
                let i = n - lead;
                0.5 - 0.5
                    * (2.0 * std::f64::consts::PI * i as f64 / p.win_length as f64).cos()
            }
        })
        .collect();
    let frames = (t - p.hop) / p.hop + 1;
    let n_bins = p.n_fft / 2 + 1;

    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (mel_lo, mel_hi) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
    let edges: Vec<f64> = (0..p.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect();
    let bin_hz = p.sample_rate as f64 / p.n_fft as f64;

    let mut out = vec![0.0; p.n_mels * frames];
    for f in 0..frames {
        let mut mags = vec![0.0; n_bins];
        for (k, mag) in mags.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..p.n_fft {
                let v = window[n] * sample((f * p.hop + n) as isize - pad as isize);
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / p.n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            *mag = (re * re + im * im).sqrt();
        }
        for m in 0..p.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut acc = 0.0;
            for (k, &mag) in mags.iter().enumerate() {
                let fr = k as f64 * bin_hz;
                let w = if fr <= lo || fr >= hi {
                    0.0
                } else if fr <= mid {
                    (fr - lo) / (mid - lo)
                } else {
                    (hi - fr) / (hi - mid)
                };
                acc += w.max(0.0) * mag;
            }
            out[m * frames + f] = acc.max(p.log_floor).ln();
        }
    }
    out
}

#[test]
fn criterion_3_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let mut worst = 0.0f64;
    let trials = 50;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    // Discriminator, adversarial, and watermark losses on random score sets.
    for _ in 0..trials {
        let subs = rng.random_range(1..=3);
        let mut reals = Vec::new();
        let mut gens = Vec::new();
        for _ in 0..subs {
            let n = rng.random_range(1..=6);
            reals.push((0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
            gens.push((0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        }

        let mut g = Graph::new();
        let r_ids: Vec<TensorId> = reals
            .iter()
            .map(|v| g.leaf(Tensor::new(vec![v.len()], v.clone())))
            .collect();
        let f_ids: Vec<TensorId> = gens
            .iter()
            .map(|v| g.leaf(Tensor::new(vec![v.len()], v.clone())))
            .collect();

        let l = loss_discriminator(&mut g, &r_ids, &f_ids);
        let got = g.value(l).data()[0];
        let want = reals
            .iter()
            .zip(&gens)
            .map(|(r, f)| {
                mean(&r.iter().map(|v| (v - 1.0) * (v - 1.0)).collect::<Vec<_>>())
                    + mean(&f.iter().map(|v| v * v).collect::<Vec<_>>())
            })
            .sum::<f64>()
            / subs as f64;
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-6,
            "criterion 3 FAIL: discriminator loss {got} vs oracle {want}"
        );

        let l = loss_generator_adv(&mut g, &f_ids);
        let got = g.value(l).data()[0];
        let want = gens
            .iter()
            .map(|f| mean(&f.iter().map(|v| (v - 1.0) * (v - 1.0)).collect::<Vec<_>>()))
            .sum::<f64>()
            / subs as f64;
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-6,
            "criterion 3 FAIL: adversarial loss {got} vs oracle {want}"
        );

        let l = loss_watermark(&mut g, r_ids[0], f_ids[0]);
        let got = g.value(l).data()[0];
        let want = mean(&reals[0].iter().map(|v| (v - 1.0) * (v - 1.0)).collect::<Vec<_>>())
            + mean(&gens[0].iter().map(|v| v * v).collect::<Vec<_>>());
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-6,
            "criterion 3 FAIL: watermark loss {got} vs oracle {want}"
        );
    }

    // Feature matching on random layer stacks, both distance kinds.
    for _ in 0..trials {
        let subs = rng.random_range(1..=2);
        let mut r_feats = Vec::new();
        let mut f_feats = Vec::new();
        let mut r_vals = Vec::new();
        let mut f_vals = Vec::new();
        let mut g = Graph::new();
        for _ in 0..subs {
            let layers = rng.random_range(1..=3);
            let mut r_ids = Vec::new();
            let mut f_ids = Vec::new();
            let mut r_sub = Vec::new();
            let mut f_sub = Vec::new();
            for _ in 0..layers {
                let n = rng.random_range(1..=8);
                let rv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                r_ids.push(g.leaf(Tensor::new(vec![n], rv.clone())));
                f_ids.push(g.leaf(Tensor::new(vec![n], fv.clone())));
                r_sub.push(rv);
                f_sub.push(fv);
            }
            r_feats.push(r_ids);
            f_feats.push(f_ids);
            r_vals.push(r_sub);
            f_vals.push(f_sub);
        }
        for kind in [FeatureMatchKind::Squared, FeatureMatchKind::Absolute] {
            let l = loss_feature_matching(&mut g, &r_feats, &f_feats, kind).expect("fm");
            let got = g.value(l).data()[0];
            let mut want = 0.0;
            for (rs, fs) in r_vals.iter().zip(&f_vals) {
                for (r, f) in rs.iter().zip(fs) {
                    let dists: Vec<f64> = r
                        .iter()
                        .zip(f)
                        .map(|(a, b)| match kind {
                            FeatureMatchKind::Squared => (a - b) * (a - b),
                            FeatureMatchKind::Absolute => (a - b).abs(),
                        })
                        .collect();
                    want += mean(&dists);
                }
            }
            worst = worst.max((got - want).abs());
            assert!(
                (got - want).abs() <= 1e-6,
                "criterion 3 FAIL: feature matching ({kind:?}) {got} vs oracle {want}"
            );
        }
    }

    // Mel loss against the naive-DFT recomputation.
    let params = MelParams {
        n_fft: 128,
        win_length: 128,
        hop: 32,
        n_mels: 8,
        ..MelParams::default()
    };
    let mel = MelFrontend::new(params.clone());
    let t = 512;
    for _ in 0..trials {
        let a: Vec<f64> = (0..t).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b: Vec<f64> = (0..t).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut g = Graph::new();
        let ia = g.leaf(Tensor::new(vec![1, 1, t], a.clone()));
        let ib = g.leaf(Tensor::new(vec![1, 1, t], b.clone()));
        let l = loss_mel(&mut g, &mel, ia, ib).expect("mel");
        let got = g.value(l).data()[0];
        let ma = naive_log_mel(&a, &params);
        let mb = naive_log_mel(&b, &params);
        let want = mean(
            &ma.iter()
                .zip(&mb)
                .map(|(x, y)| (x - y).abs())
                .collect::<Vec<_>>(),
        );
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-6,
            "criterion 3 FAIL: mel loss {got} vs naive-DFT oracle {want}"
        );
    }

    // Zero at each optimum.
    let mut g = Graph::new();
    let ones = g.leaf(Tensor::new(vec![3], vec![1.0; 3]));
    let zeros = g.leaf(Tensor::new(vec![3], vec![0.0; 3]));
    let l = loss_discriminator(&mut g, &[ones], &[zeros]);
    assert_eq!(g.value(l).data()[0], 0.0);
    let l = loss_generator_adv(&mut g, &[ones]);
    assert_eq!(g.value(l).data()[0], 0.0);
    let l = loss_watermark(&mut g, ones, zeros);
    assert_eq!(g.value(l).data()[0], 0.0);
    let feat = g.leaf(Tensor::new(vec![4], vec![0.3, -0.2, 0.9, 0.0]));
    for kind in [FeatureMatchKind::Squared, FeatureMatchKind::Absolute] {
        let l = loss_feature_matching(&mut g, &[vec![feat]], &[vec![feat]], kind).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }
    let wave: Vec<f64> = (0..t).map(|i| (i as f64 * 0.05).sin() * 0.4).collect();
    let iw = g.leaf(Tensor::new(vec![1, 1, t], wave));
    let l = loss_mel(&mut g, &mel, iw, iw).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);

    println!(
        "criterion 3 (loss oracles): PASS — five losses x {trials} random inputs, worst \
         deviation {worst:.3e} (tolerance 1e-6); all optima exactly zero"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: EER against an exhaustive threshold-sweep oracle.
// ---------------------------------------------------------------------------

/// Brute-force EER: walk every candidate threshold, counting error rates
/// directly, with the same crossing and interpolation rule the library
/// freezes. Shares no code with the library implementation.
fn oracle_eer(real: &[f64], gen: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = real.iter().chain(gen).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let sentinel = thresholds.last().unwrap() + 1.0;
    thresholds.push(sentinel);
    let frr = |t: f64| real.iter().filter(|&&s| s < t).count() as f64 / real.len() as f64;
    let far = |t: f64| gen.iter().filter(|&&s| s >= t).count() as f64 / gen.len() as f64;
    let mut below: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let (fr, fa) = (frr(t), far(t));
        if fr >= fa {
            if fr == fa {
                return fr * 100.0;
            }
            let (fr1, fa1) = below.expect("the lowest threshold has FRR 0 < FAR 1");
            let alpha = (fa1 - fr1) / ((fr - fr1) + (fa1 - fa));
            return (fr1 + alpha * (fr - fr1)) * 100.0;
        }
        below = Some((fr, fa));
    }
    unreachable!("the sentinel threshold rejects everything, forcing a crossing");
}

#[test]
fn criterion_4_eer_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    // Scores are dyadic rationals (k/1024 with k in 0..=4096) so the monotone
    // transforms below are exact in floating point and ties genuinely occur.
    fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| rng.random_range(0u32..=4096) as f64 / 1024.0)
            .collect()
    }

    let sets = 1000;
    for i in 0..sets {
        let n_real = rng.random_range(2..=20);
        let n_gen = rng.random_range(2..=20);
        let real = draw(&mut rng, n_real);
        let gen = draw(&mut rng, n_gen);
        let got = compute_eer(&real, &gen).expect("compute_eer");
        let want = oracle_eer(&real, &gen);
        assert_eq!(
            got.to_bits(),
            want.to_bits(),
            "criterion 4 FAIL: set {i}: compute_eer {got} vs oracle {want}\nreal {real:?}\ngen {gen:?}"
        );

        // Monotone-transform invariance. Both maps are strictly increasing
        // and exact for these dyadic scores: an affine map x/4 + 3, and the
        // nonlinear map x^3 + x.
        let affine = |v: &[f64]| v.iter().map(|x| x / 4.0 + 3.0).collect::<Vec<_>>();
        let cubic = |v: &[f64]| v.iter().map(|x| x * x * x + x).collect::<Vec<_>>();
        for (name, tr) in [("affine", &affine as &dyn Fn(&[f64]) -> Vec<f64>), ("cubic", &cubic)] {
            let got_tr = compute_eer(&tr(&real), &tr(&gen)).expect("compute_eer");
            assert_eq!(
                got.to_bits(),
                got_tr.to_bits(),
                "criterion 4 FAIL: set {i}: EER changed under {name} monotone transform: \
                 {got} vs {got_tr}"
            );
        }
    }

    // Trivial endpoint cases.
    let zero = compute_eer(&[0.8, 0.9, 0.7], &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(zero, 0.0, "criterion 4 FAIL: perfect separation should give 0%");
    let hundred = compute_eer(&[0.1, 0.2, 0.3], &[0.8, 0.9, 0.7]).unwrap();
    assert_eq!(hundred, 100.0, "criterion 4 FAIL: anti-separation should give 100%");

    println!(
        "criterion 4 (EER oracle equivalence): PASS — {sets} random sets bit-identical to the \
         exhaustive sweep, invariant under 2 exact monotone transforms; endpoints 0% and 100%"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: codec channel sanity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_codec_channel_sanity() {
    let channel = common::codec_channel(501);
    let probe = common::harmonic_probe(502, SAMPLE_RATE as usize);
    let bitrates = [16, 32, 64, 128];
    let mut report = Vec::new();
    for (family, make) in [
        ("mp3", CodecSpec::mp3 as fn(u32) -> CodecSpec),
        ("ogg_opus", CodecSpec::ogg_opus as fn(u32) -> CodecSpec),
    ] {
        let mut snrs = Vec::new();
        for &kbps in &bitrates {
            let r = channel.codec_roundtrip(&probe, &make(kbps)).expect("roundtrip");
            assert!(
                r.snr_db.is_finite() && r.snr_db > 0.0,
                "criterion 5 FAIL: {family}@{kbps} SNR {} is not finite positive",
                r.snr_db
            );
            snrs.push(r.snr_db);
        }
        assert!(
            snrs.windows(2).all(|w| w[0] <= w[1]),
            "criterion 5 FAIL: {family} SNR not non-decreasing in bitrate: {snrs:?}"
        );
        report.push(format!(
            "{family}: {}",
            snrs.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join(" <= ")
        ));
    }
    println!(
        "criterion 5 (codec channel sanity): PASS — 1 s harmonic, SNR dB {}",
        report.join("; ")
    );
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: toy-scale training trends. The collaborator/observer
// runs are shared between the two checks through a lazily filled cache.
// ---------------------------------------------------------------------------

const TREND_SEEDS: [u64; 3] = [1, 2, 3];
const TREND_STEPS: usize = 1000;

struct TrendRun {
    seed: u64,
    eer_init: f64,
    eer_collab: f64,
    eer_obs: f64,
    collab_ckpt: PathBuf,
}

struct TrendCache {
    _dir: tempfile::TempDir,
    runs: Vec<TrendRun>,
}

fn trend_runs() -> &'static TrendCache {
    static CACHE: OnceLock<TrendCache> = OnceLock::new();
    CACHE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let train_clips = common::corpus(100, 11);
        let heldout = common::corpus(30, 12);
        let ident = vec![CodecSpec::none()];
        let runs = TREND_SEEDS
            .iter()
            .map(|&seed| {
                let cfg_c = common::toy_config(RoleMode::Collaborator, seed, TREND_STEPS, vec![]);
                let cfg_o = common::toy_config(RoleMode::Observer, seed, TREND_STEPS, vec![]);

                let init = Trainer::new(&cfg_c, common::identity_channel(seed)).expect("trainer");
                let eer_init = common::heldout_eer(&init, &heldout, ident.clone(), 500);

                let c_dir = dir.path().join(format!("collab_{seed}"));
                let collab = common::train_to_end(
                    &cfg_c,
                    common::identity_channel(seed),
                    &train_clips,
                    &c_dir,
                );
                let eer_collab = common::heldout_eer(&collab, &heldout, ident.clone(), 500);

                let obs = common::train_to_end(
                    &cfg_o,
                    common::identity_channel(seed),
                    &train_clips,
                    &dir.path().join(format!("obs_{seed}")),
                );
                let eer_obs = common::heldout_eer(&obs, &heldout, ident.clone(), 500);

                TrendRun {
                    seed,
                    eer_init,
                    eer_collab,
                    eer_obs,
                    collab_ckpt: c_dir.join("checkpoint.tmrk"),
                }
            })
            .collect();
        TrendCache { _dir: dir, runs }
    })
}

#[test]
fn criterion_6_collaborator_benefit_trend() {
    let cache = trend_runs();
    let mut wins = 0;
    let mut lines = Vec::new();
    for run in &cache.runs {
        let win = run.eer_collab < run.eer_init && run.eer_collab < run.eer_obs;
        wins += win as u32;
        lines.push(format!(
            "seed {}: init {:.2}% collaborator {:.2}% observer {:.2}%{}",
            run.seed,
            run.eer_init,
            run.eer_collab,
            run.eer_obs,
            if win { "" } else { " (no win)" }
        ));
    }
    assert!(
        wins >= 2,
        "criterion 6 FAIL: collaborator beat initialization and observer in only {wins}/3 seeds\n{}",
        lines.join("\n")
    );
    println!(
        "criterion 6 (collaborator benefit, 100 clips x {TREND_STEPS} steps, identity channel): \
         PASS — {wins}/3 seeds; {}",
        lines.join("; ")
    );
}

#[test]
fn criterion_7_augmentation_transfer_trend() {
    let cache = trend_runs();
    let heldout = common::corpus(30, 12);
    let opus16 = vec![CodecSpec::ogg_opus(16)];
    let dir = tempfile::tempdir().expect("tempdir");
    let train_clips = common::corpus(100, 11);

    let mut wins = 0;
    let mut lines = Vec::new();
    for run in &cache.runs {
        let cfg_aug = common::toy_config(
            RoleMode::Collaborator,
            run.seed,
            TREND_STEPS,
            vec![CodecSpec::ogg_opus(16)],
        );
        let aug = common::train_to_end(
            &cfg_aug,
            common::codec_channel(run.seed),
            &train_clips,
            &dir.path().join(format!("aug_{}", run.seed)),
        );
        let eer_aug = common::heldout_eer(&aug, &heldout, opus16.clone(), 600);

        let loaded = tidemark::training::checkpoint::load_checkpoint(&run.collab_ckpt)
            .expect("no-augmentation checkpoint");
        let noaug =
            Trainer::resume(&loaded, common::codec_channel(run.seed)).expect("resume");
        let eer_noaug = common::heldout_eer(&noaug, &heldout, opus16.clone(), 600);

        let win = eer_aug < eer_noaug;
        wins += win as u32;
        lines.push(format!(
            "seed {}: with augmentation {eer_aug:.2}% vs without {eer_noaug:.2}%{}",
            run.seed,
            if win { "" } else { " (no win)" }
        ));
    }
    assert!(
        wins >= 2,
        "criterion 7 FAIL: opus@16 augmentation won in only {wins}/3 seeds under opus@16 \
         evaluation\n{}",
        lines.join("\n")
    );
    println!(
        "criterion 7 (augmentation transfer, opus@16): PASS — {wins}/3 seeds; {}",
        lines.join("; ")
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: bit-identical determinism of training and evaluation.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_fixed_seed_determinism() {
    let clips = common::corpus(8, 81);
    let heldout = common::corpus(6, 82);
    let cfg = common::toy_config(RoleMode::Collaborator, 881, 10, vec![]);
    let dir = tempfile::tempdir().expect("tempdir");

    let mut logs = Vec::new();
    let mut reports = Vec::new();
    for arm in ["a", "b"] {
        let out = dir.path().join(arm);
        let trainer =
            common::train_to_end(&cfg, common::identity_channel(cfg.training.seed), &clips, &out);
        logs.push(std::fs::read(out.join("metrics.jsonl")).expect("metrics log"));

        let column = common::column(&trainer, &heldout, vec![CodecSpec::none()], 800);
        reports.push(serde_json::to_string(&column).expect("serialize column"));
    }
    assert_eq!(
        logs[0], logs[1],
        "criterion 8 FAIL: 10-step training produced different metrics logs for the same seed"
    );
    assert_eq!(
        reports[0], reports[1],
        "criterion 8 FAIL: fixed-seed evaluation produced different score summaries"
    );
    println!(
        "criterion 8 (fixed-seed determinism): PASS — 10-step metrics logs byte-identical \
         ({} bytes) and evaluation summaries identical",
        logs[0].len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: structural contracts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_structural_contract() {
    let cfg = common::toy_config(RoleMode::Collaborator, 901, 1, vec![]);
    let trainer = Trainer::new(&cfg, common::identity_channel(901)).expect("trainer");
    let inventory = trainer.wm.layer_inventory();
    assert!(
        !inventory.contains(&LayerKind::BatchNorm) && !inventory.contains(&LayerKind::Dropout),
        "criterion 9 FAIL: detector contains normalization or dropout: {inventory:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(902);
    let trials = 200;
    let mut clipped = 0;
    for _ in 0..trials {
        let mut grads: Vec<Option<Tensor>> = (0..rng.random_range(1..=4))
            .map(|_| {
                let n = rng.random_range(1..=64);
                Some(Tensor::new(
                    vec![n],
                    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                ))
            })
            .collect();
        let pre = gradient_norm(&grads);
        let reported = clip_gradient_norm(&mut grads, 1.0);
        let post = gradient_norm(&grads);
        assert_eq!(reported, pre, "clip must report the pre-clip norm");
        if pre > 1.0 {
            clipped += 1;
            assert!(
                post <= 1.0 + 1e-6,
                "criterion 9 FAIL: pre-clip norm {pre} left post-clip norm {post}"
            );
        } else {
            assert_eq!(post, pre, "norms at or below the cap must pass through untouched");
        }
    }
    assert!(clipped > 0, "criterion 9 needs at least one above-cap trial");
    println!(
        "criterion 9 (structural contract): PASS — detector layers {inventory:?}; \
         {clipped}/{trials} above-cap gradients clipped to <= 1 + 1e-6"
    );
}
