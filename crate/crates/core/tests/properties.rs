//! Property tests over randomly drawn inputs.

mod common;

use std::f64::consts::PI;

use bkws::fusion::{
    attended_fusion, bilinear_relevance, fuse_forward, scaled_dot_attention, AttentionParams, FeatureMatrix,
    FusionBranch, FusionConfig, FusionParams, Modality,
};
use bkws::geometry::ArrayGeometry;
use bkws::linalg::CMatrix;
use bkws::masks::{oracle_irm, IrmForm, MaskKind, TfMask};
use bkws::mvdr::{enhance, estimate_covariances, solve_bin, MvdrConfig, DEFAULT_DIAGONAL_LOADING};
use bkws::scoring::{score, sweep, Label, LabeledScores, ScoredUtterance};
use bkws::simulator::{simulate, SceneSpec, SignalSpec, SourceSpec};
use bkws::spatial::{angle_feature, mean_over_top_energy, PairSet};
use bkws::stft::{istft, magnitude, stft, Spectrogram, StftConfig, Waveform, WindowKind};
use bkws::TensorFile;
use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn steering(geom: &ArrayGeometry, theta: f64, f: f64) -> Vec<Complex64> {
    geom.arrival_delays(theta)
        .iter()
        .map(|tau| Complex64::from_polar(1.0, -2.0 * PI * f * tau))
        .collect()
}

fn random_multichannel(channels: usize, frames: usize, bins: usize, rng: &mut ChaCha8Rng) -> Spectrogram {
    let frame_len = 2 * (bins - 1);
    let config = StftConfig::new(frame_len, frame_len / 2, WindowKind::SqrtHann).unwrap();
    let data = Array3::from_shape_simple_fn((channels, frames, bins), || common::gaussian_c(rng));
    Spectrogram::new(data, 16_000, config, frames * frame_len / 2).unwrap()
}

fn min_eigenvalue(r: &CMatrix) -> f64 {
    let n = r.dim();
    let m = DMatrix::from_fn(n, n, |i, j| r[(i, j)]);
    nalgebra::linalg::SymmetricEigen::new(m).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariances_are_hermitian_psd(seed in any::<u64>(), channels in 2usize..7, frames in 1usize..30) {
        let mut rng = common::rng(seed);
        let spec = random_multichannel(channels, frames, 9, &mut rng);
        let m = |rng: &mut ChaCha8Rng, kind| {
            TfMask::new(Array2::from_shape_simple_fn((frames, 9), || rng.gen_range(0.0..1.0)), kind).unwrap()
        };
        let ms = m(&mut rng, MaskKind::Speech);
        let mn = m(&mut rng, MaskKind::Noise);
        let cov = estimate_covariances(&spec, &ms, &mn).unwrap();
        for r in cov.speech.iter().chain(&cov.noise) {
            let scale = r.frobenius_norm().max(1e-300);
            prop_assert!(r.hermitian_defect() <= 1e-10 * scale);
            prop_assert!(min_eigenvalue(r) >= -1e-8 * r.trace().re.abs());
        }
    }

    #[test]
    fn mvdr_is_distortionless(seed in any::<u64>(), theta in -90.0f64..90.0, f in 50.0f64..7950.0, gain in 1e-3f64..1e3) {
        let geom = ArrayGeometry::default_ula6();
        let mut rng = common::rng(seed);
        let noise = common::random_hpd(6, &mut rng);
        let d = steering(&geom, theta, f);
        let w = solve_bin(&CMatrix::outer(&d).scaled(gain), &noise, geom.reference_mic(), DEFAULT_DIAGONAL_LOADING).unwrap();
        let response: Complex64 = w.iter().zip(&d).map(|(wi, di)| wi.conj() * di).sum();
        prop_assert!((response.norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mvdr_ignores_covariance_scale(seed in any::<u64>(), la in -3.0f64..3.0, lb in -3.0f64..3.0) {
        let mut rng = common::rng(seed);
        let rn = common::random_hpd(4, &mut rng);
        let rs = common::random_hpd(4, &mut rng);
        let base = solve_bin(&rs, &rn, 0, DEFAULT_DIAGONAL_LOADING).unwrap();
        let w = solve_bin(&rs.scaled(10f64.powf(lb)), &rn.scaled(10f64.powf(la)), 0, DEFAULT_DIAGONAL_LOADING).unwrap();
        let err: f64 = w.iter().zip(&base).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = base.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-9 * norm);
    }

    #[test]
    fn irm_masks_bounded_and_scale_free(seed in any::<u64>(), log_scale in -3.0f64..3.0, sqrt_energy in any::<bool>()) {
        let mut rng = common::rng(seed);
        let s = random_multichannel(2, 12, 17, &mut rng);
        let n = random_multichannel(2, 12, 17, &mut rng);
        let form = if sqrt_energy { IrmForm::SqrtEnergy } else { IrmForm::Magnitude };
        let (ms, mn) = oracle_irm(&s, &n, 1, form).unwrap();
        prop_assert!(ms.values().iter().chain(mn.values()).all(|v| (0.0..=1.0).contains(v)));
        let a = 10f64.powf(log_scale);
        let scale = |x: &Spectrogram| Spectrogram::new(x.bins().mapv(|z| z * a), 16_000, x.config(), x.num_samples()).unwrap();
        let (ms2, _) = oracle_irm(&scale(&s), &scale(&n), 1, form).unwrap();
        for (x, y) in ms.values().iter().zip(ms2.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_roundtrip_interior(seed in any::<u64>(), half in 4usize..128, len in 600usize..3000) {
        let n = 2 * half;
        let mut rng = common::rng(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let config = StftConfig::new(n, half, WindowKind::SqrtHann).unwrap();
        let spec = stft(&Waveform::mono(x.clone(), 8_000).unwrap(), config).unwrap();
        prop_assert_eq!(spec.num_frames(), 1 + (len - n).div_ceil(half));
        let y = istft(&spec).unwrap();
        prop_assert_eq!(y.num_samples(), len);
        let y = y.channel(0).unwrap();
        for i in n..len.saturating_sub(n) {
            prop_assert!((x[i] - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_files_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>(), meta in "[a-z ]{1,20}") {
        let n: usize = dims.iter().product();
        let mut rng = common::rng(seed);
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let t = TensorFile::f64(dims.clone(), data.clone()).unwrap().with_metadata(meta.clone());
        let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
        prop_assert_eq!(back.dims(), &dims[..]);
        prop_assert_eq!(back.data(), &data[..]);
        prop_assert_eq!(back.metadata(), Some(meta.as_str()));
        let t32 = TensorFile::f32(dims.clone(), data.clone()).unwrap();
        let back = TensorFile::from_bytes(&t32.to_bytes()).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn sweep_is_monotone_and_matches_score(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = common::rng(seed);
        let mut entries: Vec<ScoredUtterance> = (0..n)
            .map(|i| ScoredUtterance {
                id: format!("u{i}"),
                label: if rng.gen_bool(0.5) { Label::Wake } else { Label::NonWake },
                // coarse grid so ties occur
                score: (rng.gen_range(0..20) as f64) / 19.0,
            })
            .collect();
        entries[0].label = Label::Wake;
        entries[1].label = Label::NonWake;
        let scores = LabeledScores::new(entries).unwrap();
        let points = sweep(&scores).unwrap();
        for pair in points.windows(2) {
            prop_assert!(pair[0].threshold < pair[1].threshold);
            prop_assert!(pair[0].frr <= pair[1].frr);
            prop_assert!(pair[0].far >= pair[1].far);
        }
        for p in &points {
            let direct = score(&scores, p.threshold).unwrap();
            prop_assert!((direct.frr - p.frr).abs() < 1e-15 && (direct.far - p.far).abs() < 1e-15);
        }
        prop_assert_eq!(points.last().unwrap().frr, 1.0);
        prop_assert_eq!(points[0].frr, 0.0);
        prop_assert_eq!(points[0].far, 1.0);
    }

    #[test]
    fn attention_rows_are_convex_combinations(seed in any::<u64>(), tq in 1usize..6, tk in 1usize..6) {
        let mut rng = common::rng(seed);
        let d = 4;
        let mut p = AttentionParams::random(d, 2, &mut rng);
        p.wv = Array2::eye(d);
        p.bv.fill(0.0);
        p.wo = Array2::eye(d);
        p.bo.fill(0.0);
        let q = FeatureMatrix::new(common::uniform_matrix(tq, d, &mut rng), Modality::Audio).unwrap();
        let kv = FeatureMatrix::new(common::uniform_matrix(tk, d, &mut rng), Modality::Visual).unwrap();
        let out = scaled_dot_attention(&q, &kv, &kv, &p).unwrap();
        prop_assert_eq!(out.modality(), Modality::Audio);
        for row in out.values().rows() {
            for (c, v) in row.iter().enumerate() {
                let col = kv.values().column(c);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
        // identical value rows pass straight through
        let same = Array2::from_shape_fn((tk, d), |(_, c)| c as f64 - 1.5);
        let v = FeatureMatrix::new(same, Modality::Visual).unwrap();
        let out = scaled_dot_attention(&q, &kv, &v, &p).unwrap();
        for row in out.values().rows() {
            for (c, x) in row.iter().enumerate() {
                prop_assert!((x - (c as f64 - 1.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), t in 2usize..6) {
        let mut rng = common::rng(seed);
        let d = 6;
        let p = AttentionParams::random(d, 3, &mut rng);
        let q = common::uniform_matrix(t, d, &mut rng);
        let kv = common::uniform_matrix(t, d, &mut rng);
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let fm = |a: Array2<f64>| FeatureMatrix::new(a, Modality::Audio).unwrap();
        let base = scaled_dot_attention(&fm(q.clone()), &fm(kv.clone()), &fm(kv.clone()), &p).unwrap();
        // permuting keys and values together changes nothing
        let kv_p = kv.select(Axis(0), &perm);
        let out = scaled_dot_attention(&fm(q.clone()), &fm(kv_p.clone()), &fm(kv_p), &p).unwrap();
        prop_assert!(common::max_diff(out.values(), &common::to_mat(base.values())) < 1e-12);
        // permuting queries permutes the output rows
        let out = scaled_dot_attention(&fm(q.select(Axis(0), &perm)), &fm(kv.clone()), &fm(kv), &p).unwrap();
        let expected = base.values().select(Axis(0), &perm);
        prop_assert!(common::max_diff(out.values(), &common::to_mat(&expected)) < 1e-12);
    }

    #[test]
    fn relevance_is_bounded_odd_and_saturates(seed in any::<u64>(), t in 1usize..6) {
        let mut rng = common::rng(seed);
        let d = 4;
        let x = FeatureMatrix::new(common::uniform_matrix(t, d, &mut rng), Modality::Audio).unwrap();
        let joint = common::uniform_matrix(t, 2 * d, &mut rng);
        let w = common::uniform_matrix(d, 2 * d, &mut rng);
        let c = bilinear_relevance(&x, &joint, &w).unwrap();
        prop_assert_eq!(c.dim(), (t, t));
        prop_assert!(c.iter().all(|v| v.abs() < 1.0));
        let zero = bilinear_relevance(&x, &joint, &Array2::zeros((d, 2 * d))).unwrap();
        prop_assert!(zero.iter().all(|v| *v == 0.0));
        let neg = bilinear_relevance(&x, &joint, &w.mapv(|v| -v)).unwrap();
        for (a, b) in c.iter().zip(neg.iter()) {
            prop_assert!((a + b).abs() < 1e-15);
        }
        let big = bilinear_relevance(&x, &joint, &w.mapv(|v| v * 1e8)).unwrap();
        for (small, sat) in c.iter().zip(big.iter()) {
            if small.abs() > 1e-6 {
                prop_assert!(sat.abs() >= 0.99);
            }
        }
    }

    #[test]
    fn hidden_units_are_rectified(seed in any::<u64>(), t in 1usize..6, h in 1usize..9) {
        let mut rng = common::rng(seed);
        let d = 4;
        let x = FeatureMatrix::new(common::uniform_matrix(t, d, &mut rng), Modality::Visual).unwrap();
        let c = common::uniform_matrix(t, t, &mut rng);
        let out = attended_fusion(&x, &c, &FusionBranch::random(d, h, t, &mut rng)).unwrap();
        prop_assert_eq!(out.pre_activation.dim(), (h, t));
        for (z, hv) in out.pre_activation.iter().zip(out.hidden.iter()) {
            prop_assert!(*hv >= 0.0);
            prop_assert_eq!(*hv, z.max(0.0));
        }
    }

    #[test]
    fn symmetric_model_treats_modalities_alike(seed in any::<u64>()) {
        let mut cfg = FusionConfig::new(6, 5, 3);
        cfg.heads = 2;
        cfg.layers = 2;
        let mut p = FusionParams::random(cfg, seed).unwrap();
        for layer in &mut p.layers {
            layer.visual = layer.audio.clone();
        }
        p.visual = p.audio.clone();
        let mut rng = common::rng(seed);
        let x = common::uniform_matrix(3, 6, &mut rng);
        let a = FeatureMatrix::new(x.clone(), Modality::Audio).unwrap();
        let v = FeatureMatrix::new(x, Modality::Visual).unwrap();
        let tr = fuse_forward(&a, &v, &p).unwrap();
        prop_assert_eq!(&tr.fused_audio, &tr.fused_visual);
        prop_assert_eq!(&tr.relevance_audio, &tr.relevance_visual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn enhance_is_homogeneous(seed in any::<u64>(), log_gain in -2.0f64..2.0) {
        let mut rng = common::rng(seed);
        let len = 4000;
        let channels: Vec<Vec<f64>> = (0..6).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let wav = Waveform::from_channels(channels, 16_000).unwrap();
        let config = MvdrConfig::default_for(16_000).unwrap();
        let shape = (config.stft.num_frames(len), config.stft.num_bins());
        let ms = TfMask::new(Array2::from_shape_simple_fn(shape, || rng.gen_range(0.0..1.0)), MaskKind::Speech).unwrap();
        let mn = TfMask::new(ms.values().mapv(|m| 1.0 - m), MaskKind::Noise).unwrap();
        let geom = ArrayGeometry::default_ula6();
        let a = 10f64.powf(log_gain);
        let base = enhance(&wav, &geom, &ms, &mn, &config).unwrap();
        let scaled = enhance(&wav.scaled(a), &geom, &ms, &mn, &config).unwrap();
        let peak = base.waveform.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in base.waveform.samples().iter().zip(scaled.waveform.samples()) {
            prop_assert!((a * x - y).abs() <= 1e-9 * a * peak);
        }
    }

    #[test]
    fn noise_covariance_converges(seed in any::<u64>()) {
        // y = L g with complex white g has covariance L L^H
        let mut rng = common::rng(seed);
        let c = 4;
        let l: Vec<Complex64> = (0..c * c).map(|_| common::gaussian_c(&mut rng)).collect();
        let truth = CMatrix::from_fn(c, |i, j| (0..c).map(|k| l[i * c + k] * l[j * c + k].conj()).sum::<Complex64>() * 2.0);
        let frames = 10_000;
        let mut data = Array3::from_elem((c, frames, 2), Complex64::new(0.0, 0.0));
        for t in 0..frames {
            let g: Vec<Complex64> = (0..c).map(|_| common::gaussian_c(&mut rng)).collect();
            for i in 0..c {
                let y: Complex64 = (0..c).map(|k| l[i * c + k] * g[k]).sum();
                data[[i, t, 0]] = y;
                data[[i, t, 1]] = y;
            }
        }
        let config = StftConfig::new(2, 1, WindowKind::Rectangular).unwrap();
        let spec = Spectrogram::new(data, 16_000, config, frames).unwrap();
        let ones = TfMask::constant(frames, 2, 1.0, MaskKind::Noise).unwrap();
        let cov = estimate_covariances(&spec, &ones, &ones).unwrap();
        let err: f64 = cov.noise[0].as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 0.05 * truth.frobenius_norm(), "relative error {}", err / truth.frobenius_norm());
    }

    #[test]
    fn angle_feature_peaks_at_true_angle(seed in any::<u64>(), angle in -80.0f64..80.0) {
        let scene = SceneSpec {
            sample_rate: 16_000,
            duration_s: 0.5,
            geometry: None,
            sources: vec![SourceSpec { signal: SignalSpec::SpeechShapedNoise, angle_deg: angle, gain_db: 0.0 }],
            diffuse_noise_snr_db: None,
            sensor_noise_snr_db: None,
            seed,
            base_dir: None,
        };
        let sim = simulate(&scene).unwrap();
        let spec = stft(&sim.mixture, StftConfig::default_for(16_000).unwrap()).unwrap();
        let energy = magnitude(&spec, sim.geometry.reference_mic()).unwrap().mapv(|m| m * m);
        for af in angle_feature(&spec, &sim.geometry, &PairSet::default(), angle).unwrap() {
            let mean = mean_over_top_energy(&af, &energy, 0.1).unwrap();
            prop_assert!(mean >= 0.99, "mean AF {mean} at {angle} deg");
        }
    }
}
