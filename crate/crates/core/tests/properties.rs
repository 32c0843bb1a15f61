use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ntfsep::betafac::beta_divergence;
use ntfsep::estimation::{update_w, DiagTensor};
use ntfsep::eval::decompose;
use ntfsep::init::{cluster_tf_points, ArrayGeometry, TdoaSet};
use ntfsep::io::wav::{decode_wav, encode_wav};
use ntfsep::io::{decode_library, encode_library};
use ntfsep::linalg::CMat;
use ntfsep::localgauss::{psd_project, sigma_x, wiener_gain, HermitianField, ModelParams, SourceParams};
use ntfsep::priors::{build_library, SpectralBasis};
use ntfsep::stft::{analyze, synthesize};
use ntfsep::io::SampleFormat;
use ntfsep::{Beta, NonnegMatrix, Signal, StftConfig};

fn noise(seed: u64, channels: usize, len: usize) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Signal::new(8000, (0..channels).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> NonnegMatrix {
    NonnegMatrix::from_fn(r, c, |_, _| rng.random_range(0.05..2.0))
}

fn hermitian(rng: &mut ChaCha8Rng, m: usize, spread: f64) -> CMat {
    let mut a = CMat::from_fn(m, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    a = a.add(&a.adjoint()).scale(0.5);
    a.add_diagonal(spread);
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn divergence_is_nonnegative_and_scales(a in 0.01f64..50.0, b in 0.01f64..50.0, bv in -0.5f64..2.5, lam in 0.1f64..10.0) {
        let beta = Beta::new(bv).unwrap();
        let d = beta_divergence(a, b, beta).unwrap();
        prop_assert!(d >= -1e-12 * (a + b));
        let scaled = beta_divergence(lam * a, lam * b, beta).unwrap();
        let expect = lam.powf(bv) * d;
        prop_assert!((scaled - expect).abs() <= 1e-7 * expect.abs().max(1e-9));
    }

    #[test]
    fn stft_is_linear(seed in 0u64..1000, ga in -2.0f64..2.0, gb in -2.0f64..2.0) {
        let cfg = StftConfig::new(8000, 256, 128).unwrap();
        let (x, y) = (noise(seed, 2, 2000), noise(seed + 1, 2, 2000));
        let sum = Signal::new(8000, x.channels.iter().zip(&y.channels)
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| ga * a + gb * b).collect()).collect()).unwrap();
        let lhs = analyze(&sum, &cfg).unwrap();
        let rhs = analyze(&x, &cfg).unwrap().scaled(Complex64::new(ga, 0.0))
            .add(&analyze(&y, &cfg).unwrap().scaled(Complex64::new(gb, 0.0))).unwrap();
        let err = lhs.as_slice().iter().zip(rhs.as_slice()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn stft_round_trip_is_exact_inside(seed in 0u64..1000, hop_div in 1usize..3) {
        let cfg = StftConfig::new(8000, 256, 256 / (2 * hop_div)).unwrap();
        let x = noise(seed, 1, 3000);
        let y = synthesize(&analyze(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        let edge = cfg.window_len;
        let err = x.channels[0][edge..3000 - edge].iter().zip(&y.channels[0][edge..3000 - edge])
            .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn wiener_gains_partition_identity(seed in 0u64..10_000, n in 1usize..5, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams {
            sources: (0..n).map(|_| SourceParams {
                basis: positive(&mut rng, 5, 2),
                activations: positive(&mut rng, 2, 4),
                spatial: {
                    let mats: Vec<CMat> = (0..5).map(|_| { let a = hermitian(&mut rng, m, 0.0); let mut r = a.mul(&a); r.add_diagonal(0.01); r }).collect();
                    HermitianField::from_fn(5, 1, m, |b, _| mats[b].clone())
                },
            }).collect(),
        };
        let sx = sigma_x(&params).unwrap();
        let gains: Vec<_> = (0..n).map(|i| wiener_gain(&params, i, &sx, 0.0).unwrap()).collect();
        for b in 0..5 {
            for l in 0..4 {
                let total = gains.iter().fold(CMat::zeros(m), |acc, g| acc.add(&g.matrix(b, l)));
                prop_assert!(total.max_abs_diff(&CMat::identity(m)) < 1e-10);
            }
        }
    }

    #[test]
    fn psd_projection_is_psd_and_idempotent(seed in 0u64..10_000, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<CMat> = (0..6).map(|_| { let s = rng.random_range(-1.0..1.0); hermitian(&mut rng, m, s) }).collect();
        let field = HermitianField::from_fn(6, 1, m, |b, _| mats[b].clone());
        let once = psd_project(&field);
        let twice = psd_project(&once);
        prop_assert!(once.max_abs_diff(&twice) < 1e-10);
        for b in 0..6 {
            let (vals, _) = once.matrix(b, 0).hermitian_eigen();
            prop_assert!(vals.iter().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn clustering_partitions_the_mixture(seed in 0u64..1000, d in 1.0f64..4.0) {
        let cfg = StftConfig::new(8000, 256, 128).unwrap();
        let x = analyze(&noise(seed, 2, 3000), &cfg).unwrap();
        let taus = TdoaSet::new(vec![-d / 8000.0, 0.0, d / 8000.0], ArrayGeometry::default()).unwrap();
        let cl = cluster_tf_points(&x, &cfg, &taus).unwrap();
        let total = cl.images[1..].iter().fold(cl.images[0].clone(), |acc, s| acc.add(s).unwrap());
        prop_assert_eq!(total.as_slice(), x.as_slice());
        for b in 0..cl.bins {
            for l in 0..cl.frames {
                prop_assert_eq!((0..3).filter(|&n| cl.mask(n, b, l)).count(), 1);
            }
        }
    }

    #[test]
    fn zero_activations_stay_zero(seed in 0u64..10_000, bv in 0.0f64..2.0, zr in 0usize..3, zc in 0usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = positive(&mut rng, 8, 3);
        let mut w = positive(&mut rng, 3, 7);
        w.set(zr, zc, 0.0);
        let vc = vec![positive(&mut rng, 8, 7), positive(&mut rng, 8, 7)];
        let w2 = update_w(&vc, &u, &w, &DiagTensor::ones(8, 2), Beta::new(bv).unwrap()).unwrap();
        prop_assert_eq!(w2.get(zr, zc), 0.0);
    }

    #[test]
    fn library_round_trip_is_bit_exact(seed in 0u64..10_000, z in 1usize..5, k in 1usize..6, bins in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..z).map(|i| {
            let mut u = positive(&mut rng, bins, k);
            u.normalize_columns();
            SpectralBasis::new(format!("block {i} é"), u).unwrap()
        }).collect();
        let lib = build_library(blocks).unwrap();
        let bytes = encode_library(&lib);
        let back = decode_library(&bytes).unwrap();
        prop_assert_eq!(encode_library(&back), bytes);
    }

    #[test]
    fn float_wav_round_trip_is_bit_exact(seed in 0u64..10_000, channels in 1usize..5, len in 0usize..400) {
        let x = noise(seed, channels, len);
        let y = decode_wav(&encode_wav(&x, SampleFormat::Float32)).unwrap();
        let narrowed: Vec<Vec<f64>> = x.channels.iter().map(|c| c.iter().map(|&v| v as f32 as f64).collect()).collect();
        prop_assert_eq!(y.channels, narrowed);
        prop_assert_eq!(y.sample_rate, 8000);
    }

    #[test]
    fn eval_components_sum_to_estimate(seed in 0u64..1000, g in 0.01f64..1.0, h in 0.0f64..0.5) {
        let refs = vec![noise(seed, 2, 1500), noise(seed + 7, 2, 1500)];
        let junk = noise(seed + 99, 2, 1500);
        let est = Signal::new(8000, (0..2).map(|c| (0..1500)
            .map(|t| refs[0].channels[c][t] + g * refs[1].channels[c][t] + h * junk.channels[c][t]).collect()).collect()).unwrap();
        let comp = decompose(&est, &refs, 0, 16).unwrap();
        let total = comp.total();
        let resid: f64 = total.iter().zip(&est.channels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q))).sum();
        prop_assert!((resid / est.energy()).sqrt() < 1e-8);
        let m = comp.metrics();
        prop_assert!(m.sdr <= m.sir + 1e-9 && m.sdr <= m.sar + 1e-9);
    }
}
