use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spectral_sift::cluster::{confusion, fit_supervised, kmeans_fit, EscalationConfig, PixelClass};
use spectral_sift::kernel::{kf_optimize, KernelFamily, KernelSpec, KfConfig};
use spectral_sift::pca::{fit_pca, select_components, SelectionRule};
use spectral_sift::pls::{fit_simpls, r_squared};
use spectral_sift::specdata::{
    read_envi, unflatten, write_envi, DataType, HyperCube, Interleave, LabelMask,
};
use spectral_sift::wavesel::{covproc_select, exclude_tail, r2_forward_select};

fn gaussian(seed: u64, n: usize, p: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal))
}

fn centered(x: &Array2<f64>) -> Array2<f64> {
    x - &x.mean_axis(Axis(0)).unwrap()
}

fn increasing_grid(seed: u64, bands: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = 350.0 + rng.random_range(0.0..50.0);
    (0..bands)
        .map(|_| {
            w += rng.random_range(0.5..20.0);
            w
        })
        .collect()
}

fn small_cube(seed: u64, rows: usize, cols: usize, bands: usize) -> HyperCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_fn((rows, cols, bands), |_| rng.random_range(-2.0..2.0));
    HyperCube::new(data, increasing_grid(seed.wrapping_add(1), bands)).unwrap()
}

/// Two classes plus unlabeled rows; mites sit near the origin.
fn labeled_points(seed: u64, n: usize) -> (Array2<f64>, Vec<Option<PixelClass>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 3));
    let mut roles = Vec::with_capacity(n);
    for i in 0..n {
        let role = match i % 4 {
            0 => Some(PixelClass::Mite),
            1 | 2 => Some(PixelClass::Bee),
            _ => None,
        };
        let shift = if role == Some(PixelClass::Mite) { 0.0 } else { 1.5 };
        for j in 0..3 {
            x[[i, j]] = shift * (j as f64 + 1.0) + 0.6 * rng.sample::<f64, _>(StandardNormal);
        }
        roles.push(role);
    }
    (x, roles)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn envi_roundtrip_every_interleave(
        seed in any::<u64>(),
        rows in 1usize..6,
        cols in 1usize..6,
        bands in 1usize..7,
    ) {
        let cube = small_cube(seed, rows, cols, bands);
        let dir = tempfile::tempdir().unwrap();
        for il in [Interleave::Bsq, Interleave::Bil, Interleave::Bip] {
            let hdr = dir.path().join(format!("{}.hdr", il.as_str()));
            let img = dir.path().join(format!("{}.img", il.as_str()));
            write_envi(&cube, &hdr, &img, il, DataType::F64).unwrap();
            let back = read_envi(&hdr, &img).unwrap();
            prop_assert_eq!(back.data(), cube.data());
            prop_assert_eq!(back.wavelengths_nm(), cube.wavelengths_nm());
            prop_assert_eq!(back.interleave(), il);
        }
    }

    #[test]
    fn flatten_unflatten_is_a_bijection(
        seed in any::<u64>(),
        rows in 1usize..7,
        cols in 1usize..7,
        bands in 1usize..4,
    ) {
        let cube = small_cube(seed, rows, cols, bands);
        let (x, index) = cube.flatten(None, None).unwrap();
        let distinct: BTreeSet<_> = index.iter().copied().collect();
        prop_assert_eq!(distinct.len(), rows * cols);
        let back = unflatten(&x, &index, rows, cols, cube.wavelengths_nm().to_vec()).unwrap();
        prop_assert_eq!(back.data(), cube.data());

        // a masked subset lands back on the same positions
        let labels = Array2::from_shape_fn((rows, cols), |(r, c)| ((r * 7 + c * 3 + seed as usize) % 3) as u8);
        let mask = LabelMask::with_default_palette(labels).unwrap();
        let keep: BTreeSet<u8> = [1].into();
        let (xs, idx) = cube.flatten(Some(&mask), Some(&keep)).unwrap();
        for (i, &(r, c)) in idx.iter().enumerate() {
            prop_assert_eq!(mask.get(r, c), 1);
            prop_assert_eq!(xs.row(i), cube.pixel(r, c));
        }
    }

    #[test]
    fn nm_to_band_is_the_nearest_band(
        seed in any::<u64>(),
        bands in 1usize..30,
        frac in 0.0f64..=1.0,
    ) {
        let wl = increasing_grid(seed, bands);
        let target = wl[0] + frac * (wl[bands - 1] - wl[0]);
        let cube = HyperCube::new(Array3::zeros((1, 1, bands)), wl.clone()).unwrap();
        let got = cube.nm_to_band(target).unwrap();
        let best = wl.iter().map(|w| (w - target).abs()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!((wl[got] - target).abs(), best);
        // ties go to the lower band
        let first = wl.iter().position(|w| (w - target).abs() == best).unwrap();
        prop_assert_eq!(got, first);
    }

    #[test]
    fn pca_loadings_scores_and_reconstruction(
        seed in any::<u64>(),
        n in 4usize..25,
        p in 2usize..9,
    ) {
        let x = centered(&gaussian(seed, n, p));
        let k = (n - 1).min(p);
        let (model, scores) = fit_pca(x.view(), k).unwrap();
        let ptp = model.loadings().t().dot(model.loadings());
        let ttt = scores.t().dot(&scores);
        for i in 0..k {
            for j in 0..k {
                let eye = if i == j { 1.0 } else { 0.0 };
                prop_assert!((ptp[[i, j]] - eye).abs() < 1e-10);
                if i != j {
                    prop_assert!(ttt[[i, j]].abs() < 1e-8 * (1.0 + ttt[[i, i]]));
                }
            }
        }
        let corr: Vec<f64> = (0..k).map(|i| 1.0 - i as f64 / (k as f64 + 1.0)).collect();
        let mut last = f64::INFINITY;
        for j in 1..=k {
            let sel = select_components(&corr, SelectionRule::TopN(j)).unwrap();
            let rec = model.reconstruct(scores.view(), &sel).unwrap();
            let err = (&rec - &x).iter().map(|v| v * v).sum::<f64>();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
    }

    #[test]
    fn pca_projection_is_linear(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x = centered(&gaussian(seed, 12, 5));
        let (model, _) = fit_pca(x.view(), 4).unwrap();
        let x1 = gaussian(seed ^ 1, 6, 5);
        let x2 = gaussian(seed ^ 2, 6, 5);
        let combo = &x1 * a + &x2 * b;
        let lhs = model.project(combo.view()).unwrap();
        let rhs = model.project(x1.view()).unwrap() * a + model.project(x2.view()).unwrap() * b;
        for (u, v) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn simpls_scores_orthogonal_and_r2_nondecreasing(
        seed in any::<u64>(),
        n in 8usize..30,
        p in 2usize..8,
        m in 1usize..3,
    ) {
        let x = gaussian(seed, n, p);
        let y = gaussian(seed.wrapping_add(7), n, m) + x.column(0).insert_axis(Axis(1));
        let mut last = f64::NEG_INFINITY;
        for a in 1..=p.min(n - 1) {
            let model = fit_simpls(x.view(), y.view(), a).unwrap();
            let t = model.x_scores();
            let ttt = t.t().dot(t);
            for i in 0..t.ncols() {
                for j in 0..i {
                    prop_assert!(ttt[[i, j]].abs() < 1e-8 * (1.0 + ttt[[i, i]]));
                }
            }
            let r2 = r_squared(y.view(), model.predict(x.view()).unwrap().view());
            prop_assert!(r2 >= last - 1e-10);
            last = r2;
        }
    }

    #[test]
    fn lloyd_inertia_never_rises(
        seed in any::<u64>(),
        n in 6usize..40,
        k in 1usize..5,
    ) {
        let x = gaussian(seed, n, 3);
        let fit = kmeans_fit(x.view(), k.min(n), seed, 100, 1e-9).unwrap();
        for w in fit.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn supervised_fit_and_assignment(seed in any::<u64>(), n in 12usize..48) {
        let (x, roles) = labeled_points(seed, n);
        let cfg = EscalationConfig { k0: 2, k_max: 8, seed, ..EscalationConfig::default() };
        let Ok((model, diag)) = fit_supervised(x.view(), &roles, &cfg) else {
            return Ok(());
        };
        let (assignment, classes) = model.assign(x.view()).unwrap();
        let (fa, missed) = confusion(&assignment, &roles, model.class_of_cluster());
        prop_assert_eq!((fa, missed), (0, 0));
        let last = diag.attempts.last().unwrap();
        prop_assert_eq!((last.false_alarms, last.missed_mites), (0, 0));
        prop_assert_eq!(diag.final_k, Some(model.k()));

        // assigning twice, or in reverse row order, changes nothing
        let (again, _) = model.assign(x.view()).unwrap();
        prop_assert_eq!(&again, &assignment);
        let rev: Vec<usize> = (0..n).rev().collect();
        let (flipped, flipped_classes) = model.assign(x.select(Axis(0), &rev).view()).unwrap();
        for (i, &r) in rev.iter().enumerate() {
            prop_assert_eq!(flipped[i], assignment[r]);
            prop_assert_eq!(flipped_classes[i], classes[r]);
        }
    }

    #[test]
    fn selections_avoid_the_excluded_tail(
        seed in any::<u64>(),
        bands in 5usize..12,
        tail in 1usize..3,
    ) {
        let n = 20;
        let x = gaussian(seed, n, bands);
        let y: Array1<f64> = x.column(bands - 1).to_owned() + x.column(0);
        let excluded = exclude_tail(bands, tail).unwrap();
        let fwd = r2_forward_select(x.view(), y.view(), 3, &[], 5, &excluded).unwrap();
        let cov = covproc_select(x.view(), y.view(), 2, &excluded).unwrap();
        for b in fwd.selected.iter().chain(&cov.selected) {
            prop_assert!(!excluded.contains(b));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn kernel_flows_trace_is_reproducible(seed in any::<u64>()) {
        let x = gaussian(seed, 24, 2);
        let labels: Vec<u8> = (0..24).map(|i| u8::from(x[[i, 0]] * x[[i, 1]] > 0.0)).collect();
        prop_assume!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
        let spec = KernelSpec::new(KernelFamily::Gaussian, 1.0);
        let cfg = KfConfig { iterations: 5, subsamplings_per_iter: 4, seed, ..KfConfig::default() };
        let a = kf_optimize(x.view(), &labels, &spec, &cfg, &[1, 2]).unwrap();
        let b = kf_optimize(x.view(), &labels, &spec, &cfg, &[1, 2]).unwrap();
        prop_assert_eq!(a, b);
    }
}
