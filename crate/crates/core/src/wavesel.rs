//! Wavelength selection with PLS.
//!
//! Two procedures are provided. [`r2_forward_select`] grows a band set
//! greedily, adding whichever band gives the PLS model the largest training
//! R². [`covproc_select`] works in rounds: it ranks bands by their one-factor
//! PLS weight, keeps the weight prefix with the best score metric, deflates X
//! by that round's score and repeats.
//!
//! Band indices are 0-based throughout.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::pls::{fit_simpls, r_squared_1d};
use crate::preprocess::ScaleModel;

/// Latent-variable cap for the inner PLS of forward selection.
pub const DEFAULT_LV_CAP: usize = 5;
pub const DEFAULT_TAIL: usize = 10;
pub const DEFAULT_INIT: usize = 3;

/// Bands with a sample std below this are never offered as candidates.
const FLAT_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    R2Forward,
    Covproc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardStep {
    pub band: usize,
    /// Training R² once `band` is part of the selection.
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovprocRound {
    /// 1-based.
    pub round: usize,
    pub variables: Vec<usize>,
    /// α for each prefix length; `None` where the scores vanish.
    pub alpha: Vec<Option<f64>>,
    /// Chosen prefix length.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    pub excluded: Vec<usize>,
    pub selected: Vec<usize>,
    /// Centre wavelengths of `selected`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_nm: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<ForwardStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<CovprocRound>,
    #[serde(default)]
    pub stopped_early: bool,
}

impl SelectionReport {
    pub fn with_wavelengths(mut self, wavelengths_nm: &[f64]) -> Result<Self> {
        let nm = self
            .selected
            .iter()
            .map(|&b| {
                wavelengths_nm.get(b).copied().ok_or_else(|| {
                    Error::invalid(format!("band {b} outside {} wavelengths", wavelengths_nm.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.selected_nm = Some(nm);
        Ok(self)
    }
}

/// The last `n_tail` band indices.
pub fn exclude_tail(bands: usize, n_tail: usize) -> Result<BTreeSet<usize>> {
    if n_tail >= bands {
        return Err(Error::invalid(format!(
            "cannot exclude {n_tail} of {bands} bands"
        )));
    }
    Ok((bands - n_tail..bands).collect())
}

fn check_xy(x: &ArrayView2<'_, f64>, y: &ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            context: "selection rows",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < 3 {
        return Err(Error::invalid("band selection needs at least 3 rows"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("band selection input".into()));
    }
    Ok(())
}

fn check_excluded(bands: usize, excluded: &BTreeSet<usize>) -> Result<()> {
    match excluded.iter().next_back() {
        Some(&b) if b >= bands => Err(Error::invalid(format!(
            "excluded band {b} outside {bands} bands"
        ))),
        _ => Ok(()),
    }
}

/// Top `m` usable bands by |ρ(band, y)|; ties go to the lower index.
pub fn init_by_correlation(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    m: usize,
    excluded: &BTreeSet<usize>,
) -> Result<Vec<usize>> {
    check_xy(&x, &y)?;
    check_excluded(x.ncols(), excluded)?;
    let distinct: BTreeSet<u64> = y.iter().map(|v| v.to_bits()).collect();
    if distinct.len() != 2 {
        return Err(Error::invalid(format!(
            "correlation initialisation needs a two-class response, found {} values",
            distinct.len()
        )));
    }
    let usable: Vec<usize> = (0..x.ncols()).filter(|b| !excluded.contains(b)).collect();
    if m >= usable.len() {
        return Err(Error::invalid(format!(
            "cannot initialise with {m} of {} usable bands",
            usable.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = usable
        .iter()
        .map(|&b| (b, pearson(x.column(b), y).map_or(0.0, f64::abs)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(m).map(|p| p.0).collect())
}

/// Training R² of a PLS model on `bands` with `min(|bands|, lv_cap)` factors.
fn subset_r2(x: ArrayView2<'_, f64>, y: &Array2<f64>, bands: &[usize], lv_cap: usize) -> Option<f64> {
    let xs = x.select(Axis(1), bands);
    let a = bands.len().min(lv_cap).min(x.nrows() - 1);
    let model = fit_simpls(xs.view(), y.view(), a).ok()?;
    let yhat = model.predict(xs.view()).ok()?;
    let r2 = r_squared_1d(y.column(0), yhat.column(0));
    r2.is_finite().then_some(r2)
}

/// Forward selection up to `target` bands in total (initial bands included).
pub fn r2_forward_select(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    target: usize,
    init: &[usize],
    lv_cap: usize,
    excluded: &BTreeSet<usize>,
) -> Result<SelectionReport> {
    r2_forward_select_until(x, y, target, init, lv_cap, excluded, |_| false)
}

/// As [`r2_forward_select`], calling `stop` with the selection after every
/// addition; selection ends as soon as it returns true.
pub fn r2_forward_select_until<F>(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    target: usize,
    init: &[usize],
    lv_cap: usize,
    excluded: &BTreeSet<usize>,
    mut stop: F,
) -> Result<SelectionReport>
where
    F: FnMut(&[usize]) -> bool,
{
    check_xy(&x, &y)?;
    check_excluded(x.ncols(), excluded)?;
    if lv_cap == 0 {
        return Err(Error::invalid("latent-variable cap must be at least 1"));
    }
    let usable: Vec<usize> = (0..x.ncols()).filter(|b| !excluded.contains(b)).collect();
    if target > usable.len() {
        return Err(Error::invalid(format!(
            "cannot select {target} of {} usable bands",
            usable.len()
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(target);
    for &b in init {
        if excluded.contains(&b) || b >= x.ncols() || selected.contains(&b) {
            return Err(Error::invalid(format!("initial band {b} is not usable")));
        }
        selected.push(b);
    }
    if selected.len() > target {
        return Err(Error::invalid("more initial bands than the target count"));
    }
    let ym = y.mean().expect("rows checked");
    if y.iter().all(|v| (v - ym).abs() == 0.0) {
        return Err(Error::invalid("response has zero variance"));
    }
    let y2 = y.to_owned().insert_axis(Axis(1));

    let mut candidates: Vec<usize> = Vec::new();
    for &b in &usable {
        if selected.contains(&b) {
            continue;
        }
        let col = x.column(b);
        let m = col.mean().expect("rows checked");
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        if sd < FLAT_BAND {
            log::warn!("band {b} is flat and is skipped");
        } else {
            candidates.push(b);
        }
    }

    let mut trace = Vec::new();
    let mut stopped_early = false;
    if !selected.is_empty() && stop(&selected) {
        stopped_early = true;
    }
    while !stopped_early && selected.len() < target {
        let scored: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|&c| {
                let mut trial = selected.clone();
                trial.push(c);
                subset_r2(x, &y2, &trial, lv_cap)
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (pos, r2) in scored.iter().enumerate() {
            match r2 {
                None => log::warn!(
                    "candidate band {} gives a degenerate fit and is skipped",
                    candidates[pos]
                ),
                Some(v) => {
                    if best.is_none_or(|(_, bv)| *v > bv) {
                        best = Some((pos, *v));
                    }
                }
            }
        }
        let Some((pos, r2)) = best else {
            log::warn!("no candidate band gives a usable fit; stopping at {}", selected.len());
            break;
        };
        let band = candidates.remove(pos);
        selected.push(band);
        trace.push(ForwardStep { band, r2 });
        if stop(&selected) {
            stopped_early = selected.len() < target;
            break;
        }
    }

    Ok(SelectionReport {
        method: Method::R2Forward,
        excluded: excluded.iter().copied().collect(),
        initial: init.to_vec(),
        selected,
        selected_nm: None,
        trace,
        rounds: Vec::new(),
        stopped_early,
    })
}

/// Output of the COVPROC rounds on already scaled data.
pub struct CovprocRun {
    pub rounds: Vec<CovprocRound>,
    /// Chosen score vector of each round.
    pub scores: Vec<Array1<f64>>,
    /// X after the last deflation.
    pub deflated: Array2<f64>,
}

/// COVPROC on autoscaled `x` and centred `y`, without any band exclusion.
/// Round variables index the columns of `x`.
pub fn covproc_core(mut x: Array2<f64>, y: ArrayView1<'_, f64>, rounds: usize) -> CovprocRun {
    let bands = x.ncols();
    let mut out = Vec::with_capacity(rounds);
    let mut scores = Vec::with_capacity(rounds);
    for r in 0..rounds {
        // one-factor PLS weight direction
        let w = x.t().dot(&y);
        let mut order: Vec<usize> = (0..bands).collect();
        order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));

        let mut t = Array1::<f64>::zeros(x.nrows());
        let mut alpha = Vec::with_capacity(bands);
        let mut best: Option<(usize, f64, Array1<f64>)> = None;
        for (i, &ii) in order.iter().enumerate() {
            t.scaled_add(w[ii], &x.column(ii));
            let tt = t.dot(&t);
            if !(tt > 0.0) {
                alpha.push(None);
                continue;
            }
            let a = y.dot(&t).abs() / tt;
            alpha.push(Some(a));
            if best.as_ref().is_none_or(|b| a > b.1) {
                best = Some((i + 1, a, t.clone()));
            }
        }
        let Some((n, _, t)) = best else {
            log::warn!("COVPROC round {} has no usable scores; stopping", r + 1);
            break;
        };
        let tt = t.dot(&t);
        let p = x.t().dot(&t) / tt;
        for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(-t[i], &p);
        }
        out.push(CovprocRound {
            round: r + 1,
            variables: order[..n].to_vec(),
            alpha,
            n,
        });
        scores.push(t);
    }
    CovprocRun {
        rounds: out,
        scores,
        deflated: x,
    }
}

/// `rounds` COVPROC rounds. X is autoscaled and y centred internally.
pub fn covproc_select(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    rounds: usize,
    excluded: &BTreeSet<usize>,
) -> Result<SelectionReport> {
    check_xy(&x, &y)?;
    check_excluded(x.ncols(), excluded)?;
    if rounds == 0 {
        return Err(Error::invalid("COVPROC needs at least one round"));
    }
    let usable: Vec<usize> = (0..x.ncols()).filter(|b| !excluded.contains(b)).collect();
    if usable.is_empty() {
        return Err(Error::invalid("every band is excluded"));
    }
    let xs = x.select(Axis(1), &usable);
    let xz = ScaleModel::fit(xs.view())?.apply(xs.view())?;
    let ym = y.mean().expect("rows checked");
    let yc = y.mapv(|v| v - ym);
    if yc.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("response has zero variance"));
    }
    let run = covproc_core(xz, yc.view(), rounds);
    let rounds: Vec<CovprocRound> = run
        .rounds
        .into_iter()
        .map(|mut r| {
            for v in &mut r.variables {
                *v = usable[*v];
            }
            r
        })
        .collect();
    let mut selected = Vec::new();
    for r in &rounds {
        for &v in &r.variables {
            if !selected.contains(&v) {
                selected.push(v);
            }
        }
    }
    Ok(SelectionReport {
        method: Method::Covproc,
        excluded: excluded.iter().copied().collect(),
        selected,
        selected_nm: None,
        initial: Vec::new(),
        trace: Vec::new(),
        rounds,
        stopped_early: false,
    })
}

/// Concatenates the variable lists of the given 1-based rounds, dropping
/// repeats.
pub fn reorder_rounds(report: &SelectionReport, order: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &r in order {
        let round = report
            .rounds
            .iter()
            .find(|x| x.round == r)
            .ok_or_else(|| Error::invalid(format!("unknown COVPROC round {r}")))?;
        for &v in &round.variables {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((rows, cols), |_| nd.sample(&mut rng))
    }

    #[test]
    fn tail_exclusion() {
        let t = exclude_tail(204, 10).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(*t.iter().next().unwrap(), 194);
        assert_eq!(*t.iter().last().unwrap(), 203);
        assert!(exclude_tail(204, 0).unwrap().is_empty());
        assert!(exclude_tail(10, 10).is_err());
    }

    #[test]
    fn correlation_init() {
        let mut x = noise(30, 10, 1);
        let y: Array1<f64> = (0..30).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        x.column_mut(7).assign(&y);
        let none = BTreeSet::new();
        let s = init_by_correlation(x.view(), y.view(), 3, &none).unwrap();
        assert_eq!(s[0], 7);
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 3);
        // brute-force ranking
        let mut all: Vec<(usize, f64)> = (0..10)
            .map(|b| (b, pearson(x.column(b), y.view()).unwrap().abs()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(s, all.iter().take(3).map(|p| p.0).collect::<Vec<_>>());
        // excluded band is never offered
        let ex: BTreeSet<usize> = [7].into();
        assert!(!init_by_correlation(x.view(), y.view(), 3, &ex).unwrap().contains(&7));
        assert!(init_by_correlation(x.view(), y.view(), 10, &none).is_err());
        let cont: Array1<f64> = (0..30).map(f64::from).collect();
        assert!(init_by_correlation(x.view(), cont.view(), 2, &none).is_err());
    }

    #[test]
    fn exact_band_is_found_first() {
        let x = noise(25, 8, 2);
        let y = x.column(5).to_owned();
        let r = r2_forward_select(x.view(), y.view(), 1, &[], 5, &BTreeSet::new()).unwrap();
        assert_eq!(r.selected, vec![5]);
        assert!((r.trace[0].r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn additive_pair_is_found() {
        let x = noise(40, 12, 3);
        let y = &x.column(2) + &x.column(9);
        let r = r2_forward_select(x.view(), y.view(), 2, &[], 5, &BTreeSet::new()).unwrap();
        let got: BTreeSet<usize> = r.selected.iter().copied().collect();
        assert_eq!(got, [2, 9].into());
        assert!((r.trace[1].r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn stop_callback_and_flat_bands() {
        let mut x = noise(30, 6, 4);
        x.column_mut(1).fill(2.0);
        let y = &x.column(0) - &x.column(3) + &x.column(4);
        let r = r2_forward_select_until(x.view(), y.view(), 5, &[], 5, &BTreeSet::new(), |s| s.len() == 2)
            .unwrap();
        assert_eq!(r.selected.len(), 2);
        assert!(r.stopped_early);
        let all = r2_forward_select(x.view(), y.view(), 5, &[], 5, &BTreeSet::new()).unwrap();
        assert!(!all.selected.contains(&1));
        assert_eq!(all.selected.len(), 5);
    }

    #[test]
    fn forward_errors() {
        let x = noise(10, 4, 5);
        let y = x.column(0).to_owned();
        let ex: BTreeSet<usize> = [3].into();
        assert!(r2_forward_select(x.view(), y.view(), 4, &[], 5, &ex).is_err());
        assert!(r2_forward_select(x.view(), y.view(), 2, &[3], 5, &ex).is_err());
        assert!(r2_forward_select(x.view(), y.view(), 1, &[0, 1], 5, &ex).is_err());
        let flat = Array1::from_elem(10, 1.0);
        assert!(r2_forward_select(x.view(), flat.view(), 1, &[], 5, &ex).is_err());
    }

    #[test]
    fn covproc_picks_the_response_column() {
        let mut x = noise(50, 8, 6) * 0.01;
        let y: Array1<f64> = (0..50).map(|i| if i < 20 { 1.0 } else { -0.5 }).collect();
        x.column_mut(4).assign(&(&y * 3.0));
        let r = covproc_select(x.view(), y.view(), 1, &BTreeSet::new()).unwrap();
        assert_eq!(r.rounds[0].n, 1);
        assert_eq!(r.rounds[0].variables, vec![4]);
        // the enumeration over prefixes agrees with the recorded maximum
        let a = &r.rounds[0].alpha;
        let best = a.iter().flatten().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        assert_eq!(a[0], Some(best));
    }

    #[test]
    fn covproc_alpha_matches_direct_formula() {
        let x = noise(12, 5, 7);
        let y: Array1<f64> = noise(12, 1, 8).column(0).to_owned();
        let yc = y.mapv(|v| v - y.mean().unwrap());
        let run = covproc_core(x.clone(), yc.view(), 1);
        let w = x.t().dot(&yc);
        let order = {
            let mut o: Vec<usize> = (0..5).collect();
            o.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).unwrap());
            o
        };
        for i in 0..5 {
            let mut wr = Array1::zeros(5);
            for &ii in &order[..=i] {
                wr[ii] = yc.dot(&x.column(ii));
            }
            let t = x.dot(&wr);
            let direct = yc.dot(&t).abs() / t.dot(&t);
            let got = run.rounds[0].alpha[i].unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn deflation_removes_the_round_score() {
        let x = noise(20, 6, 9);
        let y = noise(20, 1, 10).column(0).to_owned();
        let yc = y.mapv(|v| v - y.mean().unwrap());
        let one = covproc_core(x.clone(), yc.view(), 1);
        let xt = one.deflated.t().dot(&one.scores[0]);
        assert!(xt.iter().all(|v| v.abs() < 1e-8));
        let two = covproc_core(x, yc.view(), 2);
        assert!(two.scores[0].dot(&two.scores[1]).abs() < 1e-8);
    }

    #[test]
    fn reorder() {
        let x = noise(30, 10, 11);
        let y: Array1<f64> = (0..30).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let ex = exclude_tail(10, 2).unwrap();
        let r = covproc_select(x.view(), y.view(), 3, &ex).unwrap();
        for round in &r.rounds {
            assert!(round.variables.iter().all(|v| !ex.contains(v)));
        }
        assert_eq!(reorder_rounds(&r, &[1]).unwrap(), r.rounds[0].variables);
        let a: BTreeSet<usize> = reorder_rounds(&r, &[2, 3]).unwrap().into_iter().collect();
        let b: BTreeSet<usize> = reorder_rounds(&r, &[3, 2]).unwrap().into_iter().collect();
        assert_eq!(a, b);
        assert!(reorder_rounds(&r, &[9]).is_err());
        let uniq: BTreeSet<usize> = r.selected.iter().copied().collect();
        assert_eq!(uniq.len(), r.selected.len());
    }

    #[test]
    fn report_json() {
        let x = array![[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [2.0, 2.0, 0.0], [1.0, 3.0, 1.0]];
        let y = array![1.0, 0.0, 1.0, 0.0];
        let r = covproc_select(x.view(), y.view(), 1, &BTreeSet::new())
            .unwrap()
            .with_wavelengths(&[400.0, 500.0, 600.0])
            .unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["method"], "covproc");
        assert!(v["selected_nm"].is_array());
        let back: SelectionReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
