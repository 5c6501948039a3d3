//! Sample average approximations of the dropout objective.
//!
//! Row `i` draws its masks sequentially from its own stream, one `u32` per
//! coordinate per draw, exactly as [`crate::dropout::sample_mask`] does.
//! Masks are kept bit-packed per coordinate so that draw subsets (a prefix,
//! or the odd and even halves used by the multilevel estimator) are word
//! masks rather than copies.
//!
//! For the linear family the SAA objective is quadratic and only needs the
//! weighted Gram matrix of the masked rows. Those are accumulated with
//! popcounts while the masks stream past, without storing them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dropout::DropoutSpec;
use crate::error::{DroError, Result};
use crate::glm::{Dataset, FamilyKind, GlmFamily};
use crate::optim::{minimize, GdConfig, SmoothObjective};
use crate::rng::{self, StreamRng};

const EVEN_BITS: u64 = 0x5555_5555_5555_5555;

/// A subset of the draw indices `0..total` of every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawSet {
    All,
    /// The first `m` draws.
    Prefix(usize),
    /// Zero-based even indices, i.e. the 1st, 3rd, 5th, … draw.
    OddDraws,
    /// Zero-based odd indices, i.e. the 2nd, 4th, … draw.
    EvenDraws,
}

impl DrawSet {
    /// Bits of word `w` that belong to the subset.
    fn word_mask(self, w: usize, total: usize) -> u64 {
        let lo = w * 64;
        let valid = if total >= lo + 64 { u64::MAX } else if total <= lo { 0 } else { (1u64 << (total - lo)) - 1 };
        let sel = match self {
            DrawSet::All => u64::MAX,
            DrawSet::Prefix(m) => {
                if m >= lo + 64 {
                    u64::MAX
                } else if m <= lo {
                    0
                } else {
                    (1u64 << (m - lo)) - 1
                }
            }
            DrawSet::OddDraws => EVEN_BITS,
            DrawSet::EvenDraws => !EVEN_BITS,
        };
        valid & sel
    }

    pub fn count(self, total: usize) -> usize {
        match self {
            DrawSet::All => total,
            DrawSet::Prefix(m) => m.min(total),
            DrawSet::OddDraws => total.div_ceil(2),
            DrawSet::EvenDraws => total / 2,
        }
    }
}

/// Fills one 64-draw chunk of a row: bit `b` of `cols[j]` is set when draw
/// `b` keeps coordinate `j`.
fn fill_chunk(rng: &mut StreamRng, thresholds: &[u64], draws: usize, cols: &mut [u64]) {
    cols.iter_mut().for_each(|c| *c = 0);
    let mut buf = vec![0u32; cols.len()];
    for b in 0..draws {
        rng.fill(&mut buf[..]);
        for ((c, &t), &u) in cols.iter_mut().zip(thresholds).zip(&buf) {
            *c |= ((u as u64 >= t) as u64) << b;
        }
    }
}

/// Adds `popcount(sel[j] & sel[l])` to the packed upper triangle `cnt`.
fn add_pair_counts(sel: &[u64], cnt: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the CPU supports the instruction the clone is compiled for.
        return unsafe { add_pair_counts_popcnt(sel, cnt) };
    }
    add_pair_counts_portable(sel, cnt)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
fn add_pair_counts_popcnt(sel: &[u64], cnt: &mut [u32]) {
    add_pair_counts_portable(sel, cnt)
}

#[inline(always)]
fn add_pair_counts_portable(sel: &[u64], cnt: &mut [u32]) {
    let d = sel.len();
    let mut idx = 0;
    for j in 0..d {
        let cj = sel[j];
        if cj == 0 {
            idx += d - j;
            continue;
        }
        for (c, &cl) in cnt[idx..idx + d - j].iter_mut().zip(&sel[j..]) {
            *c += (cj & cl).count_ones();
        }
        idx += d - j;
    }
}

/// Bit-packed masks for every row: `bits[i][j * words + w]`.
#[derive(Debug, Clone)]
pub struct MaskBank {
    d: usize,
    draws: usize,
    words: usize,
    bits: Vec<Vec<u64>>,
}

impl MaskBank {
    /// `draws` masks per row; row `i` uses stream `i` of `seed`.
    pub fn generate(n: usize, spec: &DropoutSpec, draws: usize, seed: u64) -> Self {
        let d = spec.dim();
        let thresholds = spec.drop_thresholds();
        let words = draws.div_ceil(64);
        let mut chunk = vec![0u64; d];
        let bits = (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, i as u64);
                let mut row = vec![0u64; d * words];
                for w in 0..words {
                    let m = (draws - w * 64).min(64);
                    fill_chunk(&mut r, &thresholds, m, &mut chunk);
                    for j in 0..d {
                        row[j * words + w] = chunk[j];
                    }
                }
                row
            })
            .collect();
        MaskBank { d, draws, words, bits }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Whether draw `k` of row `i` keeps coordinate `j`.
    pub fn keeps(&self, i: usize, k: usize, j: usize) -> bool {
        self.bits[i][j * self.words + k / 64] >> (k % 64) & 1 == 1
    }
}

/// General SAA objective with unit dispersion over a [`MaskBank`] subset.
pub struct SaaObjective<'a> {
    family: GlmFamily,
    data: &'a Dataset,
    bank: &'a MaskBank,
    set: DrawSet,
    scales: Vec<f64>,
    masks: Vec<u64>,
    weight: f64,
}

impl<'a> SaaObjective<'a> {
    pub fn new(family: &GlmFamily, data: &'a Dataset, spec: &DropoutSpec, bank: &'a MaskBank, set: DrawSet) -> Result<Self> {
        let count = set.count(bank.draws);
        if count == 0 {
            return Err(DroError::InvalidParameter("empty draw subset".into()));
        }
        let masks = (0..bank.words).map(|w| set.word_mask(w, bank.draws)).collect();
        Ok(SaaObjective {
            family: *family,
            data,
            bank,
            set,
            scales: spec.scales(),
            masks,
            weight: 1.0 / (data.n() * count) as f64,
        })
    }

    pub fn draw_set(&self) -> DrawSet {
        self.set
    }

    /// Linear predictors of the selected draws of row `i`, indexed by draw.
    fn etas(&self, i: usize, beta: &[f64], eta: &mut [f64]) {
        eta.iter_mut().for_each(|e| *e = 0.0);
        let x = self.data.row(i);
        let row = &self.bank.bits[i];
        for j in 0..self.bank.d {
            let c = x[j] * self.scales[j] * beta[j];
            if c == 0.0 {
                continue;
            }
            for (w, &m) in self.masks.iter().enumerate() {
                let mut word = row[j * self.bank.words + w] & m;
                while word != 0 {
                    let b = word.trailing_zeros() as usize;
                    eta[w * 64 + b] += c;
                    word &= word - 1;
                }
            }
        }
    }

    fn for_selected(&self, mut f: impl FnMut(usize)) {
        for (w, &m) in self.masks.iter().enumerate() {
            let mut word = m;
            while word != 0 {
                let b = word.trailing_zeros() as usize;
                f(w * 64 + b);
                word &= word - 1;
            }
        }
    }
}

impl SmoothObjective for SaaObjective<'_> {
    fn dim(&self) -> usize {
        self.bank.d
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut eta = vec![0.0; self.bank.draws];
        let mut total = 0.0;
        for (i, &y) in self.data.y().iter().enumerate() {
            self.etas(i, beta, &mut eta);
            self.for_selected(|k| total += self.family.canonical_loss(eta[k], y));
        }
        total * self.weight
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let d = self.bank.d;
        let mut eta = vec![0.0; self.bank.draws];
        let mut g = vec![0.0; d];
        for (i, &y) in self.data.y().iter().enumerate() {
            self.etas(i, beta, &mut eta);
            self.for_selected(|k| eta[k] = self.family.psi_dot(eta[k]) - y);
            let x = self.data.row(i);
            let row = &self.bank.bits[i];
            for j in 0..d {
                let mut acc = 0.0;
                for (w, &m) in self.masks.iter().enumerate() {
                    let mut word = row[j * self.bank.words + w] & m;
                    while word != 0 {
                        let b = word.trailing_zeros() as usize;
                        acc += eta[w * 64 + b];
                        word &= word - 1;
                    }
                }
                g[j] += acc * x[j] * self.scales[j];
            }
        }
        g.iter_mut().for_each(|v| *v *= self.weight);
        g
    }

    fn hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.bank.d;
        let mut eta = vec![0.0; self.bank.draws];
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.data.n() {
            self.etas(i, beta, &mut eta);
            self.for_selected(|k| eta[k] = self.family.psi_ddot(eta[k]));
            let x = self.data.row(i);
            let row = &self.bank.bits[i];
            for j in 0..d {
                for l in j..d {
                    let mut acc = 0.0;
                    for (w, &m) in self.masks.iter().enumerate() {
                        let mut word = row[j * self.bank.words + w] & row[l * self.bank.words + w] & m;
                        while word != 0 {
                            let b = word.trailing_zeros() as usize;
                            acc += eta[w * 64 + b];
                            word &= word - 1;
                        }
                    }
                    let v = acc * x[j] * self.scales[j] * x[l] * self.scales[l];
                    h[(j, l)] += v;
                    if l != j {
                        h[(l, j)] += v;
                    }
                }
            }
        }
        h * self.weight
    }
}

/// `½βᵀAβ − bᵀβ + c`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl SmoothObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let x = DVector::from_column_slice(beta);
        0.5 * x.dot(&(&self.a * &x)) - self.b.dot(&x) + self.c
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(beta);
        (&self.a * x - &self.b).as_slice().to_vec()
    }

    fn hessian(&self, _beta: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// Streams `draws` masks per row and returns, for each requested subset,
/// the linear-family SAA objective `(1/(n·K)) Σ ½((x⊙ξ)ᵀβ)² − y(x⊙ξ)ᵀβ`.
pub fn linear_saa_objectives(
    data: &Dataset,
    spec: &DropoutSpec,
    draws: usize,
    seed: u64,
    sets: &[DrawSet],
) -> Result<Vec<QuadraticObjective>> {
    let d = data.d();
    if spec.dim() != d {
        return Err(DroError::DimensionMismatch { expected: d, got: spec.dim() });
    }
    // with both halves present the full set is their average
    let halves = (
        sets.iter().position(|s| *s == DrawSet::OddDraws),
        sets.iter().position(|s| *s == DrawSet::EvenDraws),
    );
    let derived_all = match halves {
        (Some(o), Some(e)) if draws % 2 == 0 => sets.iter().position(|s| *s == DrawSet::All).map(|a| (a, o, e)),
        _ => None,
    };
    let thresholds = spec.drop_thresholds();
    let scales = spec.scales();
    let words = draws.div_ceil(64);
    let tri = d * (d + 1) / 2;
    let mut a_acc: Vec<Vec<f64>> = vec![vec![0.0; tri]; sets.len()];
    let mut b_acc: Vec<Vec<f64>> = vec![vec![0.0; d]; sets.len()];
    let mut counts: Vec<Vec<u32>> = vec![vec![0; tri]; sets.len()];
    let mut cols = vec![0u64; d];
    let mut sel = vec![0u64; d];

    for i in 0..data.n() {
        let mut r = rng::stream(seed, i as u64);
        counts.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v = 0));
        for w in 0..words {
            let m = (draws - w * 64).min(64);
            fill_chunk(&mut r, &thresholds, m, &mut cols);
            for (s, set) in sets.iter().enumerate() {
                if derived_all.is_some_and(|(a, _, _)| a == s) {
                    continue;
                }
                let wm = set.word_mask(w, draws);
                if wm == 0 {
                    continue;
                }
                for (o, c) in sel.iter_mut().zip(&cols) {
                    *o = c & wm;
                }
                add_pair_counts(&sel, &mut counts[s]);
            }
        }
        let x = data.row(i);
        let y = data.y()[i];
        let xs: Vec<f64> = x.iter().zip(&scales).map(|(a, s)| a * s).collect();
        for s in 0..sets.len() {
            if derived_all.is_some_and(|(a, _, _)| a == s) {
                continue;
            }
            let cnt = &counts[s];
            let acc = &mut a_acc[s];
            let mut idx = 0;
            for j in 0..d {
                b_acc[s][j] += y * xs[j] * cnt[idx] as f64;
                for l in j..d {
                    acc[idx] += xs[j] * xs[l] * cnt[idx] as f64;
                    idx += 1;
                }
            }
        }
    }

    if let Some((a, o, e)) = derived_all {
        for k in 0..tri {
            a_acc[a][k] = a_acc[o][k] + a_acc[e][k];
        }
        for j in 0..d {
            b_acc[a][j] = b_acc[o][j] + b_acc[e][j];
        }
    }
    let n = data.n();
    sets.iter()
        .enumerate()
        .map(|(s, set)| {
            let count = set.count(draws);
            if count == 0 {
                return Err(DroError::InvalidParameter("empty draw subset".into()));
            }
            let w = 1.0 / (n * count) as f64;
            let mut a = DMatrix::zeros(d, d);
            let mut idx = 0;
            for j in 0..d {
                for l in j..d {
                    a[(j, l)] = a_acc[s][idx] * w;
                    a[(l, j)] = a[(j, l)];
                    idx += 1;
                }
            }
            let b = DVector::from_iterator(d, b_acc[s].iter().map(|v| v * w));
            Ok(QuadraticObjective { a, b, c: 0.0 })
        })
        .collect()
}

/// Minimizes the SAA objective built from `draws` masks per row over each
/// subset in `sets`.
pub fn solve_saa_sets(
    family: &GlmFamily,
    data: &Dataset,
    spec: &DropoutSpec,
    draws: usize,
    seed: u64,
    sets: &[DrawSet],
    inner: &GdConfig,
) -> Result<Vec<Vec<f64>>> {
    if draws == 0 {
        return Err(DroError::InvalidParameter("need at least one draw per row".into()));
    }
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    match family.kind() {
        FamilyKind::Linear => linear_saa_objectives(data, spec, draws, seed, sets)?
            .iter()
            .map(|obj| minimize(obj, inner).map(|m| m.beta))
            .collect(),
        _ => {
            let bank = MaskBank::generate(data.n(), spec, draws, seed);
            sets.iter()
                .map(|&set| {
                    let obj = SaaObjective::new(family, data, spec, &bank, set)?;
                    minimize(&obj, inner).map(|m| m.beta)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dropout::sample_mask;
    use crate::glm::{dot, make_family};

    fn data() -> Dataset {
        let rows = vec![
            vec![1.0, 0.5, -0.3],
            vec![-0.7, 1.2, 0.8],
            vec![0.2, -1.1, 1.5],
            vec![1.4, 0.1, -0.6],
            vec![0.4, 0.9, 0.2],
        ];
        Dataset::from_rows(&rows, vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn word_masks() {
        assert_eq!(DrawSet::All.word_mask(0, 10), (1 << 10) - 1);
        assert_eq!(DrawSet::Prefix(3).word_mask(0, 10), 0b111);
        assert_eq!(DrawSet::Prefix(70).word_mask(1, 128), 0b11_1111);
        assert_eq!(DrawSet::OddDraws.word_mask(0, 4), 0b0101);
        assert_eq!(DrawSet::EvenDraws.word_mask(0, 4), 0b1010);
        assert_eq!(DrawSet::OddDraws.count(7), 4);
        assert_eq!(DrawSet::EvenDraws.count(7), 3);
    }

    #[test]
    fn bank_matches_sequential_sampling() {
        let spec = DropoutSpec::new(vec![0.3, 0.6, 0.1]).unwrap();
        let bank = MaskBank::generate(2, &spec, 130, 42);
        for i in 0..2 {
            let mut r = rng::stream(42, i as u64);
            for k in 0..130 {
                let m = sample_mask(&spec, &mut r);
                for j in 0..3 {
                    assert_eq!(bank.keeps(i, k, j), m.values[j] != 0.0, "row {i} draw {k} coord {j}");
                }
            }
        }
    }

    /// Direct evaluation over explicitly sampled masks.
    fn brute_value(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec, draws: usize, seed: u64, set: DrawSet, beta: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..data.n() {
            let mut r = rng::stream(seed, i as u64);
            for k in 0..draws {
                let m = sample_mask(spec, &mut r);
                let keep = match set {
                    DrawSet::All => true,
                    DrawSet::Prefix(p) => k < p,
                    DrawSet::OddDraws => k % 2 == 0,
                    DrawSet::EvenDraws => k % 2 == 1,
                };
                if keep {
                    let z = m.apply(data.row(i));
                    total += family.canonical_loss(dot(beta, &z), data.y()[i]);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn general_objective_matches_brute_force() {
        let f = make_family(FamilyKind::Logistic);
        let spec = DropoutSpec::new(vec![0.2, 0.5, 0.35]).unwrap();
        let d = data();
        let bank = MaskBank::generate(d.n(), &spec, 100, 7);
        let beta = [0.4, -0.3, 0.8];
        for set in [DrawSet::All, DrawSet::Prefix(16), DrawSet::OddDraws, DrawSet::EvenDraws] {
            let obj = SaaObjective::new(&f, &d, &spec, &bank, set).unwrap();
            let v = obj.value(&beta);
            let oracle = brute_value(&f, &d, &spec, 100, 7, set, &beta);
            assert!((v - oracle).abs() < 1e-12, "{set:?}");
        }
    }

    #[test]
    fn general_gradient_and_hessian_match_finite_differences() {
        let f = make_family(FamilyKind::Logistic);
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let d = data();
        let bank = MaskBank::generate(d.n(), &spec, 70, 3);
        let obj = SaaObjective::new(&f, &d, &spec, &bank, DrawSet::EvenDraws).unwrap();
        let beta = [0.2, -0.5, 0.6];
        let g = obj.gradient(&beta);
        let h = obj.hessian(&beta);
        let eps = 1e-5;
        for j in 0..3 {
            let mut p = beta;
            let mut m = beta;
            p[j] += eps;
            m[j] -= eps;
            let fd = (obj.value(&p) - obj.value(&m)) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-8);
            let gp = obj.gradient(&p);
            let gm = obj.gradient(&m);
            for l in 0..3 {
                assert!(((gp[l] - gm[l]) / (2.0 * eps) - h[(l, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn linear_stats_match_general_objective() {
        let lin = make_family(FamilyKind::Linear);
        let spec = DropoutSpec::new(vec![0.25, 0.5, 0.1]).unwrap();
        let d = data();
        let sets = [DrawSet::All, DrawSet::Prefix(8), DrawSet::OddDraws, DrawSet::EvenDraws];
        let quads = linear_saa_objectives(&d, &spec, 150, 11, &sets).unwrap();
        let bank = MaskBank::generate(d.n(), &spec, 150, 11);
        let beta = [0.7, -0.2, 1.1];
        for (q, set) in quads.iter().zip(sets) {
            let general = SaaObjective::new(&lin, &d, &spec, &bank, set).unwrap();
            assert!((q.value(&beta) - general.value(&beta)).abs() < 1e-12, "{set:?}");
            let (gq, gg) = (q.gradient(&beta), general.gradient(&beta));
            for j in 0..3 {
                assert!((gq[j] - gg[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halves_partition_the_full_sample() {
        let spec = DropoutSpec::homogeneous(0.4, 3).unwrap();
        let d = data();
        let q = linear_saa_objectives(&d, &spec, 64, 5, &[DrawSet::All, DrawSet::OddDraws, DrawSet::EvenDraws]).unwrap();
        let avg = (&q[1].a + &q[2].a) * 0.5;
        assert!((avg - &q[0].a).amax() < 1e-13);
    }
}
