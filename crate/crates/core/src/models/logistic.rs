//! Bayesian logistic regression with a flat prior, `p(y_i | ξ_i, x) = f(y_i xᵀ ξ_i)`.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TargetModel;
use crate::error::{Error, Result};
use crate::linalg::dot;

/// `f(z) = 1 / (1 + e^{-z})`, evaluated without overflowing.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log f(z) = -log(1 + e^{-z})`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Labels and covariates. Covariate vectors `ξ_i` are stored one per datum.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    labels: Vec<f64>,
    covariates: Vec<f64>,
    p: usize,
    /// Parameter used to simulate the data, if known.
    pub x_star: Option<Vec<f64>>,
}

/// Provenance written next to a data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSidecar {
    pub seed: Option<u64>,
    pub n: usize,
    pub p: usize,
    pub budget: Option<f64>,
    pub x_star: Option<Vec<f64>>,
    pub covariate_law: String,
}

impl LogisticData {
    pub fn new(labels: Vec<f64>, covariates: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("covariate dimension is zero".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("logistic data set is empty".into()));
        }
        if covariates.len() != labels.len() * p {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * p,
                got: covariates.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not ±1")));
        }
        if covariates.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariate".into()));
        }
        Ok(LogisticData {
            labels,
            covariates,
            p,
            x_star: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    /// One row per datum: label, then the covariates.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p).map(|j| format!("xi_{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].to_string()];
            row.extend(self.covariate(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let width = r
            .headers()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .len();
        if width < 2 {
            return Err(Error::InvalidArgument(
                "data csv needs a label and at least one covariate".into(),
            ));
        }
        let p = width - 1;
        let mut labels = Vec::new();
        let mut covariates = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {field:?}")))?;
                if j == 0 {
                    labels.push(v);
                } else {
                    covariates.push(v);
                }
            }
        }
        LogisticData::new(labels, covariates, p)
    }

    /// Writes `path` (CSV) and `path` with a `.json` extension (sidecar).
    pub fn save(&self, path: &Path, sidecar: &LogisticSidecar) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(file))
            .map_err(io::Error::other)?;
        let json = serde_json::to_string_pretty(sidecar).map_err(io::Error::other)?;
        std::fs::write(path.with_extension("json"), json)
    }

    /// Reads a CSV and, when present, its sidecar (restoring `x_star`).
    pub fn load(path: &Path) -> Result<(Self, Option<LogisticSidecar>)> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let mut data = LogisticData::read_csv(io::BufReader::new(file))?;
        let sidecar_path = path.with_extension("json");
        let sidecar = match std::fs::read_to_string(&sidecar_path) {
            Ok(text) => Some(
                serde_json::from_str::<LogisticSidecar>(&text)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", sidecar_path.display())))?,
            ),
            Err(_) => None,
        };
        if let Some(s) = &sidecar {
            data.x_star = s.x_star.clone();
        }
        Ok((data, sidecar))
    }
}

/// `(1/4) max_i ‖ξ_i‖²`, a uniform bound on every per-datum Hessian norm.
pub fn logistic_lipschitz_l(data: &LogisticData) -> f64 {
    (0..data.len())
        .map(|i| dot(data.covariate(i), data.covariate(i)))
        .fold(0.0, f64::max)
        * 0.25
}

/// Simulates a data set. The truth `x*` has i.i.d. components uniform on
/// `[0, K/p]`, so `x* >= 0` and `Σ x*_j <= K`; covariates are i.i.d. uniform
/// on `[-1, 1]`; `y_i = +1` with probability `f(x*ᵀ ξ_i)`.
pub fn generate_logistic_data<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    budget: f64,
    rng: &mut R,
) -> Result<LogisticData> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and p >= 1, got n = {n}, p = {p}"
        )));
    }
    if !(budget > 0.0) {
        return Err(Error::InvalidArgument(format!("K must be positive, got {budget}")));
    }
    let scale = budget / p as f64;
    let x_star: Vec<f64> = (0..p).map(|_| scale * rng.gen::<f64>()).collect();
    let mut labels = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n * p);
    for _ in 0..n {
        let xi: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let prob = sigmoid(dot(&x_star, &xi));
        labels.push(if rng.gen::<f64>() < prob { 1.0 } else { -1.0 });
        covariates.extend(xi);
    }
    let mut data = LogisticData::new(labels, covariates, p)?;
    data.x_star = Some(x_star);
    Ok(data)
}

/// Flat-prior posterior potential `U(x) = Σ_i -log f(y_i xᵀ ξ_i)`.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    data: LogisticData,
    lipschitz: f64,
    hessian_bound: f64,
}

impl LogisticModel {
    pub fn new(data: LogisticData) -> Self {
        let lipschitz = logistic_lipschitz_l(&data);
        let p = data.dim();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for i in 0..data.len() {
            let xi = data.covariate(i);
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += xi[a] * xi[b];
                }
            }
        }
        let top = gram
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0_f64, f64::max);
        // Small relative pad absorbs eigen-solver round-off.
        let hessian_bound = 0.25 * top * (1.0 + 1e-12);
        LogisticModel {
            data,
            lipschitz,
            hessian_bound,
        }
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }

    /// `-log f(y_i xᵀ ξ_i)`.
    pub fn datum_potential(&self, i: usize, x: &[f64]) -> f64 {
        -log_sigmoid(self.data.label(i) * dot(x, self.data.covariate(i)))
    }

    /// Hessian of the `i`-th term, `f(z)(1 - f(z)) ξ_i ξ_iᵀ` with `z = y_i xᵀ ξ_i`.
    pub fn datum_hessian(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let xi = self.data.covariate(i);
        let s = sigmoid(self.data.label(i) * dot(x, xi));
        let w = s * (1.0 - s);
        DMatrix::from_fn(xi.len(), xi.len(), |a, b| w * xi[a] * xi[b])
    }
}

impl TargetModel for LogisticModel {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn num_data(&self) -> usize {
        self.data.len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        (0..self.data.len()).map(|i| self.datum_potential(i, x)).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.potential_and_gradient(x, out);
    }

    /// `-f(-y_i xᵀ ξ_i) y_i ξ_i`.
    fn datum_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let xi = self.data.covariate(i);
        let y = self.data.label(i);
        let w = -sigmoid(-y * dot(x, xi)) * y;
        for (o, c) in out.iter_mut().zip(xi) {
            *o = w * c;
        }
    }

    fn hessian_bound(&self) -> f64 {
        self.hessian_bound
    }

    fn datum_hessian_bound(&self) -> f64 {
        self.lipschitz
    }

    fn potential_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut u = 0.0;
        for i in 0..self.data.len() {
            let xi = self.data.covariate(i);
            let y = self.data.label(i);
            let z = y * dot(x, xi);
            u -= log_sigmoid(z);
            let w = -sigmoid(-z) * y;
            for (o, c) in out.iter_mut().zip(xi) {
                *o += w * c;
            }
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::finite_difference_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> LogisticModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LogisticModel::new(generate_logistic_data(50, 4, 10.0, &mut rng).unwrap())
    }

    #[test]
    fn gradient_at_origin_is_half_label_times_covariate() {
        let m = small_model(1);
        let mut g = vec![0.0; 4];
        m.datum_gradient(3, &[0.0; 4], &mut g);
        let y = m.data().label(3);
        for (gj, xj) in g.iter().zip(m.data().covariate(3)) {
            assert_eq!(*gj, -y * xj / 2.0);
        }
    }

    #[test]
    fn saturated_gradient_vanishes() {
        let data = LogisticData::new(vec![1.0], vec![1.0, 0.0], 2).unwrap();
        let m = LogisticModel::new(data);
        let mut g = vec![0.0; 2];
        m.datum_gradient(0, &[800.0, 0.0], &mut g);
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(m.potential(&[800.0, 0.0]).abs() < 1e-300);
        assert!(m.potential(&[-800.0, 0.0]).is_finite());
    }

    #[test]
    fn datum_gradient_matches_finite_differences() {
        let m = small_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut g = vec![0.0; 4];
        for _ in 0..20 {
            let i = rng.gen_range(0..m.num_data());
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            m.datum_gradient(i, &x, &mut g);
            let fd = finite_difference_gradient(|y| m.datum_potential(i, y), &x, 1e-5);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / scale <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn full_gradient_is_sum_of_terms() {
        let m = small_model(3);
        let x = [0.4, 1.2, 0.0, 2.0];
        let full = m.gradient_vec(&x);
        let mut sum = vec![0.0; 4];
        let mut g = vec![0.0; 4];
        for i in 0..m.num_data() {
            m.datum_gradient(i, &x, &mut g);
            sum.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
        }
        for (a, b) in full.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sigmoid_derivative_identity() {
        let h = 1e-6;
        let mut z = -30.0;
        while z <= 30.0 {
            let f = sigmoid(z);
            // Analytic derivative via exp, compared to the product form.
            let e = (-z.abs()).exp();
            let analytic = e / ((1.0 + e) * (1.0 + e));
            assert!((analytic - f * (1.0 - f)).abs() <= 1e-12, "z = {z}");
            z += 0.25;
        }
        let fd = (sigmoid(0.3 + h) - sigmoid(0.3 - h)) / (2.0 * h);
        assert!((fd - sigmoid(0.3) * (1.0 - sigmoid(0.3))).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_examples() {
        let single = LogisticData::new(vec![1.0], vec![2.0, 0.0], 2).unwrap();
        assert_eq!(logistic_lipschitz_l(&single), 1.0);
        let zeros = LogisticData::new(vec![1.0, -1.0], vec![0.0; 4], 2).unwrap();
        assert_eq!(logistic_lipschitz_l(&zeros), 0.0);
    }

    #[test]
    fn hessian_quadratic_form_bounded_by_l() {
        let m = small_model(4);
        let l = m.datum_hessian_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..1000 {
            let i = rng.gen_range(0..m.num_data());
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = dot(&w, &w).sqrt();
            let w = nalgebra::DVector::from_iterator(4, w.iter().map(|v| v / len));
            let q = (w.transpose() * m.datum_hessian(i, &x) * &w)[(0, 0)];
            assert!(q.abs() <= l);
        }
    }

    #[test]
    fn generated_truth_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = generate_logistic_data(100, 20, 10.0, &mut rng).unwrap();
        let xs = data.x_star.as_ref().unwrap();
        assert!(xs.iter().all(|v| *v >= 0.0));
        assert!(xs.iter().sum::<f64>() <= 10.0);
    }

    #[test]
    fn label_frequency_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = generate_logistic_data(20_000, 5, 10.0, &mut rng).unwrap();
        let xs = data.x_star.clone().unwrap();
        let probs: Vec<f64> = (0..data.len())
            .map(|i| sigmoid(dot(&xs, data.covariate(i))))
            .collect();
        let expected: f64 = probs.iter().sum::<f64>() / data.len() as f64;
        let var: f64 = probs.iter().map(|p| p * (1.0 - p)).sum::<f64>();
        let positives = (0..data.len()).filter(|&i| data.label(i) > 0.0).count() as f64;
        let sigma = var.sqrt() / data.len() as f64;
        assert!((positives / data.len() as f64 - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = generate_logistic_data(10, 3, 5.0, &mut rng).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = LogisticData::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 10);
        for i in 0..10 {
            assert_eq!(back.label(i), data.label(i));
            assert_eq!(back.covariate(i), data.covariate(i));
        }
        assert!(LogisticData::new(vec![0.5], vec![1.0], 1).is_err());
        assert!(LogisticData::new(vec![], vec![], 1).is_err());
        assert!(generate_logistic_data(0, 3, 1.0, &mut rng).is_err());
    }
}
