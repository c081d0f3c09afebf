//! Oracles and generators shared by the integration suites.
#![allow(dead_code)]

use cepc::losses::{coral_loss, divergence_loss, divergence_psi, medium_loss, Role};
use cepc::nn::{
    grad_check, init_params, softmax_nll, softmax_rows, Activation, GradCheckConfig, Matrix, Mlp,
    MlpGrads, NetSpec, OutputHead, Precision,
};
use cepc::RngStream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    RngStream::new(seed, label).rng()
}

pub fn rand_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| (r.random_range(-1.0..1.0) * scale) as f32).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn rand_probs(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    softmax_rows(&rand_matrix(r, rows, cols, 2.0))
}

fn to_f64(m: &Matrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| f64::from(v)).collect()
}

fn from_f64(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::from_vec(rows, cols, v.iter().map(|&x| x as f32).collect()).unwrap()
}

/// Worst relative error over a suite of random instances.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl SuiteResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst < tol
    }
}

fn f32_check() -> GradCheckConfig {
    GradCheckConfig {
        step: 1e-4,
        precision: Precision::F32,
        ..GradCheckConfig::default()
    }
}

pub fn softmax_nll_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed, "grad/nll");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n, c) = (r.random_range(1..8), r.random_range(2..5));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let logits: Vec<f64> = (0..n * c).map(|_| r.random_range(-3.0..3.0)).collect();
        let report = grad_check(
            |p| {
                let m = Matrix::<f64>::from_vec(n, c, p.to_vec()).unwrap();
                let (v, g) = softmax_nll(&m, &labels).unwrap();
                (v, g.into_vec())
            },
            &logits,
            GradCheckConfig::default(),
        );
        worst = worst.max(report.max_rel_error);
    }
    SuiteResult { name: "softmax_nll", instances, worst }
}

pub fn coral_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed, "grad/coral");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = r.random_range(1..5);
        let (ns, nt) = (r.random_range(2..7), r.random_range(2..7));
        let src = rand_matrix(&mut r, ns, d, 1.0);
        let tgt = rand_matrix(&mut r, nt, d, 1.5);
        let mut params = to_f64(&src);
        params.extend(to_f64(&tgt));
        let split = ns * d;
        let report = grad_check(
            |p| {
                let s = from_f64(ns, d, &p[..split]);
                let t = from_f64(nt, d, &p[split..]);
                let l = coral_loss(&s, &t).unwrap();
                let mut g = to_f64(l.grad(Role::Source).unwrap());
                g.extend(to_f64(l.grad(Role::Target).unwrap()));
                (l.value, g)
            },
            &params,
            f32_check(),
        );
        worst = worst.max(report.max_rel_error);
    }
    SuiteResult { name: "coral_loss", instances, worst }
}

/// Checks the pairing objective with teachers frozen at their base values,
/// which is the function whose gradient the detached implementation returns.
/// Odd instances check a single Ψ, even ones the normalized sum.
pub fn divergence_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed, "grad/divergence");
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let m = r.random_range(2..5);
        let (b, l) = (r.random_range(1..6), r.random_range(2..4));
        let base: Vec<Matrix> = (0..m).map(|_| rand_probs(&mut r, b, l)).collect();
        let mut indicator: Vec<Vec<u8>> = vec![vec![0; b]; m];
        for d in 0..b {
            indicator[r.random_range(0..m)][d] = 1;
        }
        let single = (inst % 2 == 1).then(|| r.random_range(0..m));
        let params: Vec<f64> = base.iter().flat_map(to_f64).collect();
        let sz = b * l;
        let report = grad_check(
            |p| {
                let live: Vec<Matrix> = (0..m).map(|k| from_f64(b, l, &p[k * sz..(k + 1) * sz])).collect();
                let psis: Vec<_> = (0..m)
                    .filter(|&i| single.is_none_or(|s| s == i))
                    .map(|i| {
                        let mut probs = live.clone();
                        probs[i] = base[i].clone();
                        let psi = divergence_psi(i, &probs, &indicator[i]).unwrap();
                        assert!(psi.is_detached(Role::SourceProbs(i)));
                        assert!(psi.grad(Role::SourceProbs(i)).unwrap().as_slice().iter().all(|v| *v == 0.0));
                        psi
                    })
                    .collect();
                let loss = if single.is_some() {
                    psis.into_iter().next().unwrap()
                } else {
                    divergence_loss(&psis).unwrap()
                };
                let g = (0..m).flat_map(|k| to_f64(loss.grad(Role::SourceProbs(k)).unwrap())).collect();
                (loss.value, g)
            },
            &params,
            f32_check(),
        );
        worst = worst.max(report.max_rel_error);
    }
    SuiteResult { name: "divergence_psi/L_div", instances, worst }
}

pub fn medium_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed, "grad/medium");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (g, m) = (r.random_range(1..4), r.random_range(1..4));
        let (b, l) = (r.random_range(1..6), r.random_range(2..4));
        let teachers: Vec<Matrix> = (0..m).map(|_| rand_probs(&mut r, b, l)).collect();
        let students: Vec<Matrix> = (0..g).map(|_| rand_probs(&mut r, b, l)).collect();
        let params: Vec<f64> = students.iter().flat_map(to_f64).collect();
        let sz = b * l;
        let report = grad_check(
            |p| {
                let live: Vec<Matrix> = (0..g).map(|e| from_f64(b, l, &p[e * sz..(e + 1) * sz])).collect();
                let loss = medium_loss(&live, &teachers).unwrap();
                for k in 0..m {
                    assert!(loss.is_detached(Role::SourceProbs(k)));
                }
                let grad = (0..g).flat_map(|e| to_f64(loss.grad(Role::MediumProbs(e)).unwrap())).collect();
                (loss.value, grad)
            },
            &params,
            f32_check(),
        );
        worst = worst.max(report.max_rel_error);
    }
    SuiteResult { name: "medium_loss", instances, worst }
}

/// Backward pass of random f64 networks against `Σ upstream ⊙ outputs`.
pub fn mlp_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed, "grad/mlp");
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let input = r.random_range(1..5);
        let spec = if inst % 2 == 0 {
            NetSpec::classifier(input, r.random_range(1..5), r.random_range(2..4))
        } else {
            NetSpec {
                input,
                layers: vec![(r.random_range(1..5), Activation::Tanh), (2, Activation::Identity)],
                head: OutputHead::None,
            }
        };
        let net: Mlp<f64> = init_params(&spec, &RngStream::new(seed, format!("mlp{inst}"))).unwrap();
        let n = r.random_range(1..5);
        let x = Matrix::<f64>::from_vec(n, input, (0..n * input).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap();
        let out = spec.output();
        let up = Matrix::<f64>::from_vec(n, out, (0..n * out).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let params = net.flat_params();
        let report = grad_check(
            |p| {
                let mut m = net.clone();
                m.set_flat_params(p).unwrap();
                let t = m.forward(&x).unwrap();
                let v = t.outputs.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum();
                let (g, _) = m.backward(&t, &up, false).unwrap();
                (v, g.flatten())
            },
            &params,
            GradCheckConfig::default(),
        );
        worst = worst.max(report.max_rel_error);
        let _ = MlpGrads::zeros_like(&net);
    }
    SuiteResult { name: "mlp backward", instances, worst }
}

/// Two-pass textbook sample covariance.
pub fn brute_covariance(x: &Matrix) -> Vec<Vec<f64>> {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += f64::from(x.get(r, c)) / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for r in 0..n {
                s += (f64::from(x.get(r, a)) - mean[a]) * (f64::from(x.get(r, b)) - mean[b]);
            }
            cov[a][b] = s / (n - 1) as f64;
        }
    }
    cov
}

/// Positive-class F1 from an explicit confusion matrix.
pub fn brute_f1(gold: &[u8], pred: &[u8]) -> (f64, f64, f64) {
    let mut cm = [[0usize; 2]; 2];
    for (&g, &p) in gold.iter().zip(pred) {
        cm[g as usize][p as usize] += 1;
    }
    let (tp, fp, fn_) = (cm[1][1] as f64, cm[0][1] as f64, cm[1][0] as f64);
    if tp + fp + fn_ == 0.0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
    (f, p, rc)
}
