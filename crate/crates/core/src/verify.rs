//! Self-checks run by `dagforge verify`: layering minimality, agreement of
//! the three forward schedules, finite-difference gradients, mask
//! preservation under training, reassignment invariance and checkpoint
//! loading.

use std::fmt;

use rand::Rng;

use crate::baselines::{DeepstructNet, SequentialNet};
use crate::graphgen::Dag;
use crate::layering::{longest_path_layering, moved_nodes, push_sources, reassign_nodes, validate_layering};
use crate::network::{
    compile, compile_with_layering, Activation, Checkpoint, CompileOptions, CompiledNet, Matrix, NetError, Sgd,
    Workspace,
};
use crate::rng::{seeded, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative agreement between forward schedules.
    pub forward_rel: f64,
    /// Relative agreement between analytic and finite-difference gradients.
    pub grad_rel: f64,
    /// Central-difference step.
    pub fd_eps: f64,
    /// Denominator floor of the gradient comparison. Central differences
    /// carry an `O(fd_eps²)` absolute error, so gradients much smaller than
    /// this are compared absolutely.
    pub grad_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { forward_rel: 1e-5, grad_rel: 1e-4, fd_eps: 1e-3, grad_floor: 1e-3 }
    }
}

impl Tolerances {
    pub fn with_forward_rel(forward_rel: f64) -> Self {
        Self { forward_rel, ..Self::default() }
    }
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Normwise relative error `max|a − b| / max(max|a|, max|b|)`; infinite on
/// a shape mismatch or a non-finite entry, 0 for two all-zero matrices.
pub fn max_rel_err<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    if a.shape() != b.shape() || !a.is_finite() || !b.is_finite() {
        return f64::INFINITY;
    }
    let abs_max = |m: &Matrix<T>| m.as_slice().iter().map(|x| x.as_f64().abs()).fold(0.0, f64::max);
    let diff =
        a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / abs_max(a).max(abs_max(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn push(&mut self, check: CheckOutcome) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: VerifyReport) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Length in edges of the longest directed path, by dynamic programming
/// over the topological order.
pub fn longest_path_edges(d: &Dag) -> usize {
    let mut depth = vec![0usize; d.node_count()];
    for &v in d.topological_order() {
        depth[v] = d.preds(v).iter().map(|&u| depth[u] + 1).max().unwrap_or(0);
    }
    depth.into_iter().max().unwrap_or(0)
}

pub fn check_layering(d: &Dag) -> CheckOutcome {
    let lp = longest_path_layering(d);
    let pushed = push_sources(d, &lp);
    let expected = longest_path_edges(d) + 1;
    let problems: Vec<String> = [("longest-path", &lp), ("push-sources", &pushed)]
        .into_iter()
        .filter_map(|(name, l)| match validate_layering(d, l) {
            Err(e) => Some(format!("{name} layering invalid: {e}")),
            Ok(()) if l.height() != expected => {
                Some(format!("{name} height {} but longest path gives {expected}", l.height()))
            }
            Ok(()) => None,
        })
        .collect();
    if problems.is_empty() {
        CheckOutcome::new("layering", true, format!("H = {expected}"))
    } else {
        CheckOutcome::new("layering", false, problems.join("; "))
    }
}

fn random_input<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    let mut rng = seeded(seed, Stream::Data);
    Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

/// Run FW4, SQ and DS on the same parameters and report the worst
/// relative disagreement with FW4.
pub fn forward_disagreement<T: Scalar>(net: &CompiledNet<T>, input: &Matrix<T>) -> Result<f64, NetError> {
    let mut ws = Workspace::new();
    let fw4 = net.forward(input, &mut ws)?;
    let sq = SequentialNet::from_compiled(net).forward(input, &mut ws)?;
    let ds = DeepstructNet::from_compiled(net).forward(input, &mut ws)?;
    Ok(max_rel_err(&fw4, &sq).max(max_rel_err(&fw4, &ds)))
}

pub fn check_equivalence(d: &Dag, seed: u64, tol: &Tolerances) -> CheckOutcome {
    let run = || -> Result<(f64, f64), NetError> {
        let net32 = compile::<f32>(d, CompileOptions::default(), seed)?;
        let sources = net32.input_nodes().len();
        let ones = forward_disagreement(&net32, &Matrix::ones(32, sources))?;
        let rand = forward_disagreement(&net32, &random_input(32, sources, seed))?;
        let net64 = compile::<f64>(d, CompileOptions::with_activation(Activation::Tanh), seed)?;
        let wide = forward_disagreement(&net64, &random_input(32, sources, seed))?;
        Ok((ones.max(rand), wide))
    };
    match run() {
        Ok((e32, e64)) => CheckOutcome::new(
            "forward equivalence",
            e32 <= tol.forward_rel && e64 <= tol.forward_rel,
            format!("max rel err f32 {e32:.2e}, f64 {e64:.2e} (tol {:.0e})", tol.forward_rel),
        ),
        Err(e) => CheckOutcome::new("forward equivalence", false, e.to_string()),
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    /// Parameters compared against finite differences.
    pub checked: usize,
    /// Largest relative error among them.
    pub max_rel_err: f64,
    /// Parameters whose step had to shrink so that no ReLU changed state.
    pub shrunk: usize,
    /// Parameters left out because no step kept the ReLU pattern fixed.
    pub unstable: usize,
    /// Masked gradient entries that were not exactly zero.
    pub masked_nonzero: usize,
}

const MAX_HALVINGS: usize = 20;

/// Sum of `weights ⊙ outputs`, the loss whose output gradient is `weights`.
fn weighted_loss(net: &CompiledNet<f64>, input: &Matrix<f64>, weights: &Matrix<f64>, ws: &mut Workspace<f64>) -> f64 {
    let out = net.forward(input, ws).expect("shapes were checked");
    out.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

fn active_pattern(ws: &Workspace<f64>) -> Vec<bool> {
    ws.acts.iter().map(|&a| a > 0.0).collect()
}

/// Check every raw weight on an edge and every bias of `net` against
/// central differences of a random linear loss. For ReLU networks the step
/// is halved until neither perturbation flips the sign of any
/// pre-activation, so the difference never straddles a kink.
pub fn gradient_check(
    net: &CompiledNet<f64>,
    input: &Matrix<f64>,
    seed: u64,
    tol: &Tolerances,
) -> Result<GradCheck, NetError> {
    let mut rng = seeded(seed ^ 0x9e37_79b9, Stream::Data);
    let mut ws = Workspace::new();
    let out = net.forward(input, &mut ws)?;
    let coeffs = Matrix::from_fn(out.rows(), out.cols(), |_, _| rng.random_range(-1.0..1.0));
    let grads = net.backward(&ws, &coeffs)?;
    let base_pattern = active_pattern(&ws);
    let kinked = net.activation() == Activation::Relu;

    let mut result = GradCheck::default();
    let mut probe = net.clone();
    let mut probe_ws = Workspace::new();
    let mut fd = |probe: &mut CompiledNet<f64>,
                  set: &dyn Fn(&mut CompiledNet<f64>, f64),
                  base: f64,
                  analytic: f64,
                  r: &mut GradCheck| {
        let mut eps = tol.fd_eps;
        for halving in 0..=MAX_HALVINGS {
            set(probe, base + eps);
            let plus = weighted_loss(probe, input, &coeffs, &mut probe_ws);
            let plus_ok = !kinked || active_pattern(&probe_ws) == base_pattern;
            set(probe, base - eps);
            let minus = weighted_loss(probe, input, &coeffs, &mut probe_ws);
            let minus_ok = !kinked || active_pattern(&probe_ws) == base_pattern;
            set(probe, base);
            if plus_ok && minus_ok {
                let numeric = (plus - minus) / (2.0 * eps);
                r.checked += 1;
                r.shrunk += usize::from(halving > 0);
                r.max_rel_err = r.max_rel_err.max(rel_err(analytic, numeric, tol.grad_floor));
                return;
            }
            eps *= 0.5;
        }
        r.unstable += 1;
    };

    for li in 0..net.layers().len() {
        let layer = &net.layers()[li];
        let mask = layer.mask();
        let raw = layer.raw_weights();
        let cols = layer.cols();
        for i in 0..mask.as_slice().len() {
            let g = grads.weights[li][i];
            if mask.as_slice()[i] == 0.0 {
                result.masked_nonzero += usize::from(g.to_bits() != 0);
                continue;
            }
            let set = move |p: &mut CompiledNet<f64>, w: f64| p.layers_mut()[li].raw_mut()[i] = w;
            fd(&mut probe, &set, raw.get(i / cols, i % cols), g, &mut result);
        }
        if net.options().use_bias {
            for (r, &b) in layer.bias().iter().enumerate() {
                let set = move |p: &mut CompiledNet<f64>, v: f64| p.layers_mut()[li].bias_mut()[r] = v;
                fd(&mut probe, &set, b, grads.biases[li][r], &mut result);
            }
        }
    }
    Ok(result)
}

pub fn check_gradients(d: &Dag, seed: u64, tol: &Tolerances) -> CheckOutcome {
    let mut details = Vec::new();
    let mut passed = true;
    for act in [Activation::Tanh, Activation::Relu] {
        let run = || -> Result<GradCheck, NetError> {
            let net = compile::<f64>(d, CompileOptions::with_activation(act), seed)?;
            let input = random_input(4, net.input_nodes().len(), seed);
            gradient_check(&net, &input, seed, tol)
        };
        match run() {
            Ok(g) => {
                passed &= g.max_rel_err <= tol.grad_rel && g.masked_nonzero == 0 && g.checked > 0;
                details.push(format!(
                    "{}: {} params, max rel err {:.2e}, {} shrunk, {} skipped",
                    act.name(),
                    g.checked,
                    g.max_rel_err,
                    g.shrunk,
                    g.unstable
                ));
            }
            Err(e) => {
                passed = false;
                details.push(format!("{}: {e}", act.name()));
            }
        }
    }
    CheckOutcome::new("gradients", passed, details.join("; "))
}

/// Train on a random regression for `steps` SGD steps and count effective
/// weights and gradients at masked positions that are not exactly zero.
pub fn mask_violations(net: &mut CompiledNet<f64>, steps: usize, seed: u64) -> Result<usize, NetError> {
    let batch = 8;
    let input = random_input::<f64>(batch, net.input_nodes().len(), seed);
    let target = random_input::<f64>(batch, net.output_nodes().len(), seed.wrapping_add(1));
    let mut sgd = Sgd::new(0.05, 0.9);
    let mut ws = Workspace::new();
    let mut violations = 0;
    for _ in 0..steps {
        let out = net.forward(&input, &mut ws)?;
        let grad_out = Matrix::from_fn(batch, out.cols(), |b, k| (out.get(b, k) - target.get(b, k)) / batch as f64);
        let grads = net.backward(&ws, &grad_out)?;
        for (layer, g) in net.layers().iter().zip(&grads.weights) {
            let mask = layer.mask();
            violations += mask.as_slice().iter().zip(g).filter(|(&m, &g)| m == 0.0 && g != 0.0).count();
        }
        sgd.step(net, &grads)?;
    }
    for layer in net.layers() {
        let mask = layer.mask();
        let eff = layer.effective_weights();
        violations += mask.as_slice().iter().zip(eff.as_slice()).filter(|(&m, &w)| m == 0.0 && w != 0.0).count();
    }
    Ok(violations)
}

pub fn check_mask(d: &Dag, seed: u64) -> CheckOutcome {
    let run = || -> Result<usize, NetError> {
        let mut net = compile::<f64>(d, CompileOptions::with_activation(Activation::Tanh), seed)?;
        mask_violations(&mut net, 100, seed)
    };
    match run() {
        Ok(0) => CheckOutcome::new("mask invariance", true, "no masked entry moved in 100 steps"),
        Ok(k) => CheckOutcome::new("mask invariance", false, format!("{k} masked entries became non-zero")),
        Err(e) => CheckOutcome::new("mask invariance", false, e.to_string()),
    }
}

/// Fraction of hidden nodes (neither source nor sink) moved by a
/// reassignment of the pushed longest-path layering.
pub fn moved_hidden_fraction(d: &Dag, seed: u64) -> f64 {
    let base = push_sources(d, &longest_path_layering(d));
    let moved = moved_nodes(&base, &reassign_nodes(d, &base, seed));
    let hidden = (0..d.node_count()).filter(|&v| !d.preds(v).is_empty() && !d.succs(v).is_empty()).count();
    if hidden == 0 {
        0.0
    } else {
        moved.len() as f64 / hidden as f64
    }
}

/// Worst relative output change between the network on its own layering
/// and on each of `seeds` reassigned layerings, with shared weights.
pub fn reassignment_disagreement(d: &Dag, seed: u64, seeds: u64) -> Result<f64, NetError> {
    let net = compile::<f64>(d, CompileOptions::with_activation(Activation::Tanh), seed)?;
    let params = net.params();
    let input = random_input::<f64>(16, net.input_nodes().len(), seed);
    let mut ws = Workspace::new();
    let reference = net.forward(&input, &mut ws)?;
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        let layering = reassign_nodes(d, net.layering(), seed.wrapping_add(s));
        let mut other = compile_with_layering::<f64>(d, layering, *net.options(), seed)?;
        other.load_params(&params)?;
        worst = worst.max(max_rel_err(&reference, &other.forward(&input, &mut ws)?));
    }
    Ok(worst)
}

pub fn check_reassignment(d: &Dag, seed: u64, tol: &Tolerances) -> CheckOutcome {
    match reassignment_disagreement(d, seed, 5) {
        Ok(e) => CheckOutcome::new(
            "reassignment invariance",
            e <= tol.forward_rel,
            format!("max rel err {e:.2e} over 5 reassignments"),
        ),
        Err(e) => CheckOutcome::new("reassignment invariance", false, e.to_string()),
    }
}

/// Every per-DAG suite.
pub fn verify_dag(d: &Dag, seed: u64, tol: &Tolerances) -> VerifyReport {
    VerifyReport {
        checks: vec![
            check_layering(d),
            check_equivalence(d, seed, tol),
            check_gradients(d, seed, tol),
            check_mask(d, seed),
            check_reassignment(d, seed, tol),
        ],
    }
}

/// Load a checkpoint and confirm the restored network reproduces itself
/// through a second save/load cycle.
pub fn verify_checkpoint(text: &str) -> CheckOutcome {
    let run = || -> Result<usize, NetError> {
        let net = Checkpoint::from_json(text)?.into_net::<f64>()?;
        let again = Checkpoint::from_json(&Checkpoint::from_net(&net).to_json())?.into_net::<f64>()?;
        let input = Matrix::ones(4, net.input_nodes().len());
        let mut ws = Workspace::new();
        let a = net.forward(&input, &mut ws)?;
        let b = again.forward(&input, &mut ws)?;
        if a != b {
            return Err(NetError::Checkpoint("reloaded network computes a different function".into()));
        }
        Ok(net.dag().edge_count())
    };
    match run() {
        Ok(edges) => CheckOutcome::new("checkpoint", true, format!("loaded {edges} edge weights")),
        Err(e) => CheckOutcome::new("checkpoint", false, format!("load error: {e}")),
    }
}
