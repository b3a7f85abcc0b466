//! Study drivers behind the command-line tool: each builds its inputs from
//! an [`ExperimentConfig`] and returns a [`Table`] ready for CSV output.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::averaging::{
    average_cost, average_feedback, derivative_decay_study, flatten_law, qmc_rate_study, running_slopes,
    truncation_study, unflatten_law, CubatureRule, Qoi, RateMethod, RateTable,
};
use crate::cache;
use crate::closed_loop::{propagation_study, simulate, Trajectory};
use crate::config::{digest_hex, ExperimentConfig, ModelConfig, PointMethod, QmcConfig, QoiKind, StudyConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{compute_cost, solve_open_loop};
use crate::qmc::lattice::{cbc_lattice_kernel, next_prime, LatticeKernel};
use crate::qmc::points::{centered_lattice, lattice_points, mc_points, random_shift, tent_fold, to_symmetric};
use crate::qmc::polylattice::cbc_interlaced;
use crate::qmc::{QmcPointSet, WeightSpec};
use crate::riccati::{feedback_at, optimal_cost_homogeneous, optimal_cost_nonhomogeneous, solve_offset, FeedbackLaw, TimeGrid};
use crate::spatial::{OperatorFamily, ProblemData, Scenario};

/// Column names, rows of preformatted cells, and extra comment lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub comments: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Numeric view of one column (non-numeric cells become NaN).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx].parse().unwrap_or(f64::NAN)).collect())
    }

    /// Writes `# config-hash=…`, an optional timestamp, the comment lines,
    /// then the header and rows.
    pub fn write_csv(&self, path: &Path, config_hash: &str, deterministic: bool) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "# config-hash={config_hash}")?;
        if !deterministic {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            writeln!(file, "# generated-unix={secs}")?;
        }
        for c in &self.comments {
            writeln!(file, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting, scientific outside `[1e-4, 1e6)`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Everything a study needs for one model configuration.
pub struct Setup {
    pub fam: OperatorFamily<f64>,
    pub data: ProblemData<f64>,
    pub grid: TimeGrid,
}

impl Setup {
    pub fn new(model: &ModelConfig) -> Result<Self> {
        let fam = model.family()?;
        let data = model.data(&fam);
        Ok(Self {
            fam,
            data,
            grid: model.time_grid()?,
        })
    }
}

/// Relative gap between the Riccati value and the all-at-once optimum.
pub fn cost_identity(model: &ModelConfig) -> Result<(f64, f64, f64)> {
    let Setup { fam, data, grid } = Setup::new(model)?;
    let a = fam.a0().clone();
    let (traj, _) = feedback_at(&fam, &data, &[], &grid, false)?;
    let riccati = match data.scenario {
        Scenario::Homogeneous => optimal_cost_homogeneous(&traj, &fam, &data.y0),
        Scenario::Tracking => {
            let offs = solve_offset(&a, &fam, &traj, &data)?;
            optimal_cost_nonhomogeneous(&traj, &offs, &a, &fam, &data, &data.shifted_initial_state())
        }
    };
    let oracle = solve_open_loop(&fam, &data, &a, &grid)?.cost;
    Ok((riccati, oracle, (riccati - oracle).abs() / oracle.abs()))
}

/// `sup_k ‖u_k − K_k(y_k − g_k) − κ_k‖` over `k = 1..nt` on the open-loop
/// optimum, and `max_k ‖u_k‖`.
pub fn feedback_mismatch(model: &ModelConfig) -> Result<(f64, f64)> {
    let Setup { fam, data, grid } = Setup::new(model)?;
    let with_offset = data.scenario != Scenario::Homogeneous;
    let (_, law) = feedback_at(&fam, &data, &[], &grid, with_offset)?;
    let sol = solve_open_loop(&fam, &data, fam.a0(), &grid)?;
    let mut sup = 0.0f64;
    let mut umax = 0.0f64;
    for k in 1..=grid.nt() {
        let g = (data.g)(grid.t(k));
        let u = &law.gains[k] * (&sol.ys[k] - g) + &law.offsets[k];
        sup = sup.max((&sol.us[k] - u).norm());
        umax = umax.max(sol.us[k].norm());
    }
    Ok((sup, umax))
}

fn riccati_check(model: &ModelConfig, levels: usize) -> Result<Table> {
    let mut t = Table::new(&["n", "nt", "riccati_cost", "oracle_cost", "rel_error", "reduction"]);
    let mut prev = f64::NAN;
    for l in 0..levels.max(1) {
        let m = model.refined(1 << l);
        let (r, o, e) = cost_identity(&m)?;
        t.push(vec![m.n.to_string(), m.nt.to_string(), num(r), num(o), num(e), num(prev / e)]);
        prev = e;
    }
    Ok(t)
}

fn oracle_check(model: &ModelConfig, levels: usize) -> Result<Table> {
    let mut t = Table::new(&["n", "nt", "sup_mismatch", "max_control", "rel_mismatch", "order"]);
    let mut prev = f64::NAN;
    for l in 0..levels.max(1) {
        let m = model.refined(1 << l);
        let (sup, umax) = feedback_mismatch(&m)?;
        let rel = sup / umax;
        t.push(vec![m.n.to_string(), m.nt.to_string(), num(sup), num(umax), num(rel), num((prev / rel).log2())]);
        prev = rel;
    }
    Ok(t)
}

/// CBC lattice with POD weights from `bseq`.
fn cbc(n: usize, s: usize, bseq: &[f64], kernel: LatticeKernel) -> Result<crate::qmc::LatticeRule> {
    Ok(cbc_lattice_kernel(n, s, &WeightSpec::pod(bseq[..s].to_vec())?, kernel)?.0)
}

/// Point set of `qmc.method` with `n` points in `[−1/2, 1/2]^s`.
pub fn build_points(qmc: &QmcConfig, n: usize) -> Result<QmcPointSet> {
    let s = qmc.s;
    let b = qmc.bseq(s);
    Ok(match qmc.method {
        PointMethod::Lattice => to_symmetric(&lattice_points(&cbc(n, s, &b, LatticeKernel::ShiftAveraged)?)),
        PointMethod::Shifted => to_symmetric(&random_shift(&cbc(n, s, &b, LatticeKernel::ShiftAveraged)?, qmc.seed)),
        PointMethod::Folded => to_symmetric(&tent_fold(&lattice_points(&cbc(n, s, &b, LatticeKernel::Tent)?))),
        PointMethod::Centered => centered_lattice(&cbc(n, s, &b, LatticeKernel::ShiftAveraged)?),
        PointMethod::Interlaced => {
            if !n.is_power_of_two() {
                return Err(Error::Config(format!("interlaced rules need N = 2^m, got {n}")));
            }
            let w = WeightSpec::spod(b, qmc.alpha)?;
            to_symmetric(&cbc_interlaced(n.trailing_zeros(), s, qmc.alpha, &w)?.points())
        }
        PointMethod::Mc => mc_points(n, s, qmc.seed),
    })
}

/// Points as a table `k,x1..xs` with the metadata line as a comment.
pub fn points_table(points: &QmcPointSet) -> Table {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=points.s()).map(|j| format!("x{j}")));
    let rows = points
        .iter()
        .enumerate()
        .map(|(k, p)| std::iter::once(k.to_string()).chain(p.iter().map(|&x| num(x))).collect())
        .collect();
    Table {
        columns: cols,
        rows,
        comments: vec![points.describe()],
    }
}

/// Largest interlaced rule used as a reference.
const REFERENCE_M: u32 = 14;

/// Description of the reference rule for a rate study: a tent-transformed
/// lattice with at least 16 times the largest study size, or for
/// interlaced studies the order-`min(α+1, 4)` interlaced rule at `2^14`.
pub fn reference_rule(qmc: &QmcConfig, method: RateMethod, max_n: usize) -> Result<QmcPointSet> {
    let s = qmc.s;
    let b = qmc.bseq(s);
    match method {
        RateMethod::Interlaced => {
            let alpha = (qmc.alpha + 1).min(4);
            let w = WeightSpec::spod(b, alpha)?;
            Ok(to_symmetric(&cbc_interlaced(REFERENCE_M, s, alpha, &w)?.points()))
        }
        _ => {
            let n = next_prime(16 * max_n);
            Ok(to_symmetric(&tent_fold(&lattice_points(&cbc(n, s, &b, LatticeKernel::Tent)?))))
        }
    }
}

/// Reference mean for a rate study, cached under `cache_dir` by a digest
/// of the model, the quantity and the reference rule.
pub fn rate_reference(
    model: &ModelConfig,
    setup: &Setup,
    qmc: &QmcConfig,
    method: RateMethod,
    cache_dir: Option<&Path>,
) -> Result<Qoi<f64>> {
    let max_n = *qmc.sizes()?.iter().max().expect("validated nonempty");
    let key_material = json!({
        "version": 1,
        "model": model,
        "qoi": qmc.qoi,
        "s": qmc.s,
        "b_scale": qmc.b_scale,
        "b_decay": qmc.b_decay,
        "alpha": qmc.alpha,
        "interlaced": method == RateMethod::Interlaced,
        "max_n": if method == RateMethod::Interlaced { 0 } else { next_prime(16 * max_n) },
    });
    let key = digest_hex(key_material.to_string().as_bytes());
    let compute = || -> Result<Vec<f64>> {
        log::info!("computing reference mean ({key})");
        let rule = CubatureRule::equal(reference_rule(qmc, method, max_n)?)?;
        Ok(match qmc.qoi {
            QoiKind::Feedback => flatten_law(&average_feedback(&rule, &setup.fam, &setup.data, &setup.grid)?),
            QoiKind::Cost => vec![average_cost(&rule, &setup.fam, &setup.data, &setup.grid)?],
        })
    };
    let values = match cache_dir {
        Some(dir) => cache::load_or_compute(dir, &key, compute)?,
        None => compute()?,
    };
    Ok(match qmc.qoi {
        QoiKind::Feedback => Qoi::Feedback(unflatten_law(&values, setup.fam.m(), setup.fam.n(), setup.grid)?),
        QoiKind::Cost => Qoi::Cost(values[0]),
    })
}

/// Rate study for `method` with the sizes of the qmc block.
pub fn rate_study(
    model: &ModelConfig,
    qmc: &QmcConfig,
    method: RateMethod,
    cache_dir: Option<&Path>,
) -> Result<RateTable> {
    let setup = Setup::new(model)?;
    let reference = rate_reference(model, &setup, qmc, method, cache_dir)?;
    let repeats = match method {
        RateMethod::Shifted | RateMethod::Mc => qmc.repeats,
        RateMethod::Folded | RateMethod::Interlaced => 1,
    };
    qmc_rate_study(
        &setup.fam,
        &setup.data,
        &setup.grid,
        qmc.s,
        &qmc.sizes()?,
        method,
        qmc.alpha,
        &qmc.bseq(qmc.s),
        repeats,
        qmc.seed,
        &reference,
    )
}

fn rate_table(rt: &RateTable, method: RateMethod) -> Table {
    let mut t = Table::new(&["N", "error", "slope_running"]);
    t.comments.push(format!("method={method:?},slope={}", rt.slope).to_lowercase());
    for (row, slope) in rt.rows.iter().zip(rt.running_slopes()) {
        t.push(vec![row.n.to_string(), num(row.rms_error), num(slope)]);
    }
    t
}

/// Centered CBC lattice in dimension `s_ref` used by truncation studies.
pub const TRUNCATION_N: usize = 2039;

fn truncation(model: &ModelConfig, qmc: Option<&QmcConfig>, s_list: &[usize], s_ref: usize) -> Result<Table> {
    let setup = Setup::new(model)?;
    if s_ref > setup.fam.smax() {
        return Err(Error::Config(format!("s_ref = {s_ref} exceeds smax = {}", setup.fam.smax())));
    }
    let n = qmc.and_then(|q| q.n).unwrap_or(TRUNCATION_N);
    let rule = cbc(n, s_ref, setup.fam.bseq(), LatticeKernel::ShiftAveraged)?;
    let table = truncation_study(&setup.fam, &setup.data, &setup.grid, s_list, s_ref, &centered_lattice(&rule))?;
    let xs: Vec<f64> = table.rows.iter().map(|r| r.s as f64).collect();
    let ys: Vec<f64> = table.rows.iter().map(|r| r.error).collect();
    let mut t = Table::new(&["s", "error", "slope_running", "corner_error"]);
    t.comments.push(format!("s_ref={s_ref},N={n},slope={}", table.slope));
    for (r, slope) in table.rows.iter().zip(running_slopes(&xs, &ys)) {
        t.push(vec![r.s.to_string(), num(r.error), num(slope), num(r.corner_error)]);
    }
    Ok(t)
}

/// `c · √hx · u vᵀ / ‖v‖` with unit `u`, so its feedback distance is `c`.
pub fn rank_one_perturbation(law: &FeedbackLaw<f64>, hx: f64, c: f64, v: &DVector<f64>) -> FeedbackLaw<f64> {
    let m = law.m();
    let u = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let delta = &u * v.transpose() * (c * hx.sqrt() / v.norm());
    let mut out = law.clone();
    for g in &mut out.gains {
        *g += &delta;
    }
    out
}

/// Uniform parameter samples in `[−1/2, 1/2]^s`.
pub fn random_sigmas(count: usize, s: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..s).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect()
}

/// Sizes of the small rule used for the averaged law in propagation runs.
const PROPAGATION_MEAN_N: usize = 127;
const PROPAGATION_MEAN_S: usize = 8;

fn propagation(model: &ModelConfig, c_list: &[f64], count: usize, seed: u64) -> Result<Table> {
    let Setup { fam, data, grid } = Setup::new(model)?;
    let with_offset = data.scenario != Scenario::Homogeneous;
    let s = fam.smax();
    let v = fam.grid().sample(|x| (std::f64::consts::PI * x).sin());
    let mut t = Table::new(&["sigma", "variant", "c", "eps_fb", "eps_y", "eps_u", "ratio_y", "ratio_u"]);
    for (i, sigma) in random_sigmas(count, s, seed).into_iter().enumerate() {
        let (_, exact) = feedback_at(&fam, &data, &sigma, &grid, with_offset)?;
        for &c in c_list {
            let hat = rank_one_perturbation(&exact, fam.hx(), c, &v);
            let row = &propagation_study(&fam, &data, &grid, &[sigma.clone()], &exact, &hat)?[0];
            t.push(vec![
                i.to_string(),
                "perturbed".into(),
                num(c),
                num(row.eps_fb),
                num(row.eps_y),
                num(row.eps_u),
                num(row.ratio_y),
                num(row.ratio_u),
            ]);
        }
    }
    // Suboptimality: the averaged law applied at each sample.
    let ms = PROPAGATION_MEAN_S.min(s);
    let weights = WeightSpec::power_decay(model.cbar, model.qdec, ms);
    let rule = centered_lattice(&cbc(PROPAGATION_MEAN_N, ms, &weights, LatticeKernel::ShiftAveraged)?);
    let mean = average_feedback(&CubatureRule::equal(rule)?, &fam, &data, &grid)?;
    for (i, sigma) in random_sigmas(count, s, seed).into_iter().enumerate() {
        let (_, exact) = feedback_at(&fam, &data, &sigma, &grid, with_offset)?;
        let row = &propagation_study(&fam, &data, &grid, &[sigma], &exact, &mean)?[0];
        t.push(vec![
            i.to_string(),
            "averaged".into(),
            String::new(),
            num(row.eps_fb),
            num(row.eps_y),
            num(row.eps_u),
            num(row.ratio_y),
            num(row.ratio_u),
        ]);
    }
    Ok(t)
}

fn derivative_decay(model: &ModelConfig, j_list: &[usize], delta: f64) -> Result<Table> {
    let Setup { fam, data, grid } = Setup::new(model)?;
    let rows = derivative_decay_study(&fam, &data, &grid, j_list, delta)?;
    let mut t = Table::new(&[
        "j",
        "gain_fd",
        "cost_fd",
        "riccati_fd",
        "gain_ratio",
        "cost_ratio",
        "riccati_ratio",
        "b_ratio",
    ]);
    for r in rows {
        t.push(vec![
            r.j.to_string(),
            num(r.gain_fd),
            num(r.cost_fd),
            num(r.riccati_fd),
            num(r.gain_ratio),
            num(r.cost_ratio),
            num(r.riccati_ratio),
            num(r.b_ratio),
        ]);
    }
    Ok(t)
}

/// Runs the configured study and returns its table.
pub fn run_study(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let qmc = cfg.qmc.as_ref();
    let model = &cfg.model;
    match &cfg.study {
        StudyConfig::RiccatiCheck { levels } => riccati_check(model, *levels),
        StudyConfig::OracleCheck { levels } => oracle_check(model, *levels),
        StudyConfig::QmcRate | StudyConfig::McRate => {
            let q = qmc.expect("validated");
            let method = match cfg.study {
                StudyConfig::McRate => RateMethod::Mc,
                _ => q.method.rate_method().expect("validated"),
            };
            let rt = rate_study(model, q, method, Some(&cfg.cache_dir))?;
            Ok(rate_table(&rt, method))
        }
        StudyConfig::Truncation { s_list, s_ref } => truncation(model, qmc, s_list, *s_ref),
        StudyConfig::Propagation { c_list, sigma_count } => propagation(model, c_list, *sigma_count, cfg.seed),
        StudyConfig::DerivativeDecay { j_list, delta } => derivative_decay(model, j_list, *delta),
        StudyConfig::Points => {
            let q = qmc.expect("validated");
            Ok(points_table(&build_points(q, q.sizes()?[0])?))
        }
    }
}

/// Trajectory as `t,y_1..y_n,u_1..u_m`.
pub fn trajectory_table(traj: &Trajectory<f64>) -> Table {
    let n = traj.ys[0].len();
    let m = traj.us[0].len();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("y_{i}")));
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    let rows = (0..traj.ys.len())
        .map(|k| {
            std::iter::once(num(traj.grid.t(k)))
                .chain(traj.ys[k].iter().map(|&v| num(v)))
                .chain(traj.us[k].iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    Table {
        columns: cols,
        rows,
        comments: Vec::new(),
    }
}

/// Per-time summary of the Riccati solution at `sigma`; with `flatten`
/// the entries of `Π(t_k)` follow in column-major order.
pub fn riccati_table(model: &ModelConfig, sigma: &[f64], flatten: bool) -> Result<Table> {
    let Setup { fam, data, grid } = Setup::new(model)?;
    let with_offset = data.scenario != Scenario::Homogeneous;
    let (traj, law) = feedback_at(&fam, &data, sigma, &grid, with_offset)?;
    let n = fam.n();
    let mut cols = vec!["k", "t", "pi_frobenius", "pi_trace", "pi_min_eig", "gain_norm", "offset_norm"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    if flatten {
        for j in 0..n {
            for i in 0..n {
                cols.push(format!("pi_{}_{}", i + 1, j + 1));
            }
        }
    }
    let scale = 1.0 / fam.hx().sqrt();
    let mut rows = Vec::with_capacity(grid.nt() + 1);
    for k in 0..=grid.nt() {
        let pi = &traj.pis[k];
        let mut row = vec![
            k.to_string(),
            num(grid.t(k)),
            num(pi.norm()),
            num(pi.trace()),
            num(linalg::symmetric_eigen_range(pi).0),
            num(linalg::spectral_norm(&law.gains[k]) * scale),
            num(law.offsets[k].norm()),
        ];
        if flatten {
            row.extend(pi.iter().map(|&v| num(v)));
        }
        rows.push(row);
    }
    Ok(Table {
        columns: cols,
        rows,
        comments: vec![format!("gain and offset columns are the feedback at t_k; Pi columns solve the DRE at t_k")],
    })
}

/// Which feedback law drives a closed-loop simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawChoice {
    /// Law computed at the simulated parameter.
    Exact,
    /// Law at `σ = 0`.
    Nominal,
    /// Cubature mean over the qmc block's point set.
    Mean,
}

/// Closed-loop run at `sigma`: the trajectory and its discrete cost.
pub fn simulate_run(
    cfg: &ExperimentConfig,
    sigma: &[f64],
    choice: LawChoice,
) -> Result<(Trajectory<f64>, f64)> {
    let Setup { fam, data, grid } = Setup::new(&cfg.model)?;
    let with_offset = data.scenario != Scenario::Homogeneous;
    let law = match choice {
        LawChoice::Exact => feedback_at(&fam, &data, sigma, &grid, with_offset)?.1,
        LawChoice::Nominal => feedback_at(&fam, &data, &[], &grid, with_offset)?.1,
        LawChoice::Mean => {
            let q = cfg
                .qmc
                .as_ref()
                .ok_or_else(|| Error::Config("the mean law needs a \"qmc\" block".into()))?;
            let rule = CubatureRule::equal(build_points(q, q.sizes()?[0])?)?;
            average_feedback(&rule, &fam, &data, &grid)?
        }
    };
    let traj = simulate(&fam, sigma, &law, &data, &grid)?;
    let cost = compute_cost(&traj.ys, &traj.us, &data, &fam, &grid);
    Ok((traj, cost))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> ModelConfig {
        ModelConfig {
            n: 8,
            nt: 8,
            smax: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "0.5".into()]);
        t.comments.push("note".into());
        let path = dir.path().join("x/t.csv");
        t.write_csv(&path, "abc", true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# config-hash=abc\n# note\na,b\n1,0.5\n");
        t.write_csv(&path, "abc", false).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("# generated-unix="));
        assert_eq!(t.column("b"), Some(vec![0.5]));
        assert_eq!(num(6.9e-15), "6.9e-15");
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn points_of_every_method() {
        for (method, n) in [
            (PointMethod::Lattice, 31),
            (PointMethod::Shifted, 31),
            (PointMethod::Folded, 31),
            (PointMethod::Centered, 31),
            (PointMethod::Interlaced, 32),
            (PointMethod::Mc, 31),
        ] {
            let q = QmcConfig {
                method,
                n: Some(n),
                n_list: None,
                s: 3,
                alpha: 2,
                repeats: 1,
                seed: 5,
                qoi: QoiKind::Feedback,
                b_scale: 0.1,
                b_decay: 2.0,
            };
            let p = build_points(&q, n).unwrap();
            assert_eq!((p.n(), p.s()), (n, 3));
            assert!(p.is_symmetric_box());
            let t = points_table(&p);
            assert_eq!(t.rows.len(), n);
            assert!(t.comments[0].starts_with(&format!("kind={}", p.meta.kind())));
        }
    }

    #[test]
    fn perturbation_has_requested_distance() {
        let setup = Setup::new(&small_model()).unwrap();
        let (_, law) = feedback_at(&setup.fam, &setup.data, &[], &setup.grid, false).unwrap();
        let v = setup.fam.grid().sample(|x| x * (1.0 - x));
        let hat = rank_one_perturbation(&law, setup.fam.hx(), 0.01, &v);
        let d = crate::averaging::feedback_distance(&law, &hat, setup.fam.hx()).unwrap();
        assert!((d - 0.01).abs() < 1e-12);
    }

    #[test]
    fn checks_run_on_a_small_model() {
        let m = small_model();
        let t = riccati_check(&m, 2).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.column("rel_error").unwrap().iter().all(|e| e.is_finite()));
        let t = oracle_check(&m, 1).unwrap();
        assert!(t.column("rel_mismatch").unwrap()[0] < 1.0);
        let rt = riccati_table(&m, &[0.1], true).unwrap();
        assert_eq!(rt.columns.len(), 7 + 64);
        assert_eq!(rt.rows.len(), 9);
    }

    #[test]
    fn reference_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model();
        let q = QmcConfig {
            method: PointMethod::Folded,
            n: None,
            n_list: Some(vec![7, 13]),
            s: 2,
            alpha: 2,
            repeats: 1,
            seed: 0,
            qoi: QoiKind::Cost,
            b_scale: 0.1,
            b_decay: 2.0,
        };
        let a = rate_study(&model, &q, RateMethod::Folded, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = rate_study(&model, &q, RateMethod::Folded, Some(dir.path())).unwrap();
        assert_eq!(a, b);
    }
}
