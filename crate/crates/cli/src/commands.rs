use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use robust_ope::aux_erm::RewardTables;
use robust_ope::bounds::NIPS_EXACT_GUARD;
use robust_ope::io::{read_logged_csv, read_supervised_csv, write_logged_csv};
use robust_ope::learn::{select_and_learn, LearnResult};
use robust_ope::simulate::split;
use robust_ope::theory::{rademacher_sampled_class, RademacherEstimate, SAMPLED_CLASS_SIZE};
use robust_ope::{
    convert_supervised, dr_bound, dr_value, generalization_slack, ips_bound, ips_value, minorize_maximize,
    nips_bound_exact, nips_bound_greedy, nips_value, oracle_value, policy_probs, rm_bound, rm_value,
    sample_perturbed_policy, tips_bound, tips_value, Budget, BoundsTable, Dataset, Direction, Error, EstimatorKind,
    Policy, PolicyClass, Probs, RewardModels, SlackInputs,
};
use serde::Serialize;

use crate::config::{digest_of, RunConfig};
use crate::{BoundArgs, CliError, ConvertArgs, EvaluateArgs, FitBoundsArgs, LearnArgs, RewardArgs, SlackArgs};

type CliResult<T> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: robust_ope::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => CliError::Core(other),
    })
}

fn read_logged(path: &Path) -> CliResult<Dataset> {
    in_file(path, read_logged_csv(open(path)?))
}

fn pretty<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

/// Prints to stdout and optionally mirrors to a file.
fn emit<S: Serialize>(value: &S, output: Option<&Path>) -> CliResult<()> {
    let text = pretty(value);
    print!("{text}");
    if let Some(p) = output {
        write_text(p, &text)?;
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let cfg = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Policy probabilities on the dataset rows, from a policy JSON or a CSV with
/// columns `pi_0..pi_{k-1}`.
fn load_policy(path: &Path, ds: &Dataset) -> CliResult<Probs> {
    let probs = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut r = csv::Reader::from_reader(open(path)?);
        let headers = r.headers().map_err(robust_ope::Error::from)?.clone();
        let cols: Vec<usize> = (0..ds.k())
            .map(|a| {
                headers
                    .iter()
                    .position(|h| h.trim() == format!("pi_{a}"))
                    .ok_or_else(|| CliError::Usage(format!("{}: missing column pi_{a}", path.display())))
            })
            .collect::<CliResult<_>>()?;
        let mut values = Vec::with_capacity(ds.n() * ds.k());
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(robust_ope::Error::from)?;
            for &c in &cols {
                let raw = rec.get(c).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| {
                    CliError::Usage(format!("{}: row {row}: cannot parse probability `{raw}`", path.display()))
                })?;
                values.push(v);
            }
        }
        let rows = values.len() / ds.k();
        if rows != ds.n() {
            return Err(CliError::Usage(format!("{}: {rows} policy rows for {} data rows", path.display(), ds.n())));
        }
        let m = Array2::from_shape_vec((rows, ds.k()), values).expect("row-major shape");
        in_file(path, Probs::new(m))?
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let model = in_file(path, Policy::from_json(&text))?;
        if model.k() != ds.k() || model.d() != ds.d() {
            return Err(CliError::Usage(format!(
                "policy has d={}, k={} but the data has d={}, k={}",
                model.d(),
                model.k(),
                ds.d(),
                ds.k()
            )));
        }
        policy_probs(&model, ds.contexts.view())?
    };
    Ok(probs)
}

struct Rewards {
    table: BoundsTable,
    point: Option<Array2<f64>>,
}

impl Rewards {
    fn require<'a>(this: &'a Option<Rewards>, what: &str) -> CliResult<(&'a BoundsTable, &'a Array2<f64>)> {
        let r = this
            .as_ref()
            .ok_or_else(|| Error::MissingBounds(format!("{what} needs --bounds or --models")))?;
        let p = r
            .point
            .as_ref()
            .ok_or_else(|| Error::MissingBounds(format!("{what} needs a point column in the bounds CSV")))?;
        Ok((&r.table, p))
    }
}

fn load_rewards(args: &RewardArgs, ds: &Dataset, alpha: f64) -> CliResult<Option<Rewards>> {
    if let Some(p) = &args.bounds {
        let (table, point) = in_file(p, BoundsTable::read_csv(open(p)?))?;
        table.check_shape(ds.n(), ds.k())?;
        return Ok(Some(Rewards { table, point }));
    }
    if let Some(p) = &args.models {
        let text =
            std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
        let models: RewardModels<f64> = in_file(p, RewardModels::from_json(&text))?;
        if models.k() != ds.k() {
            return Err(CliError::Usage(format!("models cover {} actions, data has {}", models.k(), ds.k())));
        }
        if (models.alpha - alpha).abs() > 1e-12 {
            return Err(CliError::Usage(format!("models were fitted at alpha {}, not {alpha}", models.alpha)));
        }
        let RewardTables { bounds, point, .. } = models.tables(ds.contexts.view())?;
        return Ok(Some(Rewards { table: bounds, point: Some(point) }));
    }
    Ok(None)
}

#[derive(Serialize)]
struct ConvertSidecar<'a> {
    command: &'static str,
    config_digest: String,
    logging: &'a robust_ope::LoggingConfig,
    rows: usize,
    d: usize,
    k: usize,
}

pub fn convert(a: &ConvertArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    cfg.validate()?;
    let (x, y) = in_file(&a.input, read_supervised_csv(open(&a.input)?))?;
    let ds = convert_supervised(x.view(), &y, &cfg.logging)?;
    let mut w = create(&a.output)?;
    write_logged_csv(&ds, &mut w)?;
    w.flush().map_err(robust_ope::Error::from)?;
    let side = ConvertSidecar {
        command: "convert",
        config_digest: cfg.digest(),
        logging: &cfg.logging,
        rows: ds.n(),
        d: ds.d(),
        k: ds.k(),
    };
    write_text(&sidecar(&a.output), &pretty(&side))
}

#[derive(Serialize)]
struct FitSidecar {
    command: &'static str,
    config_digest: String,
    alpha: f64,
    fit_rows: usize,
    eval_rows: usize,
    k: usize,
    m_alpha: f64,
    clamped: usize,
}

pub fn fit_bounds(a: &FitBoundsArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    if let Some(alpha) = a.alpha {
        cfg.learn.alpha = alpha;
    }
    cfg.validate()?;
    let ds = read_logged(&a.data)?;
    let budget = Budget::new(cfg.learn.alpha)?;
    let models = RewardModels::fit(&ds, &budget, &cfg.grid, cfg.learn.seed)?;
    let eval = match &a.eval_data {
        Some(p) => read_logged(p)?,
        None => ds.clone(),
    };
    if eval.d() != ds.d() || eval.k() != ds.k() {
        return Err(CliError::Usage("evaluation data must match the fitting data in d and k".into()));
    }
    let tables = models.tables(eval.contexts.view())?;
    let mut w = create(&a.output)?;
    tables.bounds.write_csv(&mut w, Some(&tables.point))?;
    w.flush().map_err(robust_ope::Error::from)?;
    if let Some(p) = &a.models_out {
        write_text(p, &models.to_json()?)?;
    }
    let side = FitSidecar {
        command: "fit-bounds",
        config_digest: cfg.digest(),
        alpha: cfg.learn.alpha,
        fit_rows: ds.n(),
        eval_rows: eval.n(),
        k: ds.k(),
        m_alpha: tables.bounds.m_alpha(),
        clamped: tables.clamped,
    };
    write_text(&sidecar(&a.output), &pretty(&side))
}

#[derive(Serialize)]
struct BoundParams<'a> {
    estimator: &'a str,
    direction: Direction,
    alpha: f64,
    q: f64,
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    estimator: &'a str,
    direction: Direction,
    alpha: f64,
    q: f64,
    value: f64,
    point_estimate: f64,
    /// Distance between the point estimate and the bound.
    fluctuation: f64,
    config_digest: String,
}

pub fn bound(a: &BoundArgs) -> CliResult<()> {
    let kind: EstimatorKind = a.estimator.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let dir: Direction = a.direction.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let budget = Budget::new(a.alpha)?.with_cutoff(a.q)?;
    let ds = read_logged(&a.data)?;
    let probs = load_policy(&a.policy, &ds)?;
    let rewards = load_rewards(&a.reward, &ds, a.alpha)?;
    if matches!(kind, EstimatorKind::NipsGreedy | EstimatorKind::NipsExact) && dir == Direction::Upper {
        return Err(CliError::Usage("normalized IPS bounds are lower bounds only".into()));
    }
    if a.certificate.is_some() && matches!(kind, EstimatorKind::NipsGreedy | EstimatorKind::NipsExact | EstimatorKind::Rm) {
        return Err(CliError::Usage(format!("no certificate is available for {kind}")));
    }
    let (value, point, cert) = match kind {
        EstimatorKind::Ips => {
            let c = ips_bound(&ds, &probs, &budget, dir)?;
            (c.value, ips_value(&ds, &probs)?, Some(c))
        }
        EstimatorKind::Tips => {
            let c = tips_bound(&ds, &probs, &budget, dir)?;
            (c.value, tips_value(&ds, &probs, a.q)?, Some(c))
        }
        EstimatorKind::NipsGreedy => (nips_bound_greedy(&ds, &probs, &budget)?, nips_value(&ds, &probs)?, None),
        EstimatorKind::NipsExact => (nips_bound_exact(&ds, &probs, &budget)?, nips_value(&ds, &probs)?, None),
        EstimatorKind::Rm => {
            let (table, pt) = Rewards::require(&rewards, "rm")?;
            (rm_bound(&ds, &probs, &budget, table, pt, dir)?, rm_value(&ds, &probs, pt)?, None)
        }
        EstimatorKind::Dr => {
            let (table, pt) = Rewards::require(&rewards, "dr")?;
            let c = dr_bound(&ds, &probs, &budget, table, dir)?;
            (c.value, dr_value(&ds, &probs, pt)?, Some(c))
        }
    };
    if let (Some(p), Some(c)) = (&a.certificate, &cert) {
        write_text(p, &(c.to_json()? + "\n"))?;
    }
    let fluctuation = match dir {
        Direction::Lower => point - value,
        Direction::Upper => value - point,
    };
    let params = BoundParams { estimator: kind.name(), direction: dir, alpha: a.alpha, q: a.q };
    let out = BoundOutput {
        estimator: kind.name(),
        direction: dir,
        alpha: a.alpha,
        q: a.q,
        value,
        point_estimate: point,
        fluctuation,
        config_digest: digest_of(&params),
    };
    emit(&out, a.output.as_deref())
}

#[derive(Serialize)]
struct Sizes {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct TestReport {
    dr_point: f64,
    dr_lower: f64,
    fluctuation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logging_oracle: Option<f64>,
}

#[derive(Serialize)]
struct SelectionReport {
    best: usize,
    validation_lower_bounds: Vec<f64>,
}

#[derive(Serialize)]
struct LearnSummary<'a> {
    command: &'static str,
    config_digest: String,
    config: &'a RunConfig,
    sizes: Sizes,
    clamped: usize,
    initial_lower_bound: f64,
    final_lower_bound: f64,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<SelectionReport>,
    test: TestReport,
}

fn logging_oracle(ds: &Dataset) -> CliResult<Option<f64>> {
    match &ds.full_rewards {
        None => Ok(None),
        Some(full) => Ok(Some(oracle_value(&Probs::new(ds.propensities.clone())?, full)?)),
    }
}

pub fn learn(a: &LearnArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    if let Some(alpha) = a.alpha {
        cfg.learn.alpha = alpha;
    }
    cfg.validate()?;
    let ds = read_logged(&a.data)?;
    let (train, val, test) = split(&ds, &cfg.split)?;
    let budget = Budget::new(cfg.learn.alpha)?;
    let models = RewardModels::fit(&train, &budget, &cfg.grid, cfg.learn.seed)?;
    let train_t = models.tables(train.contexts.view())?;
    let monitor = test.full_rewards.is_some().then_some(&test);
    let (result, selection): (LearnResult<f64>, _) = if cfg.candidates.is_empty() {
        (minorize_maximize(&train, &budget, &train_t.bounds, &cfg.learn, monitor)?, None)
    } else {
        let val_t = models.tables(val.contexts.view())?;
        let s = select_and_learn(&train, &val, &budget, &train_t.bounds, &val_t.bounds, &cfg.learn, &cfg.candidates, monitor)?;
        let report = SelectionReport { best: s.best, validation_lower_bounds: s.scores };
        (s.result, Some(report))
    };

    let test_t = models.tables(test.contexts.view())?;
    let probs = policy_probs(&result.policy, test.contexts.view())?;
    let dr_point = dr_value(&test, &probs, &test_t.point)?;
    let dr_lower = dr_bound(&test, &probs, &budget, &test_t.bounds, Direction::Lower)?.value;
    let oracle = match &test.full_rewards {
        Some(full) => Some(oracle_value(&probs, full)?),
        None => None,
    };

    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", a.out_dir.display())))?;
    write_text(&a.out_dir.join("policy.json"), &(result.policy.to_json()? + "\n"))?;
    let mut trace = Vec::new();
    result.trace.write_jsonl(&mut trace)?;
    write_text(&a.out_dir.join("trace.jsonl"), &String::from_utf8(trace).expect("json is utf-8"))?;
    let mut plot = csv::Writer::from_writer(create(&a.out_dir.join("plot.csv"))?);
    plot.write_record(["iteration", "lower_bound", "surrogate", "oracle"]).map_err(Error::from)?;
    for r in &result.trace.records {
        let oracle = r.oracle.map(|v| v.to_string()).unwrap_or_default();
        plot.write_record([r.iteration.to_string(), r.lower_bound.to_string(), r.surrogate.to_string(), oracle])
            .map_err(Error::from)?;
    }
    plot.flush().map_err(Error::from)?;
    write_text(&a.out_dir.join("models.json"), &(models.to_json()? + "\n"))?;

    let summary = LearnSummary {
        command: "learn",
        config_digest: cfg.digest(),
        config: &cfg,
        sizes: Sizes { train: train.n(), val: val.n(), test: test.n() },
        clamped: train_t.clamped,
        initial_lower_bound: result.initial_lower_bound,
        final_lower_bound: result.final_lower_bound,
        iterations: result.trace.records.len(),
        selection,
        test: TestReport {
            dr_point,
            dr_lower,
            fluctuation: dr_point - dr_lower,
            oracle,
            logging_oracle: logging_oracle(&test)?,
        },
    };
    write_text(&a.out_dir.join("summary.json"), &pretty(&summary))
}

#[derive(Serialize)]
struct EstimatorReport {
    point_estimate: f64,
    lower: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
    fluctuation: f64,
}

impl EstimatorReport {
    fn new(point: f64, lower: f64, upper: Option<f64>) -> Self {
        Self { point_estimate: point, lower, upper, fluctuation: point - lower }
    }
}

#[derive(Serialize)]
struct PerturbationReport {
    seeds: u64,
    /// Smallest estimate over the sampled logging policies.
    worst: BTreeMap<&'static str, f64>,
    certified_lower: BTreeMap<&'static str, f64>,
    within_bounds: bool,
}

#[derive(Serialize)]
struct EvaluateParams {
    alpha: f64,
    q: f64,
    perturb_seeds: u64,
    seed: u64,
}

#[derive(Serialize)]
struct EvaluateOutput {
    config_digest: String,
    alpha: f64,
    q: f64,
    n: usize,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logging_oracle: Option<f64>,
    estimators: BTreeMap<&'static str, EstimatorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<PerturbationReport>,
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let budget = Budget::new(a.alpha)?.with_cutoff(a.q)?;
    let ds = read_logged(&a.data)?;
    let probs = load_policy(&a.policy, &ds)?;
    let rewards = load_rewards(&a.reward, &ds, a.alpha)?;
    let point_model = match &rewards {
        Some(r) if r.point.is_some() => Some(Rewards::require(&rewards, "dr")?),
        _ => None,
    };

    let mut est = BTreeMap::new();
    est.insert(
        "ips",
        EstimatorReport::new(
            ips_value(&ds, &probs)?,
            ips_bound(&ds, &probs, &budget, Direction::Lower)?.value,
            Some(ips_bound(&ds, &probs, &budget, Direction::Upper)?.value),
        ),
    );
    if a.q > 0.0 {
        est.insert(
            "tips",
            EstimatorReport::new(
                tips_value(&ds, &probs, a.q)?,
                tips_bound(&ds, &probs, &budget, Direction::Lower)?.value,
                Some(tips_bound(&ds, &probs, &budget, Direction::Upper)?.value),
            ),
        );
    }
    let nips = nips_value(&ds, &probs)?;
    est.insert("nips-greedy", EstimatorReport::new(nips, nips_bound_greedy(&ds, &probs, &budget)?, None));
    if ds.n() * ds.k() <= NIPS_EXACT_GUARD {
        est.insert("nips-exact", EstimatorReport::new(nips, nips_bound_exact(&ds, &probs, &budget)?, None));
    }
    if let Some((table, pt)) = point_model {
        est.insert(
            "rm",
            EstimatorReport::new(
                rm_value(&ds, &probs, pt)?,
                rm_bound(&ds, &probs, &budget, table, pt, Direction::Lower)?,
                Some(rm_bound(&ds, &probs, &budget, table, pt, Direction::Upper)?),
            ),
        );
        est.insert(
            "dr",
            EstimatorReport::new(
                dr_value(&ds, &probs, pt)?,
                dr_bound(&ds, &probs, &budget, table, Direction::Lower)?.value,
                Some(dr_bound(&ds, &probs, &budget, table, Direction::Upper)?.value),
            ),
        );
    }

    let perturbation = if a.perturb_seeds == 0 {
        None
    } else {
        let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
        for s in 0..a.perturb_seeds {
            let pu = sample_perturbed_policy(&ds.propensities, &budget, a.seed.wrapping_add(s));
            let du = ds.with_propensities(pu)?;
            let mut values = vec![("ips", ips_value(&du, &probs)?)];
            if let Some((_, pt)) = point_model {
                values.push(("dr", dr_value(&du, &probs, pt)?));
            }
            for (name, v) in values {
                let w = worst.entry(name).or_insert(f64::INFINITY);
                *w = w.min(v);
            }
        }
        let certified: BTreeMap<&'static str, f64> = worst.keys().map(|&name| (name, est[name].lower)).collect();
        let within_bounds =
            worst.iter().all(|(name, &w)| w >= certified[name] - 1e-9 * certified[name].abs().max(1.0));
        Some(PerturbationReport { seeds: a.perturb_seeds, worst, certified_lower: certified, within_bounds })
    };

    let params = EvaluateParams { alpha: a.alpha, q: a.q, perturb_seeds: a.perturb_seeds, seed: a.seed };
    let out = EvaluateOutput {
        config_digest: digest_of(&params),
        alpha: a.alpha,
        q: a.q,
        n: ds.n(),
        k: ds.k(),
        oracle: match &ds.full_rewards {
            Some(full) => Some(oracle_value(&probs, full)?),
            None => None,
        },
        logging_oracle: logging_oracle(&ds)?,
        estimators: est,
        perturbation,
    };
    emit(&out, a.output.as_deref())
}

#[derive(Serialize)]
struct SlackOutput {
    config_digest: String,
    inputs: SlackInputs<f64>,
    /// Present when the Rademacher term was estimated from sampled policies;
    /// the estimate is a heuristic lower bound on the class complexity.
    #[serde(skip_serializing_if = "Option::is_none")]
    rademacher_estimate: Option<RademacherEstimate>,
    slack: f64,
}

pub fn slack(a: &SlackArgs) -> CliResult<()> {
    let m_alpha = match (a.m_alpha, &a.bounds) {
        (Some(m), _) => m,
        (None, Some(p)) => in_file(p, BoundsTable::read_csv(open(p)?))?.0.m_alpha(),
        (None, None) => return Err(CliError::Usage("slack needs --m-alpha or --bounds".into())),
    };
    let estimate = match &a.rademacher_data {
        None => None,
        Some(p) => {
            let ds = read_logged(p)?;
            let class =
                if a.hidden == 0 { PolicyClass::SoftmaxLinear } else { PolicyClass::TwoLayerMlp { hidden: a.hidden } };
            Some(rademacher_sampled_class(
                class,
                ds.contexts.view(),
                ds.k(),
                SAMPLED_CLASS_SIZE,
                a.scale,
                a.draws,
                a.seed,
            )?)
        }
    };
    let rademacher = estimate.map_or(a.rademacher.unwrap_or(0.0), |e| e.mean);
    let inputs = SlackInputs { q: a.q, m_alpha, r_bar: a.r_bar, n: a.n, delta: a.delta, rademacher };
    let value = generalization_slack(&inputs).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = SlackOutput { config_digest: digest_of(&inputs), inputs, rademacher_estimate: estimate, slack: value };
    emit(&out, a.output.as_deref())
}
