//! One function per subcommand, each turning parsed arguments into a
//! [`Report`].

use std::collections::BTreeMap;
use std::path::Path;

use tailforge::bivariate::{bivariate_pure_premium, pickands_curve, Weighting};
use tailforge::censoring::{
    censored_hill_path, censored_moment_path, censored_pareto_qq, censored_quantile, kaplan_meier, mean_excess_km,
    worms_path,
};
use tailforge::empirics::{hill_path, pareto_qq, relative_excesses, CensoredSample, TailPath};
use tailforge::premiums::{cte, layer_premium, pure_premium, var, LayerSpec};
use tailforge::regression::{local_quantile, local_worms_xi, Kernel, KernelSpec, WeightScheme};
use tailforge::simulate;
use tailforge::splicing::{
    composite_survival, splice_fit, CompositeModel, EmOptions, GeneralizedParetoTail, InformationCriterion,
    MixedErlang, PiRule, SpliceOptions,
};
use tailforge::tempering::{
    tempered_adaptive_k, tempered_mle, tempered_qq, tempered_return_level, AdaptiveOptions, QqScores, TemperedFit,
};
use tailforge::truncation::{
    fit_truncated, truncated_pareto_qq, truncated_quantile, truncated_sweep, truncation_test_path,
};

use crate::ingest::{ingest_bivariate, ingest_censored, ingest_covariate};
use crate::output::{PlotKind, Report};
use crate::{
    resolve_seed, stem_of, BivariateArgs, CliError, Command, Criterion, GlobalArgs, InputArgs, KernelArg, PiRuleArg,
    QqKind, SchemeArg, SimModel, TemperMethod, WeightingArg,
};

/// Report, default output stem, and extra `(suffix, contents)` files.
pub type Outcome = (Report, String, Vec<(String, String)>);

pub fn dispatch(cmd: &Command, global: &GlobalArgs) -> Result<Outcome, CliError> {
    match cmd {
        Command::Hill { input, k } => hill(input, *k),
        Command::Qqplot { input, kind, k } => qqplot(input, *kind, *k),
        Command::Meplot { input } => meplot(input),
        Command::Truncfit { input, k_min, k_max, k, p } => truncfit(input, *k_min, *k_max, *k, p),
        Command::Trunctest { input, k } => trunctest(input, *k),
        Command::Temperfit { input, method, k, k_min, tau_grid, scores, p } => {
            temperfit(input, *method, *k, *k_min, tau_grid.as_deref(), (*scores).into(), p)
        }
        Command::Km { input } => km(input),
        Command::Censfit { input, k, p } => censfit(input, *k, p),
        Command::Splicefit { input, k, init_m, spread, criterion, pi_rule, lower } => {
            splicefit(input, *k, *init_m, *spread, *criterion, *pi_rule, *lower)
        }
        Command::Premium { model, retention, limit, levels } => premium(model, *retention, limit, levels),
        Command::Pickands { input, grid, project } => pickands(input, *grid, *project),
        Command::Bipremium { input, retention, limit, weighting } => bipremium(input, *retention, limit, *weighting),
        Command::Regress { input, covariate_col, x0, bandwidth, k, p, kernel, weights } => {
            regress(input, covariate_col, x0, *bandwidth, *k, *p, *kernel, *weights)
        }
        Command::Simulate { .. } => simulate_cmd(cmd, global),
    }
}

fn load(input: &InputArgs, report: &mut Report) -> Result<CensoredSample, CliError> {
    let (sample, ing) = ingest_censored(&input.input, &input.claims_file()?)?;
    report.ingestion = Some(ing);
    Ok(sample)
}

fn warn_ignored_censoring(report: &mut Report, sample: &CensoredSample, sub: &str) {
    if sample.censored_count() > 0 {
        report.warnings.push(format!(
            "warning: {sub} ignores the {} censoring flags; use censfit or km for censored data",
            sample.censored_count()
        ));
    }
}

fn stem(input: &InputArgs) -> String {
    stem_of(&input.input)
}

fn push_path(report: &mut Report, path: &TailPath) {
    for (k, e) in path.k.iter().zip(&path.estimate) {
        report.push(vec![*k as f64, *e]);
    }
}

fn hill(input: &InputArgs, k: Option<usize>) -> Result<Outcome, CliError> {
    let mut r = Report::new("hill", &["k", "estimate"]).integers(&[0]).plot(PlotKind::Line);
    let s = load(input, &mut r)?;
    warn_ignored_censoring(&mut r, &s, "hill");
    let path = hill_path(&s);
    push_path(&mut r, &path);
    if let Some(k) = k {
        r.param("k", k);
        let est = path.at(k).ok_or_else(|| CliError::data(format!("k = {k} outside 1..{}", s.len() - 1)))?;
        r.summary("hill", est);
    }
    Ok((r, stem(input), vec![]))
}

fn qqplot(input: &InputArgs, kind: QqKind, k: Option<usize>) -> Result<Outcome, CliError> {
    let mut r = Report::new("qqplot", &["x", "y"]).plot(PlotKind::Scatter);
    let s = load(input, &mut r)?;
    let points = match kind {
        QqKind::Pareto => {
            r.param("kind", "pareto");
            if s.censored_count() > 0 {
                censored_pareto_qq(&s)?
            } else {
                pareto_qq(&s)
            }
        }
        QqKind::Truncated => {
            r.param("kind", "truncated");
            warn_ignored_censoring(&mut r, &s, "qqplot");
            let k = k.ok_or_else(|| CliError::data("--k is required for the truncated QQ plot"))?;
            r.param("k", k);
            let fit = fit_truncated(&s, k)?;
            r.summary("odds", fit.odds);
            r.summary("xi", fit.xi);
            truncated_pareto_qq(&s, fit.odds)?
        }
        QqKind::Tempered => {
            r.param("kind", "tempered");
            warn_ignored_censoring(&mut r, &s, "qqplot");
            let fit = tempered_adaptive_k(&s, &AdaptiveOptions::default())?;
            tempered_summary(&mut r, &fit);
            tempered_qq(&s, &fit, QqScores::default())?
        }
    };
    for (x, y) in points {
        r.push(vec![x, y]);
    }
    Ok((r, stem(input), vec![]))
}

fn meplot(input: &InputArgs) -> Result<Outcome, CliError> {
    let mut r = Report::new("meplot", &["threshold", "mean_excess"]).plot(PlotKind::Scatter);
    let s = load(input, &mut r)?;
    let curve = mean_excess_km(&s);
    r.summary("defective", curve.defective);
    for (x, e) in curve.points {
        r.push(vec![x, e]);
    }
    Ok((r, stem(input), vec![]))
}

fn truncfit(
    input: &InputArgs,
    k_min: usize,
    k_max: Option<usize>,
    k: Option<usize>,
    p: &[f64],
) -> Result<Outcome, CliError> {
    let mut r = Report::new("truncfit", &["k", "xi", "odds", "endpoint", "pvalue"]).integers(&[0]).plot(PlotKind::Line);
    let s = load(input, &mut r)?;
    warn_ignored_censoring(&mut r, &s, "truncfit");
    let n = s.len();
    let k_max = k_max.unwrap_or(n - 1);
    r.param("k_min", k_min);
    r.param("k_max", k_max);
    for fit in truncated_sweep(&s, k_min, k_max) {
        r.push(vec![fit.k as f64, fit.xi, fit.odds, fit.endpoint, fit.test_pvalue]);
    }
    if let Some(k) = k {
        r.param("k", k);
        r.param("p", p);
        let fit = fit_truncated(&s, k)?;
        r.summary("xi", fit.xi);
        r.summary("odds", fit.odds);
        r.summary("odds_raw", fit.odds_raw);
        r.summary("threshold", fit.threshold);
        r.summary("endpoint", fit.endpoint);
        r.summary("test_pvalue", fit.test_pvalue);
        let q = p.iter().map(|&pp| truncated_quantile(&fit, n, pp)).collect::<Result<Vec<f64>, _>>()?;
        r.summary("quantiles", q);
    }
    Ok((r, stem(input), vec![]))
}

fn trunctest(input: &InputArgs, k: Option<usize>) -> Result<Outcome, CliError> {
    let mut r = Report::new("trunctest", &["k", "pvalue"]).integers(&[0]).plot(PlotKind::Line);
    let s = load(input, &mut r)?;
    warn_ignored_censoring(&mut r, &s, "trunctest");
    let path = truncation_test_path(&s);
    push_path(&mut r, &path);
    if let Some(k) = k {
        r.param("k", k);
        let pv = path.at(k).ok_or_else(|| CliError::data(format!("no test p-value at k = {k}")))?;
        r.summary("pvalue", pv);
    }
    Ok((r, stem(input), vec![]))
}

fn tempered_summary(r: &mut Report, fit: &TemperedFit) {
    r.summary("k", fit.k);
    r.summary("alpha", fit.alpha);
    r.summary("tau", fit.tau);
    r.summary("lambda", fit.lambda);
    r.summary("beta_inf", fit.beta_inf);
    r.summary("delta", fit.delta);
    r.summary("wls_score", fit.wls_score);
    r.summary("threshold", fit.threshold);
}

fn temperfit(
    input: &InputArgs,
    method: TemperMethod,
    k: Option<usize>,
    k_min: usize,
    tau_grid: Option<&[f64]>,
    scores: QqScores,
    p: &[f64],
) -> Result<Outcome, CliError> {
    let mut r = Report::new("temperfit", &["score", "fitted"]).plot(PlotKind::Scatter);
    let s = load(input, &mut r)?;
    warn_ignored_censoring(&mut r, &s, "temperfit");
    r.param("scores", scores);
    let fit = match method {
        TemperMethod::Adaptive => {
            let mut opts = AdaptiveOptions { k_min, k_max: k, scores, ..AdaptiveOptions::default() };
            if let Some(g) = tau_grid {
                opts.tau_grid = g.to_vec();
            }
            r.param("method", "adaptive");
            r.param("k_min", k_min);
            r.param("k_max", k);
            r.param("tau_grid", &opts.tau_grid);
            tempered_adaptive_k(&s, &opts)?
        }
        TemperMethod::Mle => {
            let k = k.ok_or_else(|| CliError::data("--k is required for the MLE fit"))?;
            r.param("method", "mle");
            r.param("k", k);
            tempered_mle(&relative_excesses(&s, k)?)?
        }
    };
    tempered_summary(&mut r, &fit);
    r.param("p", p);
    let levels = p.iter().map(|&pp| tempered_return_level(&fit, s.len(), pp)).collect::<Result<Vec<f64>, _>>()?;
    r.summary("return_levels", levels);
    for (e, y) in tempered_qq(&s, &fit, scores)? {
        r.push(vec![e, y]);
    }
    Ok((r, stem(input), vec![]))
}

fn km(input: &InputArgs) -> Result<Outcome, CliError> {
    let mut r = Report::new("km", &["x", "survival"]).plot(PlotKind::Step);
    let s = load(input, &mut r)?;
    let curve = kaplan_meier(&s);
    r.summary("defective", curve.defective);
    for (x, sv) in curve.support.iter().zip(&curve.survival) {
        r.push(vec![*x, *sv]);
    }
    Ok((r, stem(input), vec![]))
}

fn censfit(input: &InputArgs, k: Option<usize>, p: &[f64]) -> Result<Outcome, CliError> {
    let mut r =
        Report::new("censfit", &["k", "censored_hill", "worms", "censored_moment"]).integers(&[0]).plot(PlotKind::Line);
    let s = load(input, &mut r)?;
    let mut rows: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    for (col, path) in [censored_hill_path(&s), worms_path(&s), censored_moment_path(&s)].iter().enumerate() {
        for (kk, e) in path.k.iter().zip(&path.estimate) {
            rows.entry(*kk).or_insert([f64::NAN; 3])[col] = *e;
        }
    }
    for (kk, v) in &rows {
        r.push(vec![*kk as f64, v[0], v[1], v[2]]);
    }
    if let Some(k) = k {
        r.param("k", k);
        r.param("p", p);
        let v = rows.get(&k).ok_or_else(|| CliError::data(format!("no estimates at k = {k}")))?;
        r.summary("censored_hill", v[0]);
        r.summary("worms", v[1]);
        r.summary("censored_moment", v[2]);
        let q = p.iter().map(|&pp| censored_quantile(&s, k, v[1], pp)).collect::<Result<Vec<f64>, _>>()?;
        r.summary("quantiles_worms", q);
    }
    Ok((r, stem(input), vec![]))
}

fn splicefit(
    input: &InputArgs,
    k: usize,
    init_m: usize,
    spread: Option<u32>,
    criterion: Criterion,
    pi_rule: PiRuleArg,
    lower: f64,
) -> Result<Outcome, CliError> {
    let mut r = Report::new("splicefit", &["x", "km_survival", "model_survival"]).plot(PlotKind::Step);
    let s = load(input, &mut r)?;
    let options = SpliceOptions {
        em: EmOptions {
            init_m,
            spread,
            criterion: match criterion {
                Criterion::Aic => InformationCriterion::Aic,
                Criterion::Bic => InformationCriterion::Bic,
            },
            lower,
            ..EmOptions::default()
        },
        pi_rule: match pi_rule {
            PiRuleArg::Empirical => PiRule::Empirical,
            PiRuleArg::Plotting => PiRule::Plotting,
        },
    };
    r.param("k", k);
    r.param("init_m", init_m);
    r.param("spread", spread);
    r.param("criterion", format!("{criterion:?}").to_lowercase());
    r.param("pi_rule", format!("{pi_rule:?}").to_lowercase());
    r.param("lower", lower);
    let fit = splice_fit(&s, k, &options)?;
    let m = &fit.model;
    r.summary("threshold", m.threshold());
    r.summary("pi", m.pi);
    r.summary("xi", m.tail.xi);
    r.summary("sigma", m.tail.sigma);
    r.summary("shapes", &m.body.shapes);
    r.summary("weights", &m.body.weights);
    r.summary("rate", m.body.rate);
    r.summary("body_loglik", fit.body_fit.loglik);
    r.summary("body_ic", fit.body_fit.ic);
    r.summary("tail_loglik", fit.tail_loglik);
    r.summary("em_runs", fit.body_fit.runs);
    r.summary("em_worst_ascent", fit.body_fit.worst_ascent);
    let curve = kaplan_meier(&s);
    for (x, sv) in curve.support.iter().zip(&curve.survival) {
        r.push(vec![*x, *sv, composite_survival(m, *x)]);
    }
    let model_json = m.to_json() + "\n";
    Ok((r, stem(input), vec![("splicefit_model.json".into(), model_json)]))
}

fn parse_limit(s: &str) -> Result<f64, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "unlimited" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|_| CliError::data(format!("limit '{s}' is neither a number nor 'inf'"))),
    }
}

fn infinite_mean_as_inf(v: tailforge::Result<f64>) -> Result<f64, CliError> {
    match v {
        Err(tailforge::Error::InfiniteMean { .. }) => Ok(f64::INFINITY),
        other => Ok(other?),
    }
}

fn premium(model: &Path, retention: f64, limit: &str, levels: &[f64]) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(model).map_err(|e| CliError::data(format!("{}: {e}", model.display())))?;
    let m = CompositeModel::from_json(&text)?;
    let layer = LayerSpec::new(retention, parse_limit(limit)?)?;
    let mut r = Report::new("premium", &["level", "var", "cte"]);
    r.param("retention", retention);
    r.param("limit", limit);
    r.param("levels", levels);
    r.summary("premium", layer_premium(&m, &layer)?);
    r.summary("pure_premium_at_retention", infinite_mean_as_inf(pure_premium(&m, retention))?);
    for &level in levels {
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::data(format!("level {level} outside (0, 1)")));
        }
        let p = 1.0 - level;
        r.push(vec![level, var(&m, p)?, infinite_mean_as_inf(cte(&m, p))?]);
    }
    Ok((r, stem_of(model), vec![]))
}

fn load_bivariate(
    input: &BivariateArgs,
    report: &mut Report,
) -> Result<tailforge::bivariate::BivariateSample, CliError> {
    let mut file = input.input.claims_file()?;
    file.second = Some(input.second_col.clone());
    file.second_flag = input.second_flag_col.clone();
    let (sample, ing) = ingest_bivariate(&input.input.input, &file)?;
    report.ingestion = Some(ing);
    Ok(sample)
}

fn pickands(input: &BivariateArgs, grid: usize, project: bool) -> Result<Outcome, CliError> {
    let mut r = Report::new("pickands", &["t", "a_hat", "projected"]).integers(&[2]).plot(PlotKind::Line);
    let s = load_bivariate(input, &mut r)?;
    r.param("grid", grid);
    r.param("project", project);
    let curve = pickands_curve(&s, grid, project)?;
    for ((t, a), p) in curve.grid.iter().zip(&curve.a_hat).zip(&curve.projected) {
        r.push(vec![*t, *a, if *p { 1.0 } else { 0.0 }]);
    }
    Ok((r, stem(&input.input), vec![]))
}

fn bipremium(input: &BivariateArgs, retention: f64, limit: &str, weighting: WeightingArg) -> Result<Outcome, CliError> {
    let mut r = Report::new("bipremium", &["retention", "limit", "premium"]);
    let s = load_bivariate(input, &mut r)?;
    let layer = LayerSpec::new(retention, parse_limit(limit)?)?;
    let w = match weighting {
        WeightingArg::Empirical => Weighting::Empirical,
        WeightingArg::KaplanMeier => Weighting::KaplanMeier,
    };
    r.param("retention", retention);
    r.param("limit", limit);
    r.param("weighting", w);
    let prem = bivariate_pure_premium(&s, &layer, w)?;
    r.summary("premium", prem);
    r.push(vec![layer.retention, layer.limit, prem]);
    Ok((r, stem(&input.input), vec![]))
}

#[allow(clippy::too_many_arguments)]
fn regress(
    input: &InputArgs,
    covariate: &str,
    x0: &[f64],
    bandwidth: f64,
    k: usize,
    p: f64,
    kernel: KernelArg,
    weights: SchemeArg,
) -> Result<Outcome, CliError> {
    let mut r = Report::new("regress", &["x0", "xi", "quantile"]).plot(PlotKind::Line);
    let mut file = input.claims_file()?;
    file.covariate = Some(covariate.to_string());
    let (s, ing) = ingest_covariate(&input.input, &file)?;
    r.ingestion = Some(ing);
    let kernel = match kernel {
        KernelArg::Biquadratic => Kernel::Biquadratic,
        KernelArg::Epanechnikov => Kernel::Epanechnikov,
        KernelArg::Triangular => Kernel::Triangular,
        KernelArg::Uniform => Kernel::Uniform,
    };
    let scheme = match weights {
        SchemeArg::Beran => WeightScheme::Beran,
        SchemeArg::UncensoredOnly => WeightScheme::UncensoredOnly,
    };
    let ks = KernelSpec::new(kernel, bandwidth)?;
    r.param("bandwidth", bandwidth);
    r.param("k", k);
    r.param("p", p);
    r.param("kernel", kernel);
    r.param("weights", scheme);
    for &x in x0 {
        let xi = local_worms_xi(&s, x, &ks, k, scheme)?;
        let q = local_quantile(&s, x, &ks, k, p, scheme)?;
        r.push(vec![x, xi, q]);
    }
    Ok((r, stem(input), vec![]))
}

fn simulate_cmd(cmd: &Command, global: &GlobalArgs) -> Result<Outcome, CliError> {
    let Command::Simulate {
        model,
        n,
        xi,
        xi2,
        scale,
        upper,
        alpha,
        beta,
        tau,
        threshold,
        sigma,
        shapes,
        weights,
        rate,
        model_file,
    } = cmd
    else {
        unreachable!("simulate_cmd called with another subcommand")
    };
    let (model, n) = (*model, *n);
    if n == 0 {
        return Err(CliError::data("n must be positive"));
    }
    let seed = resolve_seed(global.seed)?;
    let mut rng = simulate::seeded(seed);
    let name = format!("{model:?}").to_lowercase();
    let one = |values: Vec<f64>| -> Report {
        let mut r = Report::new("simulate", &["value"]);
        for v in values {
            r.push(vec![v]);
        }
        r
    };
    let mut r = match model {
        SimModel::Pareto => {
            let mut r = one(simulate::strict_pareto(&mut rng, *xi, *scale, n)?);
            r.param("xi", xi);
            r.param("scale", scale);
            r
        }
        SimModel::Truncated => {
            let upper = upper.ok_or_else(|| CliError::data("--upper is required for the truncated model"))?;
            let mut r = one(simulate::truncated_pareto(&mut rng, *xi, *scale, upper, n)?);
            r.param("xi", xi);
            r.param("scale", scale);
            r.param("upper", upper);
            r
        }
        SimModel::Tempered => {
            let mut r = one(simulate::tempered_pareto(&mut rng, *alpha, *beta, *tau, n)?);
            r.param("alpha", alpha);
            r.param("beta", beta);
            r.param("tau", tau);
            r
        }
        SimModel::Gp => {
            let tail = GeneralizedParetoTail::new(*threshold, *sigma, *xi)?;
            let mut r = one(simulate::generalized_pareto(&mut rng, &tail, n));
            r.param("threshold", threshold);
            r.param("sigma", sigma);
            r.param("xi", xi);
            r
        }
        SimModel::Me => {
            let shapes = shapes.clone().ok_or_else(|| CliError::data("--shapes is required for the me model"))?;
            let weights = weights.clone().ok_or_else(|| CliError::data("--weights is required for the me model"))?;
            let me = MixedErlang::new(shapes, weights, *rate)?;
            let mut r = one(simulate::mixed_erlang(&mut rng, &me, n));
            r.param("shapes", &me.shapes);
            r.param("weights", &me.weights);
            r.param("rate", rate);
            r
        }
        SimModel::Composite => {
            let path = model_file
                .as_ref()
                .ok_or_else(|| CliError::data("--model-file is required for the composite model"))?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let m = CompositeModel::from_json(&text)?;
            let mut r = one(simulate::composite(&mut rng, &m, n)?);
            r.param("composite", serde_json::from_str::<serde_json::Value>(&m.to_json()).expect("model json"));
            r
        }
        SimModel::Censored => {
            let s = simulate::censored_pareto(&mut rng, *xi, *xi2, n)?;
            let mut r = Report::new("simulate", &["value", "censored"]).integers(&[1]);
            for (v, c) in s.values().iter().zip(s.censored()) {
                r.push(vec![*v, if *c { 1.0 } else { 0.0 }]);
            }
            r.param("xi", xi);
            r.param("xi_censoring", xi2);
            r
        }
        SimModel::Covariate => {
            // xi(x) = xi + (xi2 - xi) x: linear between the two indices
            let (a, b) = (*xi, *xi2);
            let s = simulate::covariate_pareto(&mut rng, n, |x| a + (b - a) * x, 1.0)?;
            let mut r = Report::new("simulate", &["value", "censored", "x"]).integers(&[1]);
            for ((v, c), x) in s.z().iter().zip(s.censored()).zip(s.x()) {
                r.push(vec![*v, if *c { 1.0 } else { 0.0 }, *x]);
            }
            r.param("xi_at_0", a);
            r.param("xi_at_1", b);
            r.param("xi_censoring", 1.0);
            r
        }
        SimModel::Independent | SimModel::Comonotone => {
            let s = if model == SimModel::Independent {
                simulate::bivariate_independent(&mut rng, *xi, *xi2, n)?
            } else {
                simulate::bivariate_comonotone(&mut rng, *xi, *xi2, n)?
            };
            let mut r = Report::new("simulate", &["x1", "x2"]);
            for (a, b) in s.x1().iter().zip(s.x2()) {
                r.push(vec![*a, *b]);
            }
            r.param("xi1", xi);
            r.param("xi2", xi2);
            r
        }
    };
    r.param("model", &name);
    r.param("n", n);
    r.param("seed", seed);
    Ok((r, name, vec![]))
}
