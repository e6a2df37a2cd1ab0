use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::{json, Value};

use super::aat::{self as aat_stage, AatSummary};
use super::cluster::{self as cluster_stage, ClusterSummary};
use super::drift::{self as drift_stage, DriftSummary};
use super::psylex::{self as psylex_stage, PsylexSummary};
use super::survive::{self as survive_stage, SurvivalSummary};
use super::{read_json, Ctx, Stage};

pub const REPORT_FILE: &str = "report.md";
pub const NO_CLAIMS: &str = "no claims passed filters";

pub fn inputs(ctx: &Ctx<'_>) -> (Value, Vec<PathBuf>) {
    (
        json!({}),
        vec![
            ctx.file(Stage::Cluster, cluster_stage::SUMMARY_FILE),
            ctx.file(Stage::Drift, drift_stage::SUMMARY_FILE),
            ctx.file(Stage::Psylex, psylex_stage::SUMMARY_FILE),
            ctx.file(Stage::Aat, aat_stage::SUMMARY_FILE),
            ctx.file(Stage::Survive, survive_stage::SUMMARY_FILE),
            ctx.file(Stage::Survive, survive_stage::MODELS_FILE),
        ],
    )
}

fn num(v: Option<&Value>, digits: usize) -> String {
    match v.and_then(Value::as_f64) {
        Some(x) => format!("{x:.digits$}"),
        None => "NA".into(),
    }
}

fn pval(v: Option<&Value>) -> String {
    match v.and_then(Value::as_f64) {
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{p:.3}"),
        None => "NA".into(),
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("NA".into(), |x| format!("{x:.digits$}"))
}

fn pct(n: usize, total: usize) -> String {
    if total == 0 {
        "NA".into()
    } else {
        format!("{:.1}%", 100.0 * n as f64 / total as f64)
    }
}

fn model_table(out: &mut String, m: &Value) {
    let name = m["name"].as_str().unwrap_or("?");
    let _ = writeln!(out, "### {name}\n");
    if let Some(d) = m["description"].as_str() {
        let _ = writeln!(out, "{d}.\n");
    }
    if let Some(err) = m["error"].as_str() {
        let _ = writeln!(out, "Not fitted: {err}.\n");
        return;
    }
    let fit = &m["fit"];
    let _ = writeln!(
        out,
        "n = {}, events = {}\n",
        fit["n"].as_u64().unwrap_or(0),
        fit["events"].as_u64().unwrap_or(0)
    );
    let _ = writeln!(out, "| Covariate | coef | exp(coef) | 95% CI of exp(coef) | SE | p |");
    let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|");
    for t in fit["lambda_terms"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "| {} | {} | {} | [{}, {}] | {} | {} |",
            t["name"].as_str().unwrap_or("?"),
            num(t.get("coef"), 3),
            num(t.get("exp_coef"), 3),
            num(t.get("exp_ci_low"), 3),
            num(t.get("exp_ci_high"), 3),
            num(t.get("se"), 3),
            pval(t.get("p_value")),
        );
    }
    let rho_ci = fit["rho_ci"].as_array();
    let _ = writeln!(
        out,
        "\nrho = {} [{}, {}]; log-likelihood = {}; LR chi2 = {} (df {}), p = {}; AIC = {}; concordance = {}",
        num(fit.get("rho"), 3),
        num(rho_ci.and_then(|a| a.first()), 3),
        num(rho_ci.and_then(|a| a.get(1)), 3),
        num(fit.get("log_likelihood"), 2),
        num(fit.get("lr_statistic"), 2),
        fit["lr_df"].as_u64().unwrap_or(0),
        pval(fit.get("lr_p_value")),
        num(fit.get("aic"), 2),
        num(fit.get("concordance"), 3),
    );
    let dropped: Vec<&str> = m["dropped"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .collect();
    if !dropped.is_empty() {
        let _ = writeln!(out, "\nDropped as constant or collinear: {}.", dropped.join(", "));
    }
    let vifs: Vec<String> = m["vif"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|v| {
            let value = v["vif"].as_f64().map_or("inf".to_string(), |x| format!("{x:.2}"));
            format!("{} {}", v["name"].as_str().unwrap_or("?"), value)
        })
        .collect();
    if !vifs.is_empty() {
        let _ = writeln!(out, "\nVIF: {}.", vifs.join(", "));
    }
    out.push('\n');
}

pub fn render(
    cluster: &ClusterSummary,
    drift: &DriftSummary,
    psylex: &PsylexSummary,
    aat: &AatSummary,
    survival: &SurvivalSummary,
    models: &Value,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Claim drift and persistence report\n");

    let _ = writeln!(out, "## Claims\n");
    let _ = writeln!(out, "- posts: {}", cluster.posts);
    let _ = writeln!(out, "- similarity threshold: {}", cluster.threshold);
    let _ = writeln!(out, "- edges: {}", cluster.edges);
    let _ = writeln!(
        out,
        "- claims: {} ({} with two or more posts, {} singletons, largest {})",
        cluster.claims, cluster.multi_post_claims, cluster.singleton_claims, cluster.largest_claim
    );
    let _ = writeln!(
        out,
        "- mean intra-claim distance: {}; mean inter-claim distance: {}\n",
        opt(cluster.quality.mean_intra_distance, 4),
        opt(cluster.quality.mean_inter_distance, 4)
    );

    let _ = writeln!(out, "## Early drift\n");
    let _ = writeln!(out, "| Window (h) | Claims | Median drift | none | low | high |");
    let _ = writeln!(out, "|---:|---:|---:|---:|---:|---:|");
    for w in &drift.windows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            w.window_hours,
            w.claims,
            opt(w.median, 4),
            w.none,
            w.low,
            w.high
        );
    }
    out.push('\n');

    let _ = writeln!(out, "## Psycholinguistic mutation\n");
    let _ = write!(out, "| Category |");
    for t in &psylex.thresholds {
        let _ = write!(out, " t = {} |", t.threshold);
    }
    let _ = write!(out, "\n|---|");
    for _ in &psylex.thresholds {
        out.push_str("---:|");
    }
    out.push('\n');
    for (j, cat) in psylex.categories.iter().enumerate() {
        let _ = write!(out, "| {cat} |");
        for t in &psylex.thresholds {
            let _ = write!(out, " {} |", pct(t.mutated[j], psylex.claims));
        }
        out.push('\n');
    }
    let _ = write!(out, "| any |");
    for t in &psylex.thresholds {
        let _ = write!(out, " {} |", pct(t.any_mutated, psylex.claims));
    }
    let _ = writeln!(
        out,
        "\n\nShares of {} claims; the main threshold is {}.\n",
        psylex.claims, psylex.mutation_threshold
    );

    let _ = writeln!(out, "## Actor-action-target mutation\n");
    let _ = writeln!(
        out,
        "{} triplets from {} posts ({:?} extractor).\n",
        aat.triplets, aat.posts, aat.extractor
    );
    let _ = writeln!(out, "| Slot | Phrases | k | Silhouette | Mutated claims |");
    let _ = writeln!(out, "|---|---:|---:|---:|---:|");
    for s in &aat.slots {
        let k = match s.k {
            Some(k) if s.clamped => format!("{k} (clamped)"),
            Some(k) => k.to_string(),
            None => "NA".into(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            s.slot,
            s.unique_phrases,
            k,
            opt(s.silhouette, 3),
            pct(s.mutated_claims, aat.claims)
        );
    }
    let _ = writeln!(out, "| any | | | | {} |\n", pct(aat.any_mutated, aat.claims));

    let _ = writeln!(out, "## Survival\n");
    if survival.records == 0 {
        let _ = writeln!(
            out,
            "Notice: {NO_CLAIMS} (no claim reached a lifespan of {} days).",
            survival.min_lifespan_days
        );
        return out;
    }
    let _ = writeln!(
        out,
        "{} claims, {} ended (no post for {} days before the corpus end), {} censored.\n",
        survival.records,
        survival.events,
        survival.gap_days,
        survival.records - survival.events
    );
    let _ = writeln!(
        out,
        "| Comparison | Group | n | Events | Days to 80% survival | Median days |"
    );
    let _ = writeln!(out, "|---|---|---:|---:|---:|---:|");
    for g in &survival.km {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            g.comparison,
            g.group,
            g.n,
            g.events,
            opt(g.t80, 2),
            opt(g.median, 2)
        );
    }
    let _ = writeln!(out, "\n| Comparison | Groups | Log-rank chi2 | p |");
    let _ = writeln!(out, "|---|---|---:|---:|");
    for l in &survival.log_rank {
        let _ = writeln!(
            out,
            "| {} | {} vs {} | {:.3} | {} |",
            l.comparison,
            l.groups[0],
            l.groups[1],
            l.chi_square,
            pval(Some(&json!(l.p_value)))
        );
    }
    let _ = writeln!(out, "\n## Weibull AFT models\n");
    let _ = writeln!(
        out,
        "exp(coef) is the time ratio: values above 1 mean longer survival.\n"
    );
    for m in models.as_array().into_iter().flatten() {
        model_table(&mut out, m);
    }
    out
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let text = render(
        &read_json(&ctx.file(Stage::Cluster, cluster_stage::SUMMARY_FILE))?,
        &read_json(&ctx.file(Stage::Drift, drift_stage::SUMMARY_FILE))?,
        &read_json(&ctx.file(Stage::Psylex, psylex_stage::SUMMARY_FILE))?,
        &read_json(&ctx.file(Stage::Aat, aat_stage::SUMMARY_FILE))?,
        &read_json(&ctx.file(Stage::Survive, survive_stage::SUMMARY_FILE))?,
        &read_json(&ctx.file(Stage::Survive, survive_stage::MODELS_FILE))?,
    );
    std::fs::write(dir.join(REPORT_FILE), text)?;
    Ok(())
}
