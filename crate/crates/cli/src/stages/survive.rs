use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdrift_core::drift::DriftGroup;
use cdrift_core::nalgebra::DMatrix;
use cdrift_core::plot::km_svg;
use cdrift_core::survival::{
    add_interaction, build_lifespans, fit_weibull_aft, km_estimate, log1p_standardize, log_rank, standardize, vif,
    AftFit, Design, KmCurve, SurvivalRecord, VifValue, SURVIVAL_QUANTILE,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::aat::{self as aat_stage, AatRow};
use super::drift::{self as drift_stage, EarlyRow};
use super::psylex::{self as psylex_stage, MutationRow, PsylexSummary};
use super::{cluster, csv_writer, read_json, write_json, Ctx, Stage};

pub const RECORDS_FILE: &str = "records.csv";
pub const KM_FILE: &str = "km.csv";
pub const MODELS_FILE: &str = "models.json";
pub const SUMMARY_FILE: &str = "summary.json";

const CONTROLS: [&str; 5] = [
    "early_posts",
    "early_likes",
    "early_retweets",
    "early_users",
    "early_followers",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmGroup {
    pub comparison: String,
    pub group: String,
    pub n: usize,
    pub events: usize,
    /// Time at which survival first reaches 0.8.
    pub t80: Option<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankRow {
    pub comparison: String,
    pub groups: [String; 2],
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub records: usize,
    pub events: usize,
    pub corpus_end: i64,
    pub gap_days: u32,
    pub min_lifespan_days: f64,
    pub km: Vec<KmGroup>,
    pub log_rank: Vec<LogRankRow>,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub name: String,
    pub description: String,
    pub covariates: Vec<String>,
    /// Requested covariates left out because they were constant or
    /// collinear with earlier columns.
    pub dropped: Vec<String>,
    pub fit: Option<AftFit>,
    pub vif: Vec<VifValue>,
    pub error: Option<String>,
}

struct ModelSpec {
    name: String,
    description: String,
    covariates: Vec<String>,
}

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    (
        json!({
            "survival": ctx.cfg.survival,
            "mutation_threshold": ctx.cfg.psylex.mutation_threshold,
            "window_hours": ctx.cfg.drift.window_hours,
            "sensitivity_window_hours": ctx.cfg.drift.sensitivity_window_hours,
        }),
        vec![
            ctx.file(Stage::Cluster, cluster::MEMBERS_FILE),
            ctx.file(Stage::Drift, drift_stage::EARLY_FILE),
            ctx.file(Stage::Psylex, psylex_stage::MUTATIONS_FILE),
            ctx.file(Stage::Psylex, psylex_stage::SUMMARY_FILE),
            ctx.file(Stage::Aat, aat_stage::MUTATIONS_FILE),
        ],
    )
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn window_suffix(ctx: &Ctx<'_>, hours: u32) -> String {
    if hours == ctx.cfg.drift.window_hours {
        String::new()
    } else {
        format!("_{hours}h")
    }
}

/// Group label of each record for one comparison.
type Grouping = (String, Vec<Option<String>>);

fn flag_label(v: bool) -> Option<String> {
    Some(if v { "mutated" } else { "stable" }.to_string())
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let s = &ctx.cfg.survival;
    let clusters = ctx.load_clusters(None)?;
    let corpus_end = s
        .corpus_end
        .unwrap_or_else(|| clusters.iter().map(|c| c.last_ts()).max().unwrap_or(0));
    let multi: Vec<_> = clusters.iter().filter(|c| c.len() >= 2).cloned().collect();
    let mut records = build_lifespans(&multi, s.gap_days, s.min_lifespan_days, corpus_end)?;
    let ids: Vec<usize> = records.iter().map(|r| r.claim_id).collect();

    let mut groupings: Vec<Grouping> = Vec::new();

    // drift covariates, both windows
    let early: Vec<EarlyRow> = read_rows(&ctx.file(Stage::Drift, drift_stage::EARLY_FILE))?;
    let mut windows: Vec<u32> = early.iter().map(|r| r.window_hours).collect();
    windows.sort_unstable_by(|a, b| b.cmp(a));
    windows.dedup();
    for &hours in &windows {
        let sfx = window_suffix(ctx, hours);
        let by_claim: HashMap<usize, &EarlyRow> = early
            .iter()
            .filter(|r| r.window_hours == hours)
            .map(|r| (r.claim_id, r))
            .collect();
        let rows: Vec<&EarlyRow> = ids
            .iter()
            .map(|id| {
                by_claim
                    .get(id)
                    .copied()
                    .with_context(|| format!("claim {id} missing from drift output"))
            })
            .collect::<Result<_>>()?;
        let controls: [Vec<f64>; 5] = [
            log1p_standardize(&rows.iter().map(|r| r.early_posts as f64).collect::<Vec<_>>()),
            log1p_standardize(&rows.iter().map(|r| r.early_likes as f64).collect::<Vec<_>>()),
            log1p_standardize(&rows.iter().map(|r| r.early_retweets as f64).collect::<Vec<_>>()),
            log1p_standardize(&rows.iter().map(|r| r.early_users as f64).collect::<Vec<_>>()),
            log1p_standardize(&rows.iter().map(|r| r.early_followers as f64).collect::<Vec<_>>()),
        ];
        for (i, (r, row)) in records.iter_mut().zip(&rows).enumerate() {
            let set = &mut r.covariates;
            set.insert(
                format!("high_drift{sfx}"),
                f64::from(u8::from(row.group == DriftGroup::High)),
            );
            set.insert(
                format!("low_drift{sfx}"),
                f64::from(u8::from(row.group == DriftGroup::Low)),
            );
            for (name, col) in CONTROLS.iter().zip(&controls) {
                set.insert(format!("{name}{sfx}"), col[i]);
            }
        }
        groupings.push((
            format!("drift{sfx}"),
            rows.iter().map(|r| Some(r.group.to_string())).collect(),
        ));
    }

    // psylex flags and fluctuation at the main threshold
    let ps: PsylexSummary = read_json(&ctx.file(Stage::Psylex, psylex_stage::SUMMARY_FILE))?;
    let threshold = ctx.cfg.psylex.mutation_threshold;
    let mut flags: HashMap<(usize, &str), (bool, f64)> = HashMap::new();
    let mrows: Vec<MutationRow> = read_rows(&ctx.file(Stage::Psylex, psylex_stage::MUTATIONS_FILE))?;
    for r in &mrows {
        if r.threshold == threshold {
            flags.insert((r.claim_id, r.category.as_str()), (r.mutated, r.fluctuation));
        }
    }
    let mut any_liwc = vec![false; records.len()];
    for cat in &ps.categories {
        let vals: Vec<(bool, f64)> = ids
            .iter()
            .map(|&id| flags.get(&(id, cat.as_str())).copied().unwrap_or((false, 0.0)))
            .collect();
        let fl = standardize(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        for (i, r) in records.iter_mut().enumerate() {
            r.covariates
                .insert(format!("liwc_{cat}"), f64::from(u8::from(vals[i].0)));
            r.covariates.insert(format!("fluct_{cat}"), fl[i]);
            any_liwc[i] |= vals[i].0;
        }
        groupings.push((format!("liwc_{cat}"), vals.iter().map(|v| flag_label(v.0)).collect()));
    }
    groupings.insert(
        windows.len(),
        (
            "liwc_any".to_string(),
            any_liwc.iter().map(|&v| flag_label(v)).collect(),
        ),
    );

    // AAT flags
    let arows: Vec<AatRow> = read_rows(&ctx.file(Stage::Aat, aat_stage::MUTATIONS_FILE))?;
    let aat: HashMap<usize, AatRow> = arows.into_iter().map(|r| (r.claim_id, r)).collect();
    let default = |id| AatRow {
        claim_id: id,
        actor: false,
        action: false,
        target: false,
        any: false,
    };
    let aat_rows: Vec<AatRow> = ids
        .iter()
        .map(|&id| aat.get(&id).copied().unwrap_or(default(id)))
        .collect();
    for (r, a) in records.iter_mut().zip(&aat_rows) {
        r.covariates.insert("actor".into(), f64::from(u8::from(a.actor)));
        r.covariates.insert("action".into(), f64::from(u8::from(a.action)));
        r.covariates.insert("target".into(), f64::from(u8::from(a.target)));
    }
    groupings.push(("aat_any".into(), aat_rows.iter().map(|a| flag_label(a.any)).collect()));
    for (name, get) in [
        ("aat_actor", (|a: &AatRow| a.actor) as fn(&AatRow) -> bool),
        ("aat_action", |a| a.action),
        ("aat_target", |a| a.target),
    ] {
        groupings.push((name.into(), aat_rows.iter().map(|a| flag_label(get(a))).collect()));
    }
    let interactions = [
        vec!["actor", "action"],
        vec!["actor", "target"],
        vec!["action", "target"],
        vec!["actor", "action", "target"],
    ];
    let mut inter_names = Vec::new();
    if !records.is_empty() {
        for names in &interactions {
            inter_names.push(add_interaction(&mut records, names)?);
        }
    }

    write_records(&dir.join(RECORDS_FILE), &records)?;
    let (km, log_rank_rows) = km_outputs(dir, &records, &groupings)?;

    let specs = model_specs(ctx, &windows, &ps.categories, &inter_names);
    let models: Vec<ModelResult> = if records.is_empty() {
        log::warn!("survive: no claims passed the lifespan filter");
        Vec::new()
    } else {
        specs.into_iter().map(|spec| fit_model(spec, &records)).collect()
    };
    write_json(&dir.join(MODELS_FILE), &models)?;

    let events = records.iter().filter(|r| r.event).count();
    log::info!(
        "survive: {} claims, {} events, {} models",
        records.len(),
        events,
        models.len()
    );
    write_json(
        &dir.join(SUMMARY_FILE),
        &SurvivalSummary {
            records: records.len(),
            events,
            corpus_end,
            gap_days: s.gap_days,
            min_lifespan_days: s.min_lifespan_days,
            km,
            log_rank: log_rank_rows,
            models: models.iter().map(|m| m.name.clone()).collect(),
        },
    )
}

fn write_records(path: &Path, records: &[SurvivalRecord]) -> Result<()> {
    let names: Vec<String> = records
        .first()
        .map(|r| r.covariates.keys().cloned().collect())
        .unwrap_or_default();
    let mut w = csv_writer(path)?;
    let mut header = vec!["claim_id".to_string(), "duration".into(), "event".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![
            r.claim_id.to_string(),
            r.duration.to_string(),
            u8::from(r.event).to_string(),
        ];
        rec.extend(names.iter().map(|n| r.covariates[n].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const GROUP_ORDER: [&str; 5] = ["high", "low", "none", "mutated", "stable"];

fn km_outputs(
    dir: &Path,
    records: &[SurvivalRecord],
    groupings: &[Grouping],
) -> Result<(Vec<KmGroup>, Vec<LogRankRow>)> {
    let mut w = csv_writer(&dir.join(KM_FILE))?;
    w.write_record([
        "comparison",
        "group",
        "time",
        "n_risk",
        "n_event",
        "n_censored",
        "survival",
        "variance",
        "ci_low",
        "ci_high",
    ])?;
    let mut groups_out = Vec::new();
    let mut lr_out = Vec::new();
    let all = km_estimate(records);
    let mut curves: Vec<(String, Vec<(String, KmCurve)>)> = vec![("all".into(), vec![("all".into(), all)])];
    for (comparison, labels) in groupings {
        let mut split: BTreeMap<usize, (String, Vec<SurvivalRecord>)> = BTreeMap::new();
        for (r, l) in records.iter().zip(labels) {
            if let Some(l) = l {
                let order = GROUP_ORDER.iter().position(|g| g == l).unwrap_or(GROUP_ORDER.len());
                split
                    .entry(order)
                    .or_insert_with(|| (l.clone(), Vec::new()))
                    .1
                    .push(r.clone());
            }
        }
        let parts: Vec<(String, Vec<SurvivalRecord>)> = split.into_values().collect();
        if parts.len() >= 2 {
            let lr = log_rank(&parts[0].1, &parts[1].1)?;
            if lr.p_value.is_finite() {
                lr_out.push(LogRankRow {
                    comparison: comparison.clone(),
                    groups: [parts[0].0.clone(), parts[1].0.clone()],
                    chi_square: lr.chi_square,
                    p_value: lr.p_value,
                });
            }
        }
        curves.push((
            comparison.clone(),
            parts.iter().map(|(l, rs)| (l.clone(), km_estimate(rs))).collect(),
        ));
    }
    for (comparison, cs) in &curves {
        for (label, c) in cs {
            for p in &c.points {
                w.write_record([
                    comparison.clone(),
                    label.clone(),
                    p.time.to_string(),
                    p.n_risk.to_string(),
                    p.n_event.to_string(),
                    p.n_censored.to_string(),
                    p.survival.to_string(),
                    p.variance.to_string(),
                    p.ci_low.to_string(),
                    p.ci_high.to_string(),
                ])?;
            }
            groups_out.push(KmGroup {
                comparison: comparison.clone(),
                group: label.clone(),
                n: c.n,
                events: c.events,
                t80: c.time_to_survival(SURVIVAL_QUANTILE),
                median: c.median(),
            });
        }
        if ["all", "drift", "liwc_any", "aat_any"].contains(&comparison.as_str()) {
            let refs: Vec<(&str, &KmCurve)> = cs.iter().map(|(l, c)| (l.as_str(), c)).collect();
            let title = format!("Claim survival: {comparison}");
            std::fs::write(
                dir.join(format!("km_{comparison}.svg")),
                km_svg(&refs, &title, SURVIVAL_QUANTILE),
            )?;
        }
    }
    w.flush()?;
    Ok((groups_out, lr_out))
}

fn model_specs(ctx: &Ctx<'_>, windows: &[u32], categories: &[String], inter: &[String]) -> Vec<ModelSpec> {
    let mut specs = Vec::new();
    for &hours in windows {
        let sfx = window_suffix(ctx, hours);
        let mut covs = vec![format!("high_drift{sfx}"), format!("low_drift{sfx}")];
        covs.extend(CONTROLS.iter().map(|c| format!("{c}{sfx}")));
        specs.push(ModelSpec {
            name: format!("drift_{hours}h"),
            description: format!("Early drift group ({hours} h window) with early engagement controls"),
            covariates: covs,
        });
    }
    specs.push(ModelSpec {
        name: "liwc_binary".into(),
        description: "Per-category mutation flags".into(),
        covariates: categories.iter().map(|c| format!("liwc_{c}")).collect(),
    });
    specs.push(ModelSpec {
        name: "liwc_fluctuation".into(),
        description: "Per-category fluctuation (standardized)".into(),
        covariates: categories.iter().map(|c| format!("fluct_{c}")).collect(),
    });
    let base = ["actor", "action", "target"];
    for (i, slot) in base.iter().enumerate() {
        specs.push(ModelSpec {
            name: format!("aat_m{}", i + 1),
            description: format!("{slot} mutation"),
            covariates: vec![slot.to_string()],
        });
    }
    specs.push(ModelSpec {
        name: "aat_m4".into(),
        description: "Actor, action and target mutation".into(),
        covariates: base.iter().map(|s| s.to_string()).collect(),
    });
    let mut full: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    full.extend(inter.iter().cloned());
    specs.push(ModelSpec {
        name: "aat_m5".into(),
        description: "Actor, action and target mutation with interactions".into(),
        covariates: full,
    });
    specs
}

fn fit_model(spec: ModelSpec, records: &[SurvivalRecord]) -> ModelResult {
    let mut result = ModelResult {
        name: spec.name,
        description: spec.description,
        covariates: Vec::new(),
        dropped: Vec::new(),
        fit: None,
        vif: Vec::new(),
        error: None,
    };
    let positive: Vec<SurvivalRecord> = records.iter().filter(|r| r.duration > 0.0).cloned().collect();
    let requested: Vec<&str> = spec.covariates.iter().map(String::as_str).collect();
    let outcome = (|| -> Result<()> {
        let design = Design::from_records(&positive, &requested)?;
        result.dropped = design.collinear_columns();
        result.covariates = requested
            .iter()
            .filter(|c| !result.dropped.iter().any(|d| d == *c))
            .map(|c| c.to_string())
            .collect();
        if result.covariates.is_empty() {
            anyhow::bail!("no usable covariates");
        }
        let kept: Vec<&str> = result.covariates.iter().map(String::as_str).collect();
        result.fit = Some(fit_weibull_aft(&positive, &kept, None)?);
        if kept.len() >= 2 {
            let cols = DMatrix::from_fn(positive.len(), kept.len(), |i, j| positive[i].covariates[kept[j]]);
            result.vif = vif(&kept, &cols)?;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("survive: model {} not fitted: {e:#}", result.name);
        result.error = Some(format!("{e:#}"));
    }
    result
}
