//! The pipeline stages behind each CLI subcommand.
//!
//! Every command reads its inputs from the config (re-ingesting the corpus in
//! memory when it needs one), writes into its own directory under `out`, and
//! finishes by writing a `manifest.json` that lists every emitted file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::audit::analyses::{run_audit, to_csv, AuditOptions, AuditTables, CityPools};
use crate::config::{city_path, city_slug, RunConfig};
use crate::corpus::{load_catalog, load_reviews, Catalog, CityCorpus, CityStats, Review};
use crate::error::{Error, Result};
use crate::manifest::{sha256_bytes, RunManifest};
use crate::pipeline::{pools_from_lists, recommend_probes};
use crate::probes::{
    default_lexicons, default_templates, generate_probe_set, load_lexicons, load_templates, Lexicons, Probe, Template,
};
use crate::ranking::{evaluate_city, metrics_csv, EvalRow};
use crate::recommender::{checkpoint, hyperparameter_search, train, LmRec, RecommendationList, TrainingData};

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(manifest: &mut RunManifest, dir: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    manifest.add_file(dir, path)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

fn read_catalog(config: &RunConfig, manifest: &mut RunManifest) -> Result<Catalog> {
    let path = require(&config.businesses, "businesses")?;
    let (catalog, errors) = load_catalog(path)?;
    for e in &errors {
        warn!("{}: skipped {e}", path.display());
    }
    manifest.add_input(path)?;
    Ok(catalog)
}

fn read_reviews(config: &RunConfig, manifest: &mut RunManifest) -> Result<Vec<Review>> {
    let path = require(&config.reviews, "reviews")?;
    let (reviews, errors) = load_reviews(path)?;
    for e in &errors {
        warn!("{}: skipped {e}", path.display());
    }
    manifest.add_input(path)?;
    Ok(reviews)
}

/// Cities to process: the configured list, or every catalog city.
fn select_cities(config: &RunConfig, catalog: &Catalog) -> Result<Vec<String>> {
    let known = catalog.cities();
    if config.cities.is_empty() {
        return Ok(known);
    }
    for c in &config.cities {
        if !known.contains(c) {
            return Err(Error::Data(format!("city {c:?} has no businesses in the catalog")));
        }
    }
    Ok(config.cities.clone())
}

fn non_empty(cities: Vec<String>) -> Result<Vec<String>> {
    if cities.is_empty() {
        Err(Error::Config("no cities to process".into()))
    } else {
        Ok(cities)
    }
}

fn build_corpora(
    config: &RunConfig,
    catalog: &Catalog,
    reviews: &[Review],
    cities: &[String],
) -> Result<Vec<CityCorpus>> {
    cities
        .par_iter()
        .map(|c| {
            CityCorpus::build(
                c,
                catalog,
                reviews,
                config.threshold,
                config.split_ratios(),
                config.seed,
            )
        })
        .collect()
}

fn checkpoint_path(config: &RunConfig, city: &str) -> PathBuf {
    match &config.checkpoint {
        Some(pattern) => city_path(pattern, city),
        None => config.out.join("train").join(city_slug(city)).join("model.ckpt"),
    }
}

fn stats_csv(stats: &[CityStats]) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Row<'a> {
        city: &'a str,
        reviews: usize,
        businesses: usize,
        most_rated: u64,
        categories: usize,
        top_categories: String,
        max_categories: usize,
    }
    let rows: Vec<Row> = stats
        .iter()
        .map(|s| Row {
            city: &s.city,
            reviews: s.reviews,
            businesses: s.businesses,
            most_rated: s.most_rated,
            categories: s.categories,
            top_categories: s.top_categories.join(";"),
            max_categories: s.max_categories,
        })
        .collect();
    to_csv(
        &rows,
        &[
            "city",
            "reviews",
            "businesses",
            "most_rated",
            "categories",
            "top_categories",
            "max_categories",
        ],
    )
}

fn price_csv(stats: &[CityStats]) -> Result<Vec<u8>> {
    let rows: Vec<(String, String, String, String, String)> = stats
        .iter()
        .map(|s| {
            let p = s.price_percentages.map(|v| format!("{v:.2}"));
            (s.city.clone(), p[0].clone(), p[1].clone(), p[2].clone(), p[3].clone())
        })
        .collect();
    to_csv(&rows, &["city", "$", "$$", "$$$", "$$$$"])
}

/// Filters, masks and splits each city; writes `stats.csv`, `price_levels.csv`
/// and one `split.json` per city under `out/ingest`.
pub fn ingest(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("ingest");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("ingest", config.to_toml());
    let catalog = read_catalog(config, &mut manifest)?;
    let reviews = read_reviews(config, &mut manifest)?;
    let cities = select_cities(config, &catalog)?;
    if cities.is_empty() || reviews.is_empty() {
        warn!("input is empty; writing empty statistics");
    }
    let corpora = build_corpora(config, &catalog, &reviews, &cities)?;
    let stats: Vec<CityStats> = corpora.iter().map(CityCorpus::stats).collect();
    write_file(&mut manifest, &dir, &dir.join("stats.csv"), &stats_csv(&stats)?)?;
    write_file(&mut manifest, &dir, &dir.join("price_levels.csv"), &price_csv(&stats)?)?;
    for corpus in &corpora {
        for w in &corpus.warnings {
            warn!("{}: {w}", corpus.city);
        }
        if corpus.dropped_empty > 0 {
            warn!(
                "{}: dropped {} reviews that were empty after masking",
                corpus.city, corpus.dropped_empty
            );
        }
        let path = dir.join(city_slug(&corpus.city)).join("split.json");
        write_file(&mut manifest, &dir, &path, &json_bytes(&corpus.split)?)?;
        info!(
            "{}: {} businesses, {} reviews ({} train / {} validation / {} test)",
            corpus.city,
            corpus.catalog.len(),
            corpus.reviews.len(),
            corpus.split.train.len(),
            corpus.split.validation.len(),
            corpus.split.test.len()
        );
    }
    manifest.write(&dir)
}

fn curve_csv(outcome: &crate::recommender::TrainOutcome) -> Result<Vec<u8>> {
    let rows: Vec<(usize, String, String, String)> = outcome
        .curve
        .iter()
        .map(|r| {
            (
                r.epoch,
                format!("{:.6}", r.train_loss),
                format!("{:.6}", r.validation_accuracy),
                format!("{:.6}", r.validation_loss),
            )
        })
        .collect();
    to_csv(
        &rows,
        &["epoch", "train_loss", "validation_accuracy", "validation_loss"],
    )
}

fn corpora_for_training(config: &RunConfig, manifest: &mut RunManifest) -> Result<Vec<CityCorpus>> {
    let catalog = read_catalog(config, manifest)?;
    let reviews = read_reviews(config, manifest)?;
    let cities = non_empty(select_cities(config, &catalog)?)?;
    build_corpora(config, &catalog, &reviews, &cities)
}

/// Trains one model per city; writes each checkpoint and `validation_curve.csv`.
pub fn train_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("train");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("train", config.to_toml());
    let corpora = corpora_for_training(config, &mut manifest)?;
    let train_config = config.train_config();
    let outcomes: Vec<_> = corpora
        .par_iter()
        .map(|c| {
            let data = TrainingData::from_corpus(c)?;
            train(&data, &train_config)
        })
        .collect::<Result<_>>()?;
    for (corpus, outcome) in corpora.iter().zip(&outcomes) {
        let slug = city_slug(&corpus.city);
        let ckpt = checkpoint_path(config, &corpus.city);
        if let Some(parent) = ckpt.parent() {
            create_dir(parent)?;
        }
        let hash = checkpoint::save(&outcome.model, &ckpt)?;
        manifest.add_file(&dir, &ckpt)?;
        manifest.models.insert(corpus.city.clone(), hash);
        let curve = dir.join(&slug).join("validation_curve.csv");
        write_file(&mut manifest, &dir, &curve, &curve_csv(outcome)?)?;
        info!(
            "{}: best epoch {} with accuracy {:.4}",
            corpus.city, outcome.best_epoch, outcome.best_accuracy
        );
    }
    manifest.write(&dir)
}

/// Grid search per city; writes `search.csv` and the best model.
pub fn search_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("search");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("search", config.to_toml());
    let corpora = corpora_for_training(config, &mut manifest)?;
    let base = config.train_config();
    let grid = config.search_grid();
    let outcomes: Vec<_> = corpora
        .par_iter()
        .map(|c| hyperparameter_search(&TrainingData::from_corpus(c)?, &base, &grid))
        .collect::<Result<_>>()?;
    for (corpus, outcome) in corpora.iter().zip(&outcomes) {
        let city_dir = dir.join(city_slug(&corpus.city));
        create_dir(&city_dir)?;
        let rows: Vec<(String, String, String, usize)> = outcome
            .records
            .iter()
            .map(|r| {
                (
                    format!("{}", r.learning_rate),
                    format!("{}", r.dropout_rate),
                    format!("{:.6}", r.accuracy),
                    r.best_epoch,
                )
            })
            .collect();
        let csv = to_csv(&rows, &["learning_rate", "dropout", "accuracy", "best_epoch"])?;
        write_file(&mut manifest, &dir, &city_dir.join("search.csv"), &csv)?;
        let ckpt = city_dir.join("model.ckpt");
        let hash = checkpoint::save(&outcome.best.model, &ckpt)?;
        manifest.add_file(&dir, &ckpt)?;
        manifest.models.insert(corpus.city.clone(), hash);
        info!(
            "{}: best learning_rate {} dropout {} accuracy {:.4}",
            corpus.city,
            outcome.best_config.learning_rate,
            outcome.best_config.dropout_rate,
            outcome.best.best_accuracy
        );
    }
    manifest.write(&dir)
}

fn load_model(config: &RunConfig, city: &str, manifest: &mut RunManifest) -> Result<LmRec> {
    let path = checkpoint_path(config, city);
    let model = checkpoint::load(&path)?;
    manifest
        .models
        .insert(city.to_owned(), crate::manifest::sha256_file(&path)?);
    Ok(model)
}

/// Scores every city's test split with its checkpoint; writes `ranking_metrics.csv`.
pub fn eval_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("eval");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("eval", config.to_toml());
    let corpora = corpora_for_training(config, &mut manifest)?;
    let mut models = Vec::new();
    for c in &corpora {
        let model = load_model(config, &c.city, &mut manifest)?;
        if model.venue_ids != c.catalog.sorted_ids() {
            return Err(Error::Contract(format!(
                "checkpoint for {} was trained on a different venue set than the current corpus",
                c.city
            )));
        }
        models.push(model);
    }
    let rows: Vec<EvalRow> = corpora
        .par_iter()
        .zip(&models)
        .map(|(c, model)| {
            let index = c.review_index();
            let test: Vec<&Review> = c
                .split
                .test
                .iter()
                .filter_map(|id| index.get(id.as_str()).copied())
                .collect();
            evaluate_city(&c.city, model, &test, &c.catalog, config.averaging)
        })
        .collect::<Result<_>>()?;
    write_file(
        &mut manifest,
        &dir,
        &dir.join("ranking_metrics.csv"),
        &metrics_csv(&rows)?,
    )?;
    manifest.write(&dir)
}

fn load_probe_inputs(config: &RunConfig, manifest: &mut RunManifest) -> Result<(Vec<Template>, Lexicons)> {
    let templates = match &config.templates {
        Some(path) => {
            let (t, errors) = load_templates(path)?;
            for e in &errors {
                warn!("{}: skipped {e}", path.display());
            }
            manifest.add_input(path)?;
            t
        }
        None => default_templates(),
    };
    let lexicons = match &config.lexicons {
        Some(path) => {
            let (l, errors) = load_lexicons(path)?;
            for e in &errors {
                warn!("{}: skipped {e}", path.display());
            }
            manifest.add_input(path)?;
            l
        }
        None => default_lexicons(),
    };
    Ok((templates, lexicons))
}

fn probes_jsonl(probes: &[Probe]) -> Result<Vec<u8>> {
    let mut out = String::new();
    for p in probes {
        out.push_str(&serde_json::to_string(p).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

fn lists_jsonl(lists: &BTreeMap<String, RecommendationList>) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Line<'a> {
        probe_id: &'a str,
        items: &'a [crate::recommender::RankedItem],
    }
    let mut out = String::new();
    for (id, list) in lists {
        let line = Line {
            probe_id: id,
            items: &list.entries,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

#[derive(Serialize)]
struct AuditReport<'a> {
    manifest: &'static str,
    config: &'a RunConfig,
    source: &'static str,
    models: &'a BTreeMap<String, String>,
    probe_sets: BTreeMap<String, ProbeSetInfo>,
    missing_lists: Vec<String>,
    notes: &'a [String],
    tables: &'a AuditTables,
}

#[derive(Serialize)]
struct ProbeSetInfo {
    probes: usize,
    sha256: String,
}

/// Generates probes, gets top-`k` lists per city (from the checkpoint or an
/// external file) and writes every audit table plus `report.json`.
pub fn audit_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("audit");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("audit", config.to_toml());
    let catalog = read_catalog(config, &mut manifest)?;
    let cities = non_empty(select_cities(config, &catalog)?)?;
    let (templates, lexicons) = load_probe_inputs(config, &mut manifest)?;

    let mut probe_sets = Vec::new();
    let mut probe_info = BTreeMap::new();
    for bias in &config.bias_types {
        let probes = generate_probe_set(*bias, &templates, &lexicons)?;
        let bytes = probes_jsonl(&probes)?;
        probe_info.insert(
            bias.as_str().to_owned(),
            ProbeSetInfo {
                probes: probes.len(),
                sha256: sha256_bytes(&bytes),
            },
        );
        write_file(
            &mut manifest,
            &dir,
            &dir.join("probes").join(format!("{}.jsonl", bias.as_str())),
            &bytes,
        )?;
        probe_sets.push((*bias, probes));
    }

    let mut per_city = Vec::new();
    for city in &cities {
        let city_catalog = catalog.for_city(city);
        let lists = match &config.external_recommendations {
            Some(pattern) => {
                let path = city_path(pattern, city);
                let (lists, errors) = crate::recommender::load_external_recommendations(&path, &city_catalog)?;
                for e in &errors {
                    warn!("{}: skipped {e}", path.display());
                }
                manifest.add_input(&path)?;
                lists
            }
            None => {
                let model = load_model(config, city, &mut manifest)?;
                let k = config.k.min(model.num_venues());
                if k < config.k {
                    warn!("{city}: only {} venues, using k = {k}", model.num_venues());
                }
                let mut lists = BTreeMap::new();
                for (_, probes) in &probe_sets {
                    lists.extend(recommend_probes(&model, probes, k)?);
                }
                lists
            }
        };
        per_city.push((city.clone(), city_catalog, lists));
    }

    let mut pools: Vec<CityPools> = Vec::new();
    let mut missing = Vec::new();
    for (city, city_catalog, lists) in &per_city {
        let (p, miss) = pools_from_lists(city, &probe_sets, lists, city_catalog)?;
        if !miss.is_empty() {
            warn!("{city}: {} probes have no recommendation list", miss.len());
        }
        missing.extend(miss.into_iter().map(|(b, id)| format!("{city}\t{b}\t{id}")));
        pools.push(p);
        let path = dir.join(city_slug(city)).join("recommendations.jsonl");
        write_file(&mut manifest, &dir, &path, &lists_jsonl(lists)?)?;
    }

    let nightlife = if config.nightlife.is_empty() {
        lexicons.surfaces("nightlife")
    } else {
        config.nightlife.clone()
    };
    let options = AuditOptions {
        nightlife,
        top_words: config.top_words,
    };
    let tables = run_audit(&pools, &options);
    for note in &tables.notes {
        info!("{note}");
    }
    if !tables.notes.is_empty() {
        warn!("{} analyses skipped; see notes in report.json", tables.notes.len());
    }
    for (name, bytes) in tables.csv_files()? {
        write_file(&mut manifest, &dir, &dir.join(name), &bytes)?;
    }
    let report = AuditReport {
        manifest: crate::manifest::MANIFEST_FILE,
        config,
        source: if config.external_recommendations.is_some() {
            "external"
        } else {
            "checkpoint"
        },
        models: &manifest.models,
        probe_sets: probe_info,
        missing_lists: missing,
        notes: &tables.notes,
        tables: &tables,
    };
    let report_bytes = json_bytes(&report)?;
    write_file(&mut manifest, &dir, &dir.join("report.json"), &report_bytes)?;
    manifest.write(&dir)
}

type CsvTable = (Vec<String>, Vec<Vec<String>>);

fn read_csv_table(path: &Path) -> Result<Option<CsvTable>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(Some((header, rows)))
}

fn markdown_table(out: &mut String, header: &[String], rows: &[Vec<String>], limit: usize) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
    for row in rows.iter().take(limit) {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    if rows.len() > limit {
        let _ = writeln!(out, "\n({} more rows)", rows.len() - limit);
    }
    out.push('\n');
}

/// Markdown summary of whatever stage outputs exist under `out`.
pub fn report_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.join("report");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("report", config.to_toml());
    let sections: [(&str, PathBuf, usize); 7] = [
        ("Dataset", config.out.join("ingest/stats.csv"), usize::MAX),
        (
            "Price levels (%)",
            config.out.join("ingest/price_levels.csv"),
            usize::MAX,
        ),
        (
            "Ranking performance",
            config.out.join("eval/ranking_metrics.csv"),
            usize::MAX,
        ),
        ("Price-level shares", config.out.join("audit/price_scores.csv"), 60),
        (
            "Price-level shares across cities",
            config.out.join("audit/price_aggregate.csv"),
            usize::MAX,
        ),
        ("Category associations", config.out.join("audit/associations.csv"), 40),
        (
            "Locations by mean price",
            config.out.join("audit/location_prices.csv"),
            40,
        ),
    ];
    let mut text = String::from("# Recommendation bias report\n\n");
    let mut found = 0;
    for (title, path, limit) in &sections {
        if let Some((header, rows)) = read_csv_table(path)? {
            found += 1;
            manifest.add_input(path)?;
            let _ = writeln!(text, "## {title}\n");
            markdown_table(&mut text, &header, rows.as_slice(), *limit);
        }
    }
    if found == 0 {
        warn!("no stage outputs found under {}", config.out.display());
        text.push_str("No stage outputs found.\n");
    }
    let audit_report = config.out.join("audit/report.json");
    if audit_report.exists() {
        let raw = std::fs::read_to_string(&audit_report).map_err(|e| Error::io(&audit_report, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| Error::Data(format!("{}: {e}", audit_report.display())))?;
        if let Some(notes) = value.get("notes").and_then(|n| n.as_array()) {
            if !notes.is_empty() {
                text.push_str("## Notes\n\n");
                for n in notes.iter().filter_map(|n| n.as_str()) {
                    let _ = writeln!(text, "- {n}");
                }
                text.push('\n');
            }
        }
    }
    write_file(&mut manifest, &dir, &dir.join("summary.md"), text.as_bytes())?;
    manifest.write(&dir)
}
