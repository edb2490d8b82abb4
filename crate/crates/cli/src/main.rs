use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use keyra_core::attack::build_attack_graph;
use keyra_core::check::{run_check, CheckReport, Checker, GenConfig};
use keyra_core::classify::{classify, fuxman_membership, Status, Verdict};
use keyra_core::oracle::{gen_2dm_instance, gen_maxcut_instance, group_ranges, range_by_enumeration, Gadget, Range, DEFAULT_CAP};
use keyra_core::query::parse_query;
use keyra_core::rewrite::{rewrite, Target};
use keyra_core::schema::{load_instance, load_schema, write_instance, write_schema};
use keyra_core::sql::{emit_sql, execute};
use keyra_core::value::{format_rational, parse_rational, Rational};
use keyra_core::{AggOp, AggQuery, DatabaseInstance, NumericDomain, RangeAnswer, Schema, Value};

/// Range consistent answers for aggregation queries over inconsistent
/// databases with primary keys.
#[derive(Parser)]
#[command(name = "keyra", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Schema file (JSON).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,

    /// Instance directory with one CSV per relation.
    #[arg(long, global = true)]
    instance: Option<PathBuf>,

    /// Allow negative numbers in numeric columns.
    #[arg(long, global = true)]
    allow_negative: bool,

    /// Maximum number of repairs the oracle enumerates.
    #[arg(long, global = true, default_value_t = DEFAULT_CAP)]
    cap: u64,

    /// Seed for random instance generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
}

impl Global {
    fn domain(&self) -> NumericDomain {
        if self.allow_negative {
            NumericDomain::Unconstrained
        } else {
            NumericDomain::NonNegative
        }
    }

    fn schema(&self) -> Result<Arc<Schema>> {
        let path = self.schema.as_ref().ok_or_else(|| anyhow!("--schema is required"))?;
        Ok(Arc::new(load_schema(path)?))
    }

    fn query(&self, text: &str) -> Result<(Arc<Schema>, AggQuery)> {
        let schema = self.schema()?;
        let q = parse_query(text, &schema)?;
        Ok((schema, q))
    }

    fn instance(&self, schema: &Arc<Schema>) -> Result<DatabaseInstance> {
        let dir = self.instance.as_ref().ok_or_else(|| anyhow!("--instance is required"))?;
        Ok(load_instance(schema.clone(), dir, self.domain())?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Whether the glb/lub of a query has a first-order rewriting.
    Classify {
        query: String,
        #[arg(long, value_enum, default_value_t = Targets::Both)]
        target: Targets,
        /// Print the attack graph in DOT format instead.
        #[arg(long)]
        dot: bool,
    },
    /// Build the rewriting and print it as logic or SQL.
    Rewrite {
        query: String,
        #[arg(long, default_value = "glb")]
        target: Target,
        #[arg(long, conflicts_with = "sql")]
        show_logic: bool,
        #[arg(long)]
        sql: bool,
    },
    /// Range answer on an instance by repair enumeration, next to the rewriting.
    Eval {
        query: String,
        #[arg(long, value_enum, default_value_t = Targets::Both)]
        target: Targets,
    },
    /// Compare the rewriting to the oracle on random (or given) instances.
    Check {
        query: String,
        #[arg(long, default_value = "glb")]
        target: Target,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 12)]
        max_facts: usize,
        #[arg(long, default_value_t = 3)]
        max_blocks: usize,
        #[arg(long, default_value_t = 3)]
        max_block_size: usize,
        /// Also run the emitted SQL on SQLite.
        #[arg(long)]
        sql: bool,
        /// Where failing instances are written.
        #[arg(long, default_value = "keyra-failures")]
        failures: PathBuf,
    },
    /// Write a hardness gadget instance.
    Gen {
        #[command(subcommand)]
        gadget: GadgetCommand,
    },
    /// Load the instance into a database and run the emitted SQL there.
    Run {
        query: String,
        #[arg(long, default_value = "glb")]
        target: Target,
        /// `sqlite::memory:` or `sqlite://<path>`.
        #[arg(long, default_value = "sqlite::memory:")]
        dsn: String,
    },
}

#[derive(Args)]
struct GadgetArgs {
    /// Output directory for schema.json, the CSV files and query.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "AVG")]
    agg: AggOp,
    #[arg(long, default_value = "1", value_parser = rational)]
    s: Rational,
    #[arg(long, default_value = "0", value_parser = rational)]
    t: Rational,
}

#[derive(Subcommand)]
enum GadgetCommand {
    /// Matching gadget from bipartite pairs.
    #[command(name = "2dm")]
    TwoDm {
        /// Comma-separated `a:b` pairs.
        #[arg(long, value_delimiter = ',', value_parser = pair)]
        pairs: Vec<(String, String)>,
        #[command(flatten)]
        common: GadgetArgs,
    },
    /// Cut gadget from an undirected graph.
    Maxcut {
        /// Comma-separated vertex names.
        #[arg(long, value_delimiter = ',')]
        vertices: Vec<String>,
        /// Comma-separated `u-v` edges.
        #[arg(long, value_delimiter = ',', value_parser = edge)]
        edges: Vec<(String, String)>,
        /// Penalty for a vertex on both sides; defaults to 2|E|+2.
        #[arg(long, value_parser = rational)]
        m: Option<Rational>,
        #[command(flatten)]
        common: GadgetArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Targets {
    Glb,
    Lub,
    Both,
}

impl Targets {
    fn list(self) -> Vec<Target> {
        match self {
            Targets::Glb => vec![Target::Glb],
            Targets::Lub => vec![Target::Lub],
            Targets::Both => vec![Target::Glb, Target::Lub],
        }
    }
}

fn rational(s: &str) -> Result<Rational, String> {
    parse_rational(s).ok_or_else(|| format!("`{s}` is not a rational number"))
}

fn split(s: &str, sep: char) -> Result<(String, String), String> {
    match s.split_once(sep) {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(format!("expected `left{sep}right`, got `{s}`")),
    }
}

fn pair(s: &str) -> Result<(String, String), String> {
    split(s, ':')
}

fn edge(s: &str) -> Result<(String, String), String> {
    split(s, '-')
}

fn print_json(v: &Json) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

fn group_json(g: &[Value]) -> Json {
    Json::Array(g.iter().map(|v| Json::String(v.to_string())).collect())
}

fn answer_json(a: &RangeAnswer) -> Json {
    match a {
        RangeAnswer::Value(v) => Json::String(format_rational(v)),
        RangeAnswer::Bottom => Json::Null,
    }
}

fn group_label(q: &AggQuery, g: &[Value]) -> String {
    q.free_vars
        .iter()
        .zip(g)
        .map(|(v, x)| format!("{v}={x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_classify(g: &Global, text: &str, targets: Targets, dot: bool) -> Result<ExitCode> {
    let (_, q) = g.query(text)?;
    if dot {
        print!("{}", build_attack_graph(&q.body).to_dot());
        return Ok(ExitCode::SUCCESS);
    }
    let verdicts: Vec<Verdict> = targets
        .list()
        .into_iter()
        .map(|t| classify(&q, t, g.domain()))
        .collect();
    let class = fuxman_membership(&q);
    if g.json {
        print_json(&json!({
            "query": q.to_string(),
            "verdicts": verdicts,
            "fuxman_class": class,
        }));
    } else {
        for v in &verdicts {
            println!("{v}");
        }
        println!("class: {class}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_rewrite(g: &Global, text: &str, target: Target, sql: bool) -> Result<ExitCode> {
    let (schema, q) = g.query(text)?;
    let rw = rewrite(&q, target, g.domain())?;
    if sql {
        let script = emit_sql(&rw, &schema)?;
        if g.json {
            print_json(&json!({
                "ddl": script.ddl,
                "groups_sql": script.groups_sql,
                "guard_sql": script.guard_sql,
                "answer_sql": script.answer_sql,
                "params": script.params,
            }));
        } else {
            print!("{}", script.to_text());
        }
    } else if g.json {
        print_json(&json!({
            "query": q.to_string(),
            "target": target,
            "route": rw.route,
            "nodes": rw.node_count(),
            "logic": rw.to_logic(),
        }));
    } else {
        print!("{}", rw.to_logic());
    }
    Ok(ExitCode::SUCCESS)
}

fn pick(r: &Range, t: Target) -> &RangeAnswer {
    match t {
        Target::Glb => &r.glb,
        Target::Lub => &r.lub,
    }
}

fn cmd_eval(g: &Global, text: &str, targets: Targets) -> Result<ExitCode> {
    let (schema, q) = g.query(text)?;
    let db = g.instance(&schema)?;
    let ranges: Vec<(Vec<Value>, Range)> = if q.free_vars.is_empty() {
        vec![(Vec::new(), range_by_enumeration(&db, &q, g.cap)?)]
    } else {
        group_ranges(&db, &q, g.cap)?
    };
    let mut rows = Vec::new();
    for t in targets.list() {
        let rw = match classify(&q, t, g.domain()).status {
            Status::Rewritable => Some(rewrite(&q, t, g.domain())?),
            _ => None,
        };
        for (group, range) in &ranges {
            let by_rewriting = match &rw {
                Some(rw) if rw.is_grouped() => Some(rw.evaluate_at(&db, group)?),
                Some(rw) => Some(rw.evaluate(&db)?),
                None => None,
            };
            rows.push((t, group.clone(), pick(range, t).clone(), by_rewriting));
        }
    }
    if g.json {
        let out: Vec<Json> = rows
            .iter()
            .map(|(t, group, oracle, ours)| {
                json!({
                    "target": t,
                    "group": group_json(group),
                    "oracle": answer_json(oracle),
                    "rewriting": ours.as_ref().map(answer_json),
                })
            })
            .collect();
        print_json(&json!({
            "query": q.to_string(),
            "repairs": db.repair_count().to_string(),
            "answers": out,
        }));
    } else {
        println!("repairs: {}", db.repair_count());
        for (t, group, oracle, ours) in &rows {
            let label = group_label(&q, group);
            let prefix = if label.is_empty() { String::new() } else { format!("{label}  ") };
            match ours {
                Some(a) => println!("{prefix}{t}: {oracle} (rewriting: {a})"),
                None => println!("{prefix}{t}: {oracle}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn persist_failures(report: &CheckReport, schema: &Schema, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in &report.failures {
        let base = dir.join(format!("instance-{}", f.instance));
        for (name, db) in [("original", &f.original), ("shrunk", &f.shrunk)] {
            let sub = base.join(name);
            write_instance(db, &sub)?;
            write_schema(schema, &sub.join("schema.json"))?;
        }
        written.push(base);
    }
    Ok(written)
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    g: &Global,
    text: &str,
    target: Target,
    instances: usize,
    max_facts: usize,
    max_blocks: usize,
    max_block_size: usize,
    sql: bool,
    failures: &Path,
) -> Result<ExitCode> {
    let (schema, q) = g.query(text)?;
    let report = if g.instance.is_some() {
        let db = g.instance(&schema)?;
        Checker::new(&q, target, g.domain(), &schema, sql, g.cap)?.run(&[db])?
    } else {
        let cfg = GenConfig {
            seed: g.seed,
            instances,
            max_blocks,
            max_block_size,
            max_facts,
            cap: g.cap,
            sql,
        };
        run_check(&q, &schema, target, g.domain(), &cfg)?
    };
    let written = persist_failures(&report, &schema, failures)?;
    if g.json {
        print_json(&json!({
            "query": report.query,
            "target": report.target,
            "total": report.total(),
            "matched": report.matched(),
            "mismatched": report.mismatched(),
            "records": report.records,
            "failures": written,
        }));
    } else {
        for r in report.records.iter().filter(|r| !r.matches) {
            println!(
                "mismatch: instance {} group [{}]: oracle {} rewriting {}{}",
                r.instance,
                r.group.join(", "),
                r.oracle,
                r.rewriting,
                r.sql.as_ref().map(|s| format!(" sql {s}")).unwrap_or_default()
            );
        }
        for w in &written {
            println!("failing instance written to {}", w.display());
        }
        println!("{}", report.summary());
    }
    Ok(if report.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn write_gadget(g: &Global, gadget: &Gadget, out: &Path) -> Result<()> {
    write_instance(&gadget.instance, out)?;
    write_schema(gadget.instance.schema(), &out.join("schema.json"))?;
    let query = gadget.query.to_string();
    fs::write(out.join("query.txt"), format!("{query}\n"))
        .with_context(|| format!("writing {}", out.join("query.txt").display()))?;
    if g.json {
        print_json(&json!({
            "query": query,
            "facts": gadget.instance.len(),
            "repairs": gadget.instance.repair_count().to_string(),
            "dir": out,
        }));
    } else {
        println!("{query}");
    }
    Ok(())
}

fn cmd_gen(g: &Global, gadget: &GadgetCommand) -> Result<ExitCode> {
    let (made, out) = match gadget {
        GadgetCommand::TwoDm { pairs, common } => {
            (gen_2dm_instance(pairs, common.agg, &common.s, &common.t)?, &common.out)
        }
        GadgetCommand::Maxcut {
            vertices,
            edges,
            m,
            common,
        } => {
            let m = m
                .clone()
                .unwrap_or_else(|| Rational::from_integer((2 * edges.len() as i64 + 2).into()));
            (
                gen_maxcut_instance(vertices, edges, common.agg, &common.s, &common.t, &m)?,
                &common.out,
            )
        }
    };
    write_gadget(g, &made, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(g: &Global, text: &str, target: Target, dsn: &str) -> Result<ExitCode> {
    let (schema, q) = g.query(text)?;
    let db = g.instance(&schema)?;
    let rw = rewrite(&q, target, g.domain())?;
    let script = emit_sql(&rw, &schema)?;
    let rows = execute(dsn, &db, &script)?;
    if g.json {
        let out: Vec<Json> = rows
            .iter()
            .map(|(group, a)| json!({"group": group_json(group), "answer": answer_json(a)}))
            .collect();
        print_json(&json!({"query": q.to_string(), "target": target, "answers": out}));
    } else if !rw.is_grouped() {
        match rows.first() {
            Some((_, a)) => println!("{a}"),
            None => bail!("the database returned no row"),
        }
    } else {
        for (group, a) in &rows {
            println!("{}  {a}", group_label(&q, group));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Classify { query, target, dot } => cmd_classify(g, query, *target, *dot),
        Command::Rewrite { query, target, sql, .. } => cmd_rewrite(g, query, *target, *sql),
        Command::Eval { query, target } => cmd_eval(g, query, *target),
        Command::Check {
            query,
            target,
            instances,
            max_facts,
            max_blocks,
            max_block_size,
            sql,
            failures,
        } => cmd_check(
            g,
            query,
            *target,
            *instances,
            *max_facts,
            *max_blocks,
            *max_block_size,
            *sql,
            failures,
        ),
        Command::Gen { gadget } => cmd_gen(g, gadget),
        Command::Run { query, target, dsn } => cmd_run(g, query, *target, dsn),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
