//! The `capodaz` command line: service, benchmark, token and policy tools.
//!
//! Exit codes are stable: 0 on success, 1 on a domain failure (denied
//! request, invalid or expired token, invalid policy, aborted benchmark),
//! 2 on a usage or configuration error. Data goes to standard output,
//! diagnostics to standard error.
//!
//! Configuration is merged as flags > `CAPODAZ_*` environment variables >
//! config file > defaults; `serve --print-config` shows the result.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{
    export_report, read_report_csv, run_rounds, run_workload, simulate, aggregate_spec, Driver, ExportFormat, MetricsReport, Pattern, RequestTemplate, RoundPlan,
    ServiceTarget, SimTarget, StubModel, TokenSource, WorkloadSpec,
};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::codec::cbor_to_json;
use crate::policy::{pap_load_file, pdp_evaluate, AccessRequest, AttributeId, AttributeSources, AttributeValue, Category, ValueType};
use crate::service::{load_issuer_key, serve, ClientError, Role, ServiceClient, ServiceConfig, ServiceError, ServiceState, WireFormat};
use crate::token::{handle_grant, verify_token, wire_from_bearer, ClientDirectory, GrantRequest, GrantType, TokenError, TokenFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Prefix of the environment variables read by [`load_config`].
pub const ENV_PREFIX: &str = "CAPODAZ_";

#[derive(Debug, Parser)]
#[command(name = "capodaz", version, about = "Capability-token authorization service and load harness")]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the service in the foreground.
    Serve(ServeArgs),
    /// Run one workload, or a round plan with `bench rounds`.
    Bench(BenchArgs),
    /// Obtain a token from a running service, or issue one locally from the configuration.
    TokenIssue(TokenIssueArgs),
    /// Check a token's MAC and lifetime, and optionally its registrar status.
    TokenVerify(TokenVerifyArgs),
    /// Revoke a token on a running service.
    TokenRevoke(TokenRevokeArgs),
    /// Validate a policy document and optionally evaluate a request against it.
    PolicyCheck(PolicyCheckArgs),
    /// Print a benchmark report as a table and regenerate its data files.
    Report(ReportArgs),
}

/// Configuration fields settable from the command line.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigOverrides {
    #[arg(long, value_name = "ROLE")]
    pub role: Option<Role>,
    #[arg(long = "listen", value_name = "ADDR")]
    pub listen_address: Option<String>,
    #[arg(long, value_name = "HOST:PORT")]
    pub upstream: Option<String>,
    #[arg(long = "policy", value_name = "PATH")]
    pub policy_path: Option<PathBuf>,
    #[arg(long = "issuer-key", value_name = "PATH")]
    pub issuer_key_path: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub registrar_log: Option<PathBuf>,
    #[arg(long = "token-ttl", value_name = "SECS")]
    pub token_default_ttl: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Stop gracefully after this many seconds.
    #[arg(long, value_name = "SECS")]
    pub shutdown_after: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RequestArgs {
    #[arg(long, default_value = "GET")]
    pub method: String,
    /// Request path on the target, e.g. /resource/vehicle/localisation.
    #[arg(long, default_value = "/")]
    pub path: String,
    #[arg(long, default_value = "")]
    pub body: String,
    /// Fetch a client-credentials token for this client before the run.
    #[arg(long)]
    pub client_id: Option<String>,
    #[arg(long, default_value = "")]
    pub client_secret: String,
    #[arg(long, default_value = "")]
    pub audience: String,
    /// Use this bearer token as is.
    #[arg(long, conflicts_with = "client_id")]
    pub bearer: Option<String>,
}

impl RequestArgs {
    fn template(&self) -> RequestTemplate {
        let token = match (&self.client_id, &self.bearer) {
            (Some(id), _) => TokenSource::ClientCredentials {
                client_id: id.clone(),
                client_secret: self.client_secret.clone(),
                audience: self.audience.clone(),
            },
            (None, Some(b)) => TokenSource::Bearer { token: b.clone() },
            (None, None) => TokenSource::None,
        };
        RequestTemplate { method: self.method.clone(), path: self.path.clone(), body: self.body.clone(), token }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Run in virtual time instead of real time.
    #[arg(long)]
    pub simulate: bool,
    /// With --simulate: answer from a stub instead of the in-process service.
    #[arg(long, requires = "simulate")]
    pub stub: bool,
    /// Simulated service time per request, seconds.
    #[arg(long, default_value_t = 0.002)]
    pub service_time: f64,
    /// Simulated parallel workers; unlimited when absent.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Simulated queue length in front of the workers.
    #[arg(long, default_value_t = 4096)]
    pub queue: usize,
}

impl SimArgs {
    fn model(&self) -> StubModel {
        StubModel { service_time: self.service_time, workers: self.workers, queue_limit: self.queue, ..StubModel::uncapped(0.0) }
    }
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub rounds: Option<BenchCommand>,
    #[arg(long, default_value = "uniform")]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    /// Seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Arrivals per second per user (poisson).
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Seconds between requests of one user (uniform).
    #[arg(long, default_value_t = 1.0)]
    pub think_time: f64,
    /// Requests per second per user (binomial).
    #[arg(long, default_value_t = 1000.0)]
    pub rate_cap: f64,
    /// Request timeout, seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Leading fraction of the run left out of the report.
    #[arg(long, default_value_t = 0.05)]
    pub warmup: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base URL; defaults to the configured listen address.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub request: RequestArgs,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run every cell of a round plan; the three-round default when --plan is absent.
    Rounds {
        #[arg(long, value_name = "PATH")]
        plan: Option<PathBuf>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TokenKind {
    Jwt,
    Cwt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Wire {
    Json,
    Cbor,
}

#[derive(Debug, Args)]
pub struct TokenIssueArgs {
    /// Service base URL; without it the token is issued locally.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value = "client_credentials")]
    pub grant: String,
    #[arg(long)]
    pub client_id: String,
    #[arg(long)]
    pub client_secret: Option<String>,
    #[arg(long, default_value = "")]
    pub aud: String,
    /// Comma-separated scope; the client's default when absent.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub username: Option<String>,
    #[arg(long = "token-format")]
    pub token_format: Option<TokenKind>,
    /// Body encoding of the token request.
    #[arg(long, default_value = "json")]
    pub wire: Wire,
    /// Print the whole token response as JSON instead of the bearer string.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TokenVerifyArgs {
    /// Bearer form of the token; `-` reads standard input.
    #[arg(long)]
    pub token: String,
    /// Issuer key (JSON COSE_Key); defaults to the configured one.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Unix time to verify at.
    #[arg(long)]
    pub now: Option<i64>,
    /// Also ask this service for the registrar status.
    #[arg(long, requires_all = ["admin_id", "admin_secret"])]
    pub target: Option<String>,
    #[arg(long)]
    pub admin_id: Option<String>,
    #[arg(long)]
    pub admin_secret: Option<String>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["jti", "token"]))]
pub struct TokenRevokeArgs {
    /// Service base URL; defaults to the configured listen address.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub admin_id: String,
    #[arg(long)]
    pub admin_secret: String,
    #[arg(long)]
    pub jti: Option<String>,
    #[arg(long)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct PolicyCheckArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// Evaluate a request for this resource.
    #[arg(long)]
    pub resource: Option<String>,
    #[arg(long, default_value = "read", requires = "resource")]
    pub action: String,
    /// Request attribute `Category:name[:type]=value[,value]`, repeatable.
    #[arg(long = "attr", requires = "resource")]
    pub attrs: Vec<String>,
    /// Unix time for Environment:current-time.
    #[arg(long)]
    pub now: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.csv written by `bench`.
    #[arg(long)]
    pub input: PathBuf,
    /// Write plot data files here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Domain(_) => EXIT_DOMAIN,
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::ConfigInvalid(_) | ServiceError::ConfigParse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn env_value<T: std::str::FromStr>(env: &HashMap<String, String>, key: &str) -> Result<Option<T>, ServiceError>
where
    T::Err: std::fmt::Display,
{
    let name = format!("{ENV_PREFIX}{key}");
    env.get(&name)
        .map(|v| v.parse::<T>().map_err(|e| ServiceError::ConfigInvalid(format!("{name}: {e}"))))
        .transpose()
}

/// Merges defaults, the config file at `path`, `CAPODAZ_*` entries of
/// `env` and `flags`, later sources winning. Relative paths in the file
/// are taken relative to the file's directory.
pub fn load_config(path: Option<&Path>, env: &HashMap<String, String>, flags: &ConfigOverrides) -> Result<ServiceConfig, ServiceError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServiceError::ConfigParse(format!("{}: {e}", p.display())))?;
            let mut cfg = ServiceConfig::from_toml(&text).map_err(|e| ServiceError::ConfigParse(format!("{}: {e}", p.display())))?;
            cfg.resolve_paths(p.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => ServiceConfig::default(),
    };

    macro_rules! layer {
        ($field:ident, $key:literal, $flag:expr) => {
            if let Some(v) = env_value(env, $key)? {
                cfg.$field = v;
            }
            if let Some(v) = $flag.clone() {
                cfg.$field = v;
            }
        };
        (opt $field:ident, $key:literal, $flag:expr) => {
            if let Some(v) = env_value(env, $key)? {
                cfg.$field = Some(v);
            }
            if let Some(v) = $flag.clone() {
                cfg.$field = Some(v);
            }
        };
    }
    layer!(listen_address, "LISTEN_ADDRESS", flags.listen_address);
    layer!(role, "ROLE", flags.role);
    layer!(opt upstream, "UPSTREAM", flags.upstream);
    layer!(opt policy_path, "POLICY_PATH", flags.policy_path);
    layer!(opt issuer_key_path, "ISSUER_KEY_PATH", flags.issuer_key_path);
    layer!(opt registrar_log, "REGISTRAR_LOG", flags.registrar_log);
    layer!(token_default_ttl, "TOKEN_DEFAULT_TTL", flags.token_default_ttl);
    layer!(request_timeout, "REQUEST_TIMEOUT", None::<u64>);
    layer!(purge_interval, "PURGE_INTERVAL", None::<u64>);
    cfg.validate()?;
    Ok(cfg)
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::Domain(format!("cannot start runtime: {e}")))
}

fn base_url(explicit: &Option<String>, cfg: &ServiceConfig) -> String {
    explicit.clone().unwrap_or_else(|| format!("http://{}", cfg.listen_address))
}

fn client_failure(e: ClientError) -> Failure {
    match e {
        ClientError::Rejected { status, code, body } => Failure::Domain(format!("rejected ({status} {code}): {body}")),
        other => Failure::Domain(other.to_string()),
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn say(&mut self, line: impl std::fmt::Display) {
        let _ = writeln!(self.out, "{line}");
        let _ = self.out.flush();
    }
}

fn cmd_serve(cli: &Cli, args: &ServeArgs, env: &HashMap<String, String>, io: &mut Io<'_>) -> Outcome {
    let cfg = load_config(cli.config.as_deref(), env, &args.overrides)?;
    if args.print_config {
        let _ = write!(io.out, "{}", cfg.to_toml());
        return Ok(());
    }
    let rt = runtime()?;
    rt.block_on(async {
        let handle = serve(cfg).await?;
        io.say(format_args!("listening on {}", handle.base_url()));
        match args.shutdown_after {
            Some(secs) => tokio::time::sleep(Duration::from_secs_f64(secs)).await,
            None => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
        handle.shutdown().await?;
        let _ = writeln!(io.err, "stopped");
        Ok(())
    })
}

fn sim_target(cli: &Cli, sim: &SimArgs, env: &HashMap<String, String>) -> Result<SimTarget, Failure> {
    if sim.stub {
        return Ok(SimTarget::stub(sim.model()));
    }
    let cfg = load_config(cli.config.as_deref(), env, &ConfigOverrides::default())?;
    let now = SystemClock.now();
    let clock = Arc::new(ManualClock::new(now));
    let state = ServiceState::from_config(cfg)?.with_clock(clock.clone());
    Ok(SimTarget::service(ServiceTarget::new(Arc::new(state), clock), sim.model(), now))
}

fn summary(r: &MetricsReport) -> String {
    format!(
        "{} throughput={:.2} mean_latency_ms={:.3} stddev_ms={:.3} mode_s={} success={} failure={}",
        r.label, r.throughput, r.mean_latency, r.latency_stddev, r.mode_bucket, r.success_count, r.failure_count
    )
}

fn write_reports(reports: &[(WorkloadSpec, MetricsReport)], out: &Path, io: &mut Io<'_>) -> Outcome {
    for format in [ExportFormat::Csv, ExportFormat::PlotData] {
        export_report(reports, format, out).map_err(|e| Failure::Domain(format!("{}: {e}", out.display())))?;
    }
    for (_, r) in reports {
        io.say(summary(r));
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs, env: &HashMap<String, String>, io: &mut Io<'_>) -> Outcome {
    let rt = runtime()?;
    if let Some(BenchCommand::Rounds { plan, out, sim }) = &args.rounds {
        let plan = match plan {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                RoundPlan::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
            }
            None => RoundPlan::default_plan(&WorkloadSpec::default()),
        };
        let mut driver = if sim.simulate { Driver::Simulated(sim_target(cli, sim, env)?) } else { Driver::Live };
        let results = rt.block_on(run_rounds(&plan, &mut driver));
        write_reports(&results.reports, out, io)?;
        return match results.aborted {
            Some(e) => Err(Failure::Domain(format!("aborted: {e}"))),
            None => Ok(()),
        };
    }

    let target = match &args.target {
        Some(t) => t.clone(),
        None if args.sim.simulate => String::new(),
        None => base_url(&None, &load_config(cli.config.as_deref(), env, &ConfigOverrides::default())?),
    };
    let spec = WorkloadSpec {
        pattern: args.pattern,
        users: args.users,
        duration: args.duration,
        think_time: args.think_time,
        lambda: args.lambda,
        per_user_rate_cap: args.rate_cap,
        request_timeout: args.timeout,
        target,
        request: args.request.template(),
        seed: args.seed,
        warmup: args.warmup,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let samples = if args.sim.simulate {
        let mut target = sim_target(cli, &args.sim, env)?;
        rt.block_on(simulate(&spec, &mut target))
    } else {
        rt.block_on(run_workload(&spec))
    }
    .map_err(|e| Failure::Domain(e.to_string()))?;
    let report = aggregate_spec(&spec, &samples);
    write_reports(&[(spec, report)], &args.out, io)
}

fn cmd_token_issue(cli: &Cli, args: &TokenIssueArgs, env: &HashMap<String, String>, io: &mut Io<'_>) -> Outcome {
    let grant: GrantType = args.grant.parse().map_err(|e: crate::token::GrantError| Failure::Usage(e.to_string()))?;
    let mut req = GrantRequest::new(grant, args.client_id.as_str(), args.aud.as_str());
    req.client_secret = args.client_secret.clone();
    req.scope = args.scope.as_ref().map(|s| s.split(',').map(|x| x.trim().to_owned()).filter(|x| !x.is_empty()).collect());
    req.username = args.username.clone();
    req.format = args.token_format.map(|k| match k {
        TokenKind::Jwt => TokenFormat::Jwt,
        TokenKind::Cwt => TokenFormat::Cwt,
    });

    let response = match &args.target {
        Some(target) => {
            let wire = match args.wire {
                Wire::Json => WireFormat::Json,
                Wire::Cbor => WireFormat::Cbor,
            };
            runtime()?.block_on(ServiceClient::new(target.as_str()).request_token(&req, wire)).map_err(client_failure)?
        }
        None => {
            let cfg = load_config(cli.config.as_deref(), env, &ConfigOverrides::default())?;
            let key_path = cfg
                .issuer_key_path
                .as_deref()
                .ok_or_else(|| Failure::Usage("local issuance needs issuer_key_path in the configuration".into()))?;
            let key = load_issuer_key(key_path)?;
            let mut clients = ClientDirectory::new(cfg.token_default_ttl);
            for c in &cfg.clients {
                clients.register(c.to_spec()?);
            }
            handle_grant(&req, &key, &clients, SystemClock.now()).map_err(|e| Failure::Domain(format!("{}: {e}", e.code())))?.response
        }
    };
    if args.json {
        let doc = cbor_to_json(&response.to_cbor()).map_err(|e| Failure::Domain(e.to_string()))?;
        io.say(serde_json::to_string_pretty(&doc).expect("JSON serializes"));
    } else {
        io.say(response.access_token.bearer());
    }
    Ok(())
}

fn read_token(arg: &str) -> Result<String, Failure> {
    if arg != "-" {
        return Ok(arg.trim().to_owned());
    }
    let mut s = String::new();
    std::io::stdin().read_to_string(&mut s).map_err(|e| Failure::Usage(format!("stdin: {e}")))?;
    Ok(s.trim().to_owned())
}

fn cmd_token_verify(cli: &Cli, args: &TokenVerifyArgs, env: &HashMap<String, String>, io: &mut Io<'_>) -> Outcome {
    let key = match &args.key {
        Some(p) => load_issuer_key(p)?,
        None => {
            let cfg = load_config(cli.config.as_deref(), env, &ConfigOverrides::default())?;
            let p = cfg.issuer_key_path.ok_or_else(|| Failure::Usage("no --key and no issuer_key_path configured".into()))?;
            load_issuer_key(&p)?
        }
    };
    let bearer = read_token(&args.token)?;
    let wire = wire_from_bearer(&bearer).map_err(|e| Failure::Domain(format!("invalid: {e}")))?;
    let now = args.now.unwrap_or_else(|| SystemClock.now());
    let claims = match verify_token(&wire, &key, now) {
        Ok(c) => c,
        Err(TokenError::Expired) => return Err(Failure::Domain("expired".into())),
        Err(e) => return Err(Failure::Domain(format!("invalid: {e}"))),
    };
    if let (Some(target), Some(id), Some(secret)) = (&args.target, &args.admin_id, &args.admin_secret) {
        let doc = runtime()?
            .block_on(ServiceClient::new(target.as_str()).introspect_token((id, secret), &bearer))
            .map_err(|e| match e {
                ClientError::Rejected { status: 404, .. } => Failure::Domain("unknown to the registrar".into()),
                other => client_failure(other),
            })?;
        let status = doc["status"].as_str().unwrap_or_default().to_owned();
        if status != "active" {
            return Err(Failure::Domain(status));
        }
    }
    io.say(serde_json::to_string_pretty(&claims).expect("claims serialize"));
    Ok(())
}

fn cmd_token_revoke(cli: &Cli, args: &TokenRevokeArgs, env: &HashMap<String, String>, io: &mut Io<'_>) -> Outcome {
    let target = match &args.target {
        Some(t) => t.clone(),
        None => base_url(&None, &load_config(cli.config.as_deref(), env, &ConfigOverrides::default())?),
    };
    let client = ServiceClient::new(target);
    let admin = (args.admin_id.as_str(), args.admin_secret.as_str());
    let rt = runtime()?;
    let doc = match (&args.jti, &args.token) {
        (Some(jti), _) => rt.block_on(client.revoke(admin, jti)),
        (None, Some(token)) => rt.block_on(client.revoke_token(admin, &read_token(token)?)),
        (None, None) => unreachable!("clap requires one of --jti and --token"),
    }
    .map_err(client_failure)?;
    io.say(doc);
    Ok(())
}

/// Parses `Category:name[:type]=value[,value]`.
fn parse_attr(spec: &str) -> Result<(AttributeId, Vec<AttributeValue>), String> {
    let (id, values) = spec.split_once('=').ok_or_else(|| format!("{spec:?}: expected Category:name=value"))?;
    let mut parts = id.splitn(3, ':');
    let category = parts.next().and_then(Category::parse).ok_or_else(|| format!("{spec:?}: unknown category"))?;
    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| format!("{spec:?}: missing attribute name"))?;
    let ty = match parts.next() {
        Some(t) => Some(ValueType::parse(t).ok_or_else(|| format!("{spec:?}: unknown type {t:?}"))?),
        None => None,
    };
    let values = values
        .split(',')
        .map(|v| match ty {
            Some(t) => AttributeValue::parse_as(t, v).ok_or_else(|| format!("{spec:?}: {v:?} is not a {}", t.as_str())),
            None => Ok(v
                .parse::<i64>()
                .map(AttributeValue::Integer)
                .or_else(|_| v.parse::<bool>().map(AttributeValue::Boolean))
                .unwrap_or_else(|_| AttributeValue::text(v))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((AttributeId::new(category, name), values))
}

fn cmd_policy_check(args: &PolicyCheckArgs, io: &mut Io<'_>) -> Outcome {
    let set = pap_load_file(&args.file).map_err(|e| Failure::Domain(format!("{}: {e}", args.file.display())))?;
    let Some(resource) = &args.resource else {
        let rules: usize = set.policies.iter().map(|p| p.rules.len()).sum();
        io.say(format_args!("valid: policy set {} with {} policies and {rules} rules", set.id, set.policies.len()));
        return Ok(());
    };
    let mut request = AccessRequest::new(resource.as_str(), args.action.as_str());
    for a in &args.attrs {
        let (id, values) = parse_attr(a).map_err(Failure::Usage)?;
        request = request.with_attribute(id, values);
    }
    let sources = AttributeSources::new().at(args.now.unwrap_or_else(|| SystemClock.now()));
    let decision = pdp_evaluate(&set, &request, &sources);
    let obligations: Vec<_> = decision
        .obligations
        .iter()
        .map(|o| serde_json::json!({ "id": o.id.as_str(), "params": o.params }))
        .collect();
    let trace: Vec<_> = decision
        .trace
        .iter()
        .map(|t| serde_json::json!({ "policy": t.policy_id, "rule": t.rule_id, "outcome": t.outcome.as_str() }))
        .collect();
    let doc = serde_json::json!({ "outcome": decision.outcome.as_str(), "obligations": obligations, "trace": trace });
    io.say(serde_json::to_string_pretty(&doc).expect("JSON serializes"));
    if decision.outcome == crate::policy::Outcome::Permit {
        Ok(())
    } else {
        Err(Failure::Domain(format!("decision: {}", decision.outcome)))
    }
}

fn cmd_report(args: &ReportArgs, io: &mut Io<'_>) -> Outcome {
    let reports = read_report_csv(&args.input).map_err(|e| Failure::Usage(e.to_string()))?;
    let rows: [(&str, fn(&MetricsReport) -> String); 7] = [
        ("Mean latency (ms)", |r| format!("{:.2}", r.mean_latency)),
        ("Most appearances (s)", |r| r.mode_bucket.to_string()),
        ("Std. dev", |r| format!("{:.2}", r.latency_stddev)),
        ("Throughput (requests/s)", |r| format!("{:.2}", r.throughput)),
        ("Load (KB/s)", |r| format!("{:.2}", r.load_kbps)),
        ("Successes", |r| r.success_count.to_string()),
        ("Failures", |r| r.failure_count.to_string()),
    ];
    let header: Vec<&str> = std::iter::once("").chain(reports.iter().map(|r| r.label.as_str())).collect();
    io.say(header.join("\t"));
    for (name, cell) in rows {
        let line: Vec<String> = std::iter::once(name.to_owned()).chain(reports.iter().map(cell)).collect();
        io.say(line.join("\t"));
    }
    if let Some(out) = &args.out {
        let paired = reports
            .into_iter()
            .map(|r| {
                let spec = WorkloadSpec::from_label(&r.label).ok_or_else(|| Failure::Usage(format!("unrecognized label {:?}", r.label)))?;
                Ok((spec, r))
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        export_report(&paired, ExportFormat::PlotData, out).map_err(|e| Failure::Domain(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. `env` holds
/// the process environment.
pub fn run<I, T>(args: I, env: &HashMap<String, String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let mut io = Io { out, err };
    let outcome = match &cli.command {
        Command::Serve(a) => cmd_serve(&cli, a, env, &mut io),
        Command::Bench(a) => cmd_bench(&cli, a, env, &mut io),
        Command::TokenIssue(a) => cmd_token_issue(&cli, a, env, &mut io),
        Command::TokenVerify(a) => cmd_token_verify(&cli, a, env, &mut io),
        Command::TokenRevoke(a) => cmd_token_revoke(&cli, a, env, &mut io),
        Command::PolicyCheck(a) => cmd_policy_check(a, &mut io),
        Command::Report(a) => cmd_report(a, &mut io),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Domain(m)) = &f;
            let _ = writeln!(io.err, "{m}");
            f.code()
        }
    }
}
