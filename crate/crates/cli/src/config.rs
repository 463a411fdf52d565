use crate::error::CliError;
use af_core::gateway::http::HttpTransport;
use af_core::gateway::mock::{MockTransport, Playbook};
use af_core::gateway::{Gateway, Registry, RetryPolicy, Transport};
use af_core::judge::RefusalLexicon;
use af_core::prompts::Templates;
use clap::Args;
use serde::Deserialize;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

const DEFAULT_CONCURRENCY: usize = 4;
const DEFAULT_TIMEOUT_S: u64 = 120;

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// JSON file with defaults for any of the global options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Endpoint registry: `{endpoint_id: {base_url, model, auth}}`.
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,
    #[arg(long, global = true, env = "AF_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Refusal phrases, one per line.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// In-flight requests per endpoint.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Requests per second per endpoint.
    #[arg(long, global = true)]
    pub rate_limit: Option<f64>,
    #[arg(long, global = true)]
    pub max_retries: Option<u32>,
    #[arg(long, global = true)]
    pub timeout_s: Option<u64>,
    /// Answer every request from a playbook instead of the network.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    registry: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    seed: Option<u64>,
    lexicon: Option<PathBuf>,
    templates: Option<PathBuf>,
    concurrency: Option<usize>,
    rate_limit: Option<f64>,
    max_retries: Option<u32>,
    timeout_s: Option<u64>,
    mock: Option<PathBuf>,
}

/// Global options after merging flags over the config file and loading
/// every referenced file.
pub struct Config {
    pub registry: Registry,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lexicon: RefusalLexicon,
    pub templates: Templates,
    pub concurrency: usize,
    pub rate_limit: Option<f64>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub mock: Option<Playbook>,
}

impl Config {
    pub fn resolve(args: &GlobalArgs) -> Result<Config, CliError> {
        let file = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::invalid(format!("config {}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let pick = |a: &Option<PathBuf>, b: Option<PathBuf>| a.clone().or(b);

        let mut registry = Registry::from_env();
        if let Some(p) = pick(&args.registry, file.registry) {
            registry.endpoints.extend(
                Registry::load(&p)
                    .map_err(|e| CliError::invalid(e.to_string()))?
                    .endpoints,
            );
        }
        let lexicon = match pick(&args.lexicon, file.lexicon) {
            Some(p) => RefusalLexicon::load(&p)
                .map_err(|e| CliError::invalid(format!("lexicon {}: {e}", p.display())))?,
            None => RefusalLexicon::default(),
        };
        let templates = Templates::load(pick(&args.templates, file.templates).as_deref())?;
        let mock = pick(&args.mock, file.mock)
            .map(|p| Playbook::load(&p).map_err(|e| CliError::invalid(e.to_string())))
            .transpose()?;
        let concurrency = args
            .concurrency
            .or(file.concurrency)
            .unwrap_or(DEFAULT_CONCURRENCY);
        if concurrency == 0 {
            return Err(CliError::invalid("--concurrency must be at least 1"));
        }
        let rate_limit = args.rate_limit.or(file.rate_limit);
        if rate_limit.is_some_and(|r| !(r > 0.0)) {
            return Err(CliError::invalid("--rate-limit must be positive"));
        }
        let mut retry = RetryPolicy::default();
        if let Some(n) = args.max_retries.or(file.max_retries) {
            retry.max_retries = n;
        }
        Ok(Config {
            registry,
            cache_dir: pick(&args.cache_dir, file.cache_dir),
            seed: args.seed.or(file.seed),
            lexicon,
            templates,
            concurrency,
            rate_limit,
            retry,
            timeout: Duration::from_secs(
                args.timeout_s
                    .or(file.timeout_s)
                    .unwrap_or(DEFAULT_TIMEOUT_S),
            ),
            mock,
        })
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::invalid(format!(
                "{command} requires --seed (or `seed` in the config file)"
            ))
        })
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let transport: Arc<dyn Transport> = match &self.mock {
            Some(pb) => Arc::new(MockTransport::new(pb.clone())),
            None => Arc::new(HttpTransport::new(self.timeout).map_err(CliError::invalid)?),
        };
        Ok(Gateway::builder(transport)
            .registry(self.registry.clone())
            .cache_dir(self.cache_dir.as_deref())?
            .retry(self.retry)
            .concurrency(self.concurrency)
            .rate_limit(self.rate_limit)
            .build())
    }
}
