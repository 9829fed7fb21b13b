use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use consent_core::contract::{ContractCall, ContractState};
use consent_core::identity::{LogSender, OtpConfig, OtpSender, OtpService, Pseudonymizer, TestInbox};
use consent_core::ledger::Block;
use consent_core::secrets::InstallSecret;
use consent_core::vault::{SubjectKeyDeriver, Vault};
use consent_core::{Address, Clock, ConsentChain, GasSchedule};

use crate::auth::Authenticator;
use crate::config::{portal_address, staff_address, ServiceConfig};
use crate::error::{ApiError, ServiceError};
use crate::reqlog::RequestLog;

/// Read-only view published after every committed mutation.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: ContractState,
    pub blocks: Vec<Arc<Block>>,
}

pub struct AppState {
    writer: Mutex<ConsentChain>,
    snapshot: RwLock<Arc<Snapshot>>,
    pub schedule: GasSchedule,
    pub vault: Vault,
    pub otp: OtpService,
    pub auth: Authenticator,
    pub deriver: SubjectKeyDeriver,
    pub pseudonyms: Pseudonymizer,
    pub clock: Arc<dyn Clock>,
    pub request_log: RequestLog,
    pub static_dir: Option<PathBuf>,
    pub owner: Address,
}

/// Everything `AppState::new` wires together.
pub struct Parts {
    pub config: ServiceConfig,
    pub chain: ConsentChain,
    pub vault: Vault,
    pub otp: OtpService,
    pub secret: InstallSecret,
    pub clock: Arc<dyn Clock>,
    pub request_log: RequestLog,
}

impl AppState {
    /// Builds the state and enables the portal and every configured staff
    /// member that the chain has never seen a provider update for.
    pub fn new(parts: Parts) -> Result<Arc<Self>, ServiceError> {
        let Parts {
            config,
            mut chain,
            vault,
            otp,
            secret,
            clock,
            request_log,
        } = parts;
        let owner = config.owner_address();
        if chain.owner() != owner {
            return Err(ServiceError::Config(format!(
                "chain is owned by {} but the config names {}",
                chain.owner(),
                owner
            )));
        }
        let seen = provider_history(&chain.blocks());
        let wanted = std::iter::once(portal_address()).chain(config.staff.iter().map(|s| staff_address(&s.name)));
        for provider in wanted {
            if !seen.contains(&provider) {
                chain.transact(owner, &ContractCall::SetAuthorizedProvider { provider, enabled: true })?;
            }
        }
        let snapshot = Snapshot {
            state: chain.state().clone(),
            blocks: chain.blocks(),
        };
        Ok(Arc::new(Self {
            schedule: chain.schedule().clone(),
            writer: Mutex::new(chain),
            snapshot: RwLock::new(Arc::new(snapshot)),
            vault,
            otp,
            auth: Authenticator::new(&config),
            deriver: SubjectKeyDeriver::new(secret.subject_salt()),
            pseudonyms: Pseudonymizer::new(secret.pseudonym_key()),
            clock,
            request_log,
            static_dir: config.static_dir.clone(),
            owner,
        }))
    }

    /// Opens persistent chain and vault files.
    pub fn open(
        config: ServiceConfig,
        secret: InstallSecret,
        chain_path: &Path,
        vault_dir: &Path,
        schedule: GasSchedule,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Self>, ServiceError> {
        let chain = ConsentChain::open(chain_path, config.owner_address(), clock.clone(), schedule)?;
        let vault = Vault::open(vault_dir, secret.vault_master_key(), clock.clone())?;
        let sender: Arc<dyn OtpSender> = match &config.otp_inbox {
            Some(p) => Arc::new(TestInbox::with_file(p.clone())),
            None => Arc::new(LogSender),
        };
        let otp = OtpService::new(clock.clone(), sender, OtpConfig::default());
        let request_log = match &config.request_log {
            Some(p) => RequestLog::file(p)?,
            None => RequestLog::stdout(),
        };
        Self::new(Parts {
            config,
            chain,
            vault,
            otp,
            secret,
            clock,
            request_log,
        })
    }

    /// Fully in-memory state with a memory request log.
    pub fn in_memory(
        config: ServiceConfig,
        secret: InstallSecret,
        schedule: GasSchedule,
        clock: Arc<dyn Clock>,
        sender: Arc<dyn OtpSender>,
    ) -> Result<Arc<Self>, ServiceError> {
        let chain = ConsentChain::create_in_memory(config.owner_address(), clock.clone(), schedule)?;
        let vault = Vault::in_memory(secret.vault_master_key(), clock.clone());
        let otp = OtpService::new(clock.clone(), sender, OtpConfig::default());
        Self::new(Parts {
            config,
            chain,
            vault,
            otp,
            secret,
            clock,
            request_log: RequestLog::memory(),
        })
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    /// Runs `f` under the single writer and republishes the snapshot if the chain grew.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut ConsentChain) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut chain = self.writer.lock().map_err(ApiError::internal)?;
        let before = chain.ledger().len();
        let out = f(&mut chain);
        if chain.ledger().len() != before {
            let snap = Snapshot {
                state: chain.state().clone(),
                blocks: chain.blocks(),
            };
            *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(snap);
        }
        out
    }
}

/// Providers named by any provider update in the chain's history.
fn provider_history(blocks: &[Arc<Block>]) -> BTreeSet<Address> {
    blocks
        .iter()
        .flat_map(|b| b.transactions.iter())
        .filter_map(|tx| match tx.call() {
            Ok(ContractCall::SetAuthorizedProvider { provider, .. }) => Some(provider),
            _ => None,
        })
        .collect()
}
