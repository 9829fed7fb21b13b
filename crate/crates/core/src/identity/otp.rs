use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::Serialize;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OtpError {
    #[error("phone number is not a valid E.164 number")]
    InvalidPhone,
    #[error("too many verification requests for this number")]
    RateLimited { retry_after: u64 },
    #[error("unknown challenge")]
    UnknownChallenge,
    #[error("challenge expired")]
    Expired,
    #[error("no attempts left")]
    Exhausted,
    #[error("wrong code")]
    WrongCode { attempts_left: u8 },
    #[error("challenge already used")]
    AlreadyUsed,
    #[error("could not dispatch code: {0}")]
    Dispatch(String),
}

impl OtpError {
    pub fn code(&self) -> &'static str {
        match self {
            OtpError::InvalidPhone => "invalid_phone",
            OtpError::RateLimited { .. } => "rate_limited",
            OtpError::UnknownChallenge => "unknown_challenge",
            OtpError::Expired => "expired",
            OtpError::Exhausted => "exhausted",
            OtpError::WrongCode { .. } => "wrong_code",
            OtpError::AlreadyUsed => "already_used",
            OtpError::Dispatch(_) => "dispatch_failed",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OtpConfig {
    pub ttl_secs: u64,
    pub max_attempts: u8,
    pub rate_limit: usize,
    pub rate_window_secs: u64,
}

impl Default for OtpConfig {
    fn default() -> Self {
        Self {
            ttl_secs: 300,
            max_attempts: 5,
            rate_limit: 3,
            rate_window_secs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtpChallenge {
    pub phone: String,
    pub code: String,
    pub issued_at: u64,
    pub ttl: u64,
    pub attempts_left: u8,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IssuedChallenge {
    pub challenge_id: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedPhone {
    pub phone: String,
    pub verified_at: u64,
}

/// Delivery channel for one-time codes.
pub trait OtpSender: Send + Sync {
    fn send(&self, at: u64, phone: &str, code: &str) -> std::io::Result<()>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxMessage {
    pub timestamp: u64,
    pub phone: String,
    pub code: String,
}

/// Test inbox: keeps messages in memory and, when given a path, appends one
/// `timestamp\tphone\tcode` line per message.
#[derive(Debug, Default)]
pub struct TestInbox {
    path: Option<PathBuf>,
    messages: Mutex<Vec<InboxMessage>>,
}

impl TestInbox {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_file(path: PathBuf) -> Self {
        Self {
            path: Some(path),
            messages: Mutex::new(Vec::new()),
        }
    }

    pub fn messages(&self) -> Vec<InboxMessage> {
        self.messages.lock().expect("inbox lock").clone()
    }

    pub fn latest_code(&self, phone: &str) -> Option<String> {
        self.messages
            .lock()
            .expect("inbox lock")
            .iter()
            .rev()
            .find(|m| m.phone == phone)
            .map(|m| m.code.clone())
    }
}

impl OtpSender for TestInbox {
    fn send(&self, at: u64, phone: &str, code: &str) -> std::io::Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{at}\t{phone}\t{code}")?;
        }
        self.messages.lock().expect("inbox lock").push(InboxMessage {
            timestamp: at,
            phone: phone.to_owned(),
            code: code.to_owned(),
        });
        Ok(())
    }
}

/// Logs that a code was sent without recording the code or the number.
#[derive(Debug, Default, Clone, Copy)]
pub struct LogSender;

impl OtpSender for LogSender {
    fn send(&self, at: u64, _phone: &str, _code: &str) -> std::io::Result<()> {
        log::info!(target: "otp", "verification code dispatched at {at}");
        Ok(())
    }
}

/// `+` followed by 8 to 15 digits, the first non-zero.
pub fn is_valid_phone(phone: &str) -> bool {
    let Some(digits) = phone.strip_prefix('+') else {
        return false;
    };
    (8..=15).contains(&digits.len())
        && digits.bytes().all(|b| b.is_ascii_digit())
        && !digits.starts_with('0')
}

pub struct OtpService {
    clock: Arc<dyn Clock>,
    sender: Arc<dyn OtpSender>,
    config: OtpConfig,
    challenges: Mutex<HashMap<String, OtpChallenge>>,
    requests: Mutex<HashMap<String, VecDeque<u64>>>,
    rng: Mutex<StdRng>,
}

impl OtpService {
    pub fn new(clock: Arc<dyn Clock>, sender: Arc<dyn OtpSender>, config: OtpConfig) -> Self {
        Self {
            clock,
            sender,
            config,
            challenges: Mutex::new(HashMap::new()),
            requests: Mutex::new(HashMap::new()),
            rng: Mutex::new(StdRng::from_entropy()),
        }
    }

    /// Replaces the code generator, for reproducible tests.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = Mutex::new(StdRng::seed_from_u64(seed));
        self
    }

    pub fn config(&self) -> OtpConfig {
        self.config
    }

    pub fn request_otp(&self, phone: &str) -> Result<IssuedChallenge, OtpError> {
        let phone = phone.trim();
        if !is_valid_phone(phone) {
            return Err(OtpError::InvalidPhone);
        }
        let now = self.clock.now();
        {
            let mut requests = self.requests.lock().expect("otp requests lock");
            let window = requests.entry(phone.to_owned()).or_default();
            while window
                .front()
                .is_some_and(|t| now.saturating_sub(*t) >= self.config.rate_window_secs)
            {
                window.pop_front();
            }
            if window.len() >= self.config.rate_limit {
                let oldest = *window.front().expect("non-empty window");
                return Err(OtpError::RateLimited {
                    retry_after: (oldest + self.config.rate_window_secs).saturating_sub(now),
                });
            }
            window.push_back(now);
        }

        let (code, id) = {
            let mut rng = self.rng.lock().expect("otp rng lock");
            let code = format!("{:06}", rng.gen_range(0..1_000_000u32));
            let mut id = [0u8; 16];
            rng.fill_bytes(&mut id);
            (code, hex::encode(id))
        };
        self.sender
            .send(now, phone, &code)
            .map_err(|e| OtpError::Dispatch(e.to_string()))?;
        self.challenges.lock().expect("otp challenges lock").insert(
            id.clone(),
            OtpChallenge {
                phone: phone.to_owned(),
                code,
                issued_at: now,
                ttl: self.config.ttl_secs,
                attempts_left: self.config.max_attempts,
                used: false,
            },
        );
        Ok(IssuedChallenge {
            challenge_id: id,
            expires_at: now + self.config.ttl_secs,
        })
    }

    pub fn verify_otp(&self, challenge_id: &str, code: &str) -> Result<VerifiedPhone, OtpError> {
        let now = self.clock.now();
        let mut challenges = self.challenges.lock().expect("otp challenges lock");
        let ch = challenges
            .get_mut(challenge_id)
            .ok_or(OtpError::UnknownChallenge)?;
        if ch.used {
            return Err(OtpError::AlreadyUsed);
        }
        if ch.attempts_left == 0 {
            return Err(OtpError::Exhausted);
        }
        if now >= ch.issued_at + ch.ttl {
            return Err(OtpError::Expired);
        }
        if !bool::from(ch.code.as_bytes().ct_eq(code.trim().as_bytes())) {
            ch.attempts_left -= 1;
            return Err(match ch.attempts_left {
                0 => OtpError::Exhausted,
                n => OtpError::WrongCode { attempts_left: n },
            });
        }
        ch.used = true;
        Ok(VerifiedPhone {
            phone: ch.phone.clone(),
            verified_at: now,
        })
    }

    pub fn challenge(&self, challenge_id: &str) -> Option<OtpChallenge> {
        self.challenges
            .lock()
            .expect("otp challenges lock")
            .get(challenge_id)
            .cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TestClock;

    const PHONE: &str = "+4791234567";

    fn service() -> (OtpService, Arc<TestInbox>, TestClock) {
        let clock = TestClock::fixed(10_000);
        let inbox = Arc::new(TestInbox::in_memory());
        let svc = OtpService::new(Arc::new(clock.clone()), inbox.clone(), OtpConfig::default()).with_seed(7);
        (svc, inbox, clock)
    }

    #[test]
    fn phone_validation() {
        assert!(is_valid_phone(PHONE));
        assert!(!is_valid_phone("abc"));
        assert!(!is_valid_phone("4791234567"));
        assert!(!is_valid_phone("+0791234567"));
        assert!(!is_valid_phone("+1234"));
    }

    #[test]
    fn valid_phone_gets_six_digit_code() {
        let (svc, inbox, _) = service();
        svc.request_otp(PHONE).unwrap();
        let code = inbox.latest_code(PHONE).unwrap();
        assert_eq!(code.len(), 6);
        assert!(code.bytes().all(|b| b.is_ascii_digit()));
    }

    #[test]
    fn malformed_phone() {
        let (svc, _, _) = service();
        assert_eq!(svc.request_otp("abc"), Err(OtpError::InvalidPhone));
    }

    #[test]
    fn fourth_request_in_window_is_rate_limited() {
        let (svc, _, clock) = service();
        for _ in 0..3 {
            svc.request_otp(PHONE).unwrap();
            clock.advance(10);
        }
        assert!(matches!(svc.request_otp(PHONE), Err(OtpError::RateLimited { .. })));
        clock.advance(300);
        assert!(svc.request_otp(PHONE).is_ok());
    }

    #[test]
    fn correct_code_within_ttl() {
        let (svc, inbox, clock) = service();
        let ch = svc.request_otp(PHONE).unwrap();
        clock.advance(299);
        let v = svc
            .verify_otp(&ch.challenge_id, &inbox.latest_code(PHONE).unwrap())
            .unwrap();
        assert_eq!(v.phone, PHONE);
        assert_eq!(
            svc.verify_otp(&ch.challenge_id, &inbox.latest_code(PHONE).unwrap()),
            Err(OtpError::AlreadyUsed)
        );
    }

    #[test]
    fn correct_code_after_ttl_is_expired() {
        let (svc, inbox, clock) = service();
        let ch = svc.request_otp(PHONE).unwrap();
        clock.advance(300);
        assert_eq!(
            svc.verify_otp(&ch.challenge_id, &inbox.latest_code(PHONE).unwrap()),
            Err(OtpError::Expired)
        );
    }

    #[test]
    fn unknown_challenge() {
        let (svc, _, _) = service();
        assert_eq!(svc.verify_otp("nope", "000000"), Err(OtpError::UnknownChallenge));
    }

    /// Every sequence of k wrong guesses followed by the right code: accepted
    /// iff k < 5.
    #[test]
    fn attempt_sequences_exhaustively() {
        for wrong in 0..=7u8 {
            let (svc, inbox, _) = service();
            let ch = svc.request_otp(PHONE).unwrap();
            let code = inbox.latest_code(PHONE).unwrap();
            let bad = if code == "000000" { "000001" } else { "000000" };
            for i in 1..=wrong {
                let r = svc.verify_otp(&ch.challenge_id, bad);
                if i < 5 {
                    assert_eq!(r, Err(OtpError::WrongCode { attempts_left: 5 - i }));
                } else {
                    assert_eq!(r, Err(OtpError::Exhausted));
                }
            }
            let r = svc.verify_otp(&ch.challenge_id, &code);
            if wrong < 5 {
                assert!(r.is_ok(), "wrong={wrong}");
            } else {
                assert_eq!(r, Err(OtpError::Exhausted), "wrong={wrong}");
            }
        }
    }
}
