//! Subject verification by phone OTP and pseudonymous identifiers.

mod otp;
mod pseudonym;

pub use otp::{
    is_valid_phone, InboxMessage, IssuedChallenge, LogSender, OtpChallenge, OtpConfig, OtpError, OtpSender,
    OtpService, TestInbox, VerifiedPhone,
};
pub use pseudonym::{baby_id, MotherId, PseudonymError, Pseudonymizer, StudyId, MOTHER_ID_PREFIX, STUDY_ID_PREFIX};
