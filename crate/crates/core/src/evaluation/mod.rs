//! Classification metrics, spectral estimates and report tables.

mod bands;
mod compare;
mod filter;
mod metrics;
mod psd;

pub use bands::{band_powers, Band, BandAnalyzer};
pub use compare::{compare_reports, ReportDelta, UtilityRow, UtilityTable};
pub use filter::{bandpass, BandPass, Biquad, DEFAULT_BAND_HZ};
pub use metrics::{
    evaluate, evaluate_logits, f1_per_subject, f1_score, mse, EvalReport, SubjectF1, DEFAULT_TOP_K,
};
pub use psd::{welch_psd, PsdReport, Welch, WelchParams};
