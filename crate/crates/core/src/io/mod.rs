//! Tensor files, run directories, reports and plots.

pub mod elft;
pub mod pca;
pub mod plot;
pub mod report;
pub mod run;

pub use elft::{elft_read, elft_read_all, elft_write, elft_write_all};
pub use pca::{pca2_summary, Gaussian1d, Pca2Summary, PcaNormalization};
pub use report::{build_report, write_report, ReportDocument, ReportOptions, REPORT_SCHEMA};
