//! Training history as comma-separated lines.

use std::fmt::Write as _;
use std::path::Path;

use drss_core::trainer::EpochRecord;

use crate::error::Result;
use crate::io::write_atomic;

pub const HEADER: &str = "# epoch, ce_src, ce_tgt, trace_term, adv_term, l2_term, dev_acc, dev_auc";

/// `epoch, ce_src, ce_tgt, trace_term, adv_term, l2_term, dev_acc, dev_auc`,
/// floats in shortest round-trip form; an undefined AUC prints as `nan`.
pub fn format_record(r: &EpochRecord) -> String {
    let auc = r.dev_auc.map_or_else(|| "nan".to_string(), |a| a.to_string());
    format!(
        "{}, {}, {}, {}, {}, {}, {}, {}",
        r.epoch, r.ce_src, r.ce_tgt, r.trace_term, r.adv_term, r.l2_term, r.dev_acc, auc
    )
}

pub fn format_history(records: &[EpochRecord]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", format_record(r));
    }
    s
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let text = format_history(records);
    write_atomic(path, |w| std::io::Write::write_all(w, text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let r = EpochRecord {
            epoch: 2,
            ce_src: 0.5,
            ce_tgt: 0.25,
            trace_term: 0.0,
            adv_term: -0.1,
            l2_term: 0.01,
            dev_acc: 0.75,
            dev_auc: None,
            omega_updates: 5,
        };
        assert_eq!(format_record(&r), "2, 0.5, 0.25, 0, -0.1, 0.01, 0.75, nan");
        assert_eq!(format_history(&[r]).lines().count(), 2);
    }
}
