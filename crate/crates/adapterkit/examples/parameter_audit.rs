//! Print the shape-only parameter audit for the reference architectures,
//! including the toy-backbone consistency check.
//!
//!     cargo run --release --example parameter_audit

use adapterkit::audit::audit_report;

fn main() -> adapterkit::Result<()> {
    let report = audit_report(32, 4)?;
    print!("{}", report.to_table());
    Ok(())
}
