//! Trade-record parsing, country pooling and per-year panel assembly.

mod io;
mod panel;
mod pool;
mod records;

pub use io::{
    file_digest, matrix_file_name, plan_from_csv, plan_to_csv, read_panel_dir, sha256_hex,
    write_panel_dir, PanelIndex, INDEX_FILE, MASK_SENTINEL,
};
pub use panel::{
    build_panel, marginals_from_plan, unobserved_lines, DualReport, Provenance, ReporterView,
    TradePanel,
};
pub use pool::{country_volumes, pool_countries, relabel, select_by_volume, CountryIndex, OTHER};
pub use records::{
    parse_trade_csv, parse_trade_reader, write_trade_csv, Element, ParseOutcome, RowError, SchemaOptions,
    TradeRecord,
};
