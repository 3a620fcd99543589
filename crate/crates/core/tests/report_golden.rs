mod common;

use common::sample_report;
use goalchain_core::report::{average_grids, dataset_grids, render_grids};

#[test]
fn results_table_matches_golden_file() {
    let rendered = render_grids(&dataset_grids(&sample_report()));
    if std::env::var_os("PRINT_GOLDEN").is_some() {
        print!("{rendered}");
    }
    assert_eq!(rendered, include_str!("golden/results_table.txt"));
}

#[test]
fn averaged_table_matches_golden_file() {
    let rendered = render_grids(&average_grids(&sample_report().cells));
    if std::env::var_os("PRINT_GOLDEN").is_some() {
        print!("{rendered}");
    }
    assert_eq!(rendered, include_str!("golden/average_table.txt"));
}
