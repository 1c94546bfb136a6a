use std::path::PathBuf;

use gsr::ingest::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn names(ds: &gsr_core::data::InteractionDataset, u: usize) -> Vec<&str> {
    ds.sequences[u].iter().map(|&i| ds.items[i as usize - 1].as_str()).collect()
}

#[test]
fn bundled_fixture_matches_hand_count() {
    let ds = load_dataset(&fixture("tiny.csv"), &IngestOptions::default()).unwrap();
    assert_eq!((ds.num_users(), ds.num_items(), ds.num_actions()), (4, 5, 12));
    assert_eq!(ds.users, ["alice", "bob", "carol", "dave"]);
    assert_eq!(ds.items, ["apple", "pear", "fig", "kiwi", "plum"]);
    assert_eq!(names(&ds, 0), ["pear", "kiwi", "apple", "fig"]);
    // equal timestamps keep file order
    assert_eq!(names(&ds, 1), ["pear", "apple", "kiwi"]);
    assert_eq!(names(&ds, 2), ["apple", "fig", "pear"]);
    assert_eq!(names(&ds, 3), ["plum", "fig"]);
}

#[test]
fn json_lines_agree_with_csv() {
    let csv = load_dataset(&fixture("tiny.csv"), &IngestOptions::default()).unwrap();
    let opts = IngestOptions { format: Format::JsonLines, ..Default::default() };
    assert_eq!(load_dataset(&fixture("tiny.jsonl"), &opts).unwrap(), csv);
}

#[test]
fn custom_columns_delimiter_and_header() {
    let text = "item;rating;user;time\nx;5;u1;3\ny;4;u1;1\nx;1;u2;9\n";
    let opts = IngestOptions {
        format: Format::parse(";").unwrap(),
        has_header: true,
        columns: [2, 0, 3],
        ..Default::default()
    };
    let recs = read_delimited(text.as_bytes(), b';', &opts).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!((recs[1].user.as_str(), recs[1].item.as_str(), recs[1].timestamp), ("u1", "y", 1));
}

#[test]
fn json_keys_are_configurable() {
    let text = "{\"reviewerID\": \"a\", \"asin\": 7, \"unixReviewTime\": 5}\n";
    let opts = IngestOptions {
        format: Format::JsonLines,
        keys: ["reviewerID".into(), "asin".into(), "unixReviewTime".into()],
        ..Default::default()
    };
    let recs = read_json_lines(text.as_bytes(), &opts).unwrap();
    assert_eq!((recs[0].user.as_str(), recs[0].item.as_str(), recs[0].timestamp), ("a", "7", 5));
}

#[test]
fn malformed_records_report_their_line() {
    let opts = IngestOptions::default();
    let cases = [
        ("a,x,1\nb,y,notanumber\n", 2),
        ("a,x,1\nb,y,2\nc,z\n", 3),
        ("a,x,1\n,y,2\n", 2),
        ("a,x,-4\n", 1),
    ];
    for (text, line) in cases {
        match read_delimited(text.as_bytes(), b',', &opts) {
            Err(IngestError::Malformed { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    let opts = IngestOptions { format: Format::JsonLines, ..Default::default() };
    for (text, line) in [("{\"user\":\"a\",\"item\":\"b\",\"timestamp\":1}\n{oops\n", 2), ("{\"user\":\"a\",\"item\":\"b\"}\n", 1)] {
        match read_json_lines(text.as_bytes(), &opts) {
            Err(IngestError::Malformed { line: l, .. }) => assert_eq!(l, line),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn empty_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(load_dataset(&empty, &IngestOptions::default()), Err(IngestError::Data(_))));
    assert!(matches!(load_dataset(&dir.path().join("nope.csv"), &IngestOptions::default()), Err(IngestError::Io { .. })));
}

#[test]
fn format_names() {
    for s in ["csv", "tsv", "jsonl", "|"] {
        assert_eq!(Format::parse(s).unwrap().name(), s);
    }
    assert!(Format::parse("parquet").is_none());
}
