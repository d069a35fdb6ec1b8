use affect_eval::corpus::{load_corpus, write_corpus, write_corpus_csv, CorpusFormat};
use affect_eval::mocksim::synthetic_corpus;

#[test]
fn csv_and_jsonl_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_corpus(200, 9);
    for format in [CorpusFormat::TwoAnnotator, CorpusFormat::GoldOnly] {
        for ext in ["csv", "jsonl"] {
            let first = dir.path().join(format!("a.{ext}"));
            let second = dir.path().join(format!("b.{ext}"));
            write_corpus(&records, &first, format).unwrap();
            let loaded = load_corpus(&first, format).unwrap();
            assert_eq!(loaded.len(), records.len());
            for (a, b) in loaded.iter().zip(&records) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.text, b.text);
                assert_eq!(a.gold, b.gold);
            }
            write_corpus(&loaded, &second, format).unwrap();
            assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap(), "{format:?} {ext}");
        }
    }
}

#[test]
fn two_annotator_gold_is_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let records = synthetic_corpus(50, 1);
    write_corpus(&records, &path, CorpusFormat::TwoAnnotator).unwrap();
    for r in load_corpus(&path, CorpusFormat::TwoAnnotator).unwrap() {
        let ratings = r.raw_ratings.as_ref().unwrap();
        for (d, g) in &r.gold {
            assert_eq!(*g, (ratings[0].scores[d] + ratings[1].scores[d]) / 2.0);
        }
    }
}

#[test]
fn quoting_survives() {
    let mut records = synthetic_corpus(3, 2);
    records[0].text = "She said, \"no\"\nand left".into();
    records[1].text = "comma, separated; text".into();
    let mut buf = Vec::new();
    write_corpus_csv(&records, &mut buf, CorpusFormat::GoldOnly).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.csv");
    std::fs::write(&path, &buf).unwrap();
    let back = load_corpus(&path, CorpusFormat::GoldOnly).unwrap();
    assert_eq!(back[0].text, records[0].text);
    assert_eq!(back[1].text, records[1].text);
}
