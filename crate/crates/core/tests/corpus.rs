mod common;

use amralign::extract::{read_alignments, write_alignments, AlignmentKind, ExtractConfig, Standard};
use amralign::graph::{delinearize, parse_penman, serialize_penman, UnitId};
use amralign::matrix::{load_matrix_dir, parse_bundle, write_bundle_dir, write_bundle_embedded};
use amralign::metrics::{coverage, evaluate};
use amralign::pipeline::{align_corpus, align_sentence, Reduction};
use amralign::rules::RuleSet;
use common::{bundles, fixture, fixtures};

#[test]
fn corpus_is_large_enough() {
    assert!(fixtures().len() >= 30);
}

#[test]
fn penman_round_trip() {
    for f in fixtures() {
        let text = serialize_penman(&f.graph);
        assert_eq!(parse_penman(&text).unwrap(), f.graph, "{}", f.id);
    }
}

#[test]
fn linearization_round_trip() {
    for f in fixtures() {
        assert_eq!(delinearize(&f.lin).unwrap(), f.graph, "{}", f.id);
    }
}

#[test]
fn bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let bs = bundles(&fx[..5], 2, 2);
    for (id, b) in &bs {
        write_bundle_dir(b, dir.path().join(id)).unwrap();
        let back = parse_bundle(&write_bundle_embedded(b), None).unwrap();
        assert_eq!(back.decoder_tokens, b.decoder_tokens);
        for (x, y) in back.matrices.iter().zip(&b.matrices) {
            assert!(x.values.iter().zip(&y.values).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }
    let loaded = load_matrix_dir(dir.path()).unwrap();
    assert_eq!(loaded.keys().collect::<Vec<_>>(), bs.keys().collect::<Vec<_>>());
}

#[test]
fn synthetic_attention_recovers_gold_nodes() {
    let fx = fixtures();
    let bs = bundles(&fx, 6, 4);
    let cfg = ExtractConfig { standard: Standard::Leamr, rules: RuleSet::none() };
    for f in &fx {
        let s = f.sentence_input();
        let set = align_sentence(&s, &bs[&f.id], &Reduction::default(), &cfg).unwrap();
        let gold = f.gold(Standard::Leamr);
        let nodes = |set: &amralign::extract::AlignmentSet| {
            let mut v: Vec<(String, Vec<usize>)> = set
                .records
                .iter()
                .filter(|r| matches!(r.kind, AlignmentKind::Subgraph | AlignmentKind::Duplicate))
                .flat_map(|r| r.nodes.iter().map(|n| (n.clone(), r.tokens.clone())))
                .collect();
            v.sort();
            v
        };
        assert_eq!(nodes(&set), nodes(&gold), "{}", f.id);
    }
}

#[test]
fn leamr_output_covers_every_unit_and_round_trips() {
    let fx = fixtures();
    let bs = bundles(&fx, 4, 2);
    let sentences: Vec<_> = fx.iter().map(|f| f.sentence_input()).collect();
    for standard in [Standard::Leamr, Standard::Isi] {
        let cfg = ExtractConfig { standard, rules: RuleSet::all() };
        let sets = align_corpus(&sentences, &bs, &Reduction::default(), &cfg).unwrap();
        for (f, set) in fx.iter().zip(&sets) {
            assert_eq!(coverage(set, &f.graph), 100.0, "{}", f.id);
        }
        let text = write_alignments(&sets, standard);
        assert_eq!(read_alignments(&text, standard).unwrap(), sets);
        let again = align_corpus(&sentences, &bs, &Reduction::default(), &cfg).unwrap();
        assert_eq!(write_alignments(&again, standard), text);
    }
}

#[test]
fn gold_scores_itself_perfectly() {
    let fx = fixtures();
    let gold: Vec<_> = fx.iter().map(|f| f.gold(Standard::Leamr)).collect();
    let r = evaluate(&gold, &gold).unwrap();
    assert_eq!(r.exact.overall.f1, 100.0);
    assert_eq!(r.partial.overall.f1, 100.0);
    assert_eq!(r.coverage, 100.0);
    assert_eq!(r.span_f1, 100.0);
}

#[test]
fn merchant_person() {
    let f = fixture("lpp_1943.1209");
    let b = f.synthetic_bundle(4, 2, 7);
    let cfg = ExtractConfig { standard: Standard::Leamr, rules: RuleSet::none() };
    let set = align_sentence(&f.sentence_input(), &b, &Reduction::default(), &cfg).unwrap();
    let person = f.graph.node_index("p").unwrap();
    let path = &f.graph.unit_paths()[&UnitId::Node(person)];
    let rec = set.records.iter().find(|r| r.nodes.contains(path)).unwrap();
    assert_eq!(rec.tokens.iter().map(|&t| f.words[t].as_str()).collect::<Vec<_>>(), ["merchant"]);
}

#[test]
fn protect_reentrancies() {
    let f = fixture("fx.protect");
    let gold = f.gold(Standard::Leamr);
    assert_eq!(gold.reentrancy().count(), 2);
    let mentions: Vec<_> = gold.reentrancy().map(|r| r.mention).collect();
    assert_eq!(mentions, [Some(1), Some(2)]);
}
