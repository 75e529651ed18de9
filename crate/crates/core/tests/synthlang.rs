use xlsm_core::corpus::{load_corpus, save_corpus, validate_alignment};
use xlsm_core::synthlang::{generate_parallel_corpus, MarkovChain, SynthConfig, WordOrder};

/// Recovers (concept, language slot) from each n-gram of a sentence using
/// the block layout `[(2c+slot)g, (2c+slot)g + g)`.
fn decode(units: &[u32], g: u32) -> Vec<(u32, u32)> {
    assert_eq!(units.len() % g as usize, 0);
    units
        .chunks(g as usize)
        .map(|chunk| {
            let base = chunk[0];
            assert_eq!(base % g, 0, "n-gram does not start a block: {chunk:?}");
            let want: Vec<u32> = (base..base + g).collect();
            assert_eq!(chunk, &want[..]);
            (base / (2 * g), (base / g) % 2)
        })
        .collect()
}

fn check_order(order: WordOrder) {
    let cfg = SynthConfig {
        story_count: 100,
        l2_order: order,
        ..SynthConfig::default()
    };
    let corpus = generate_parallel_corpus(&cfg).unwrap();
    assert_eq!(corpus.alignments().len(), 100);
    let g = cfg.units_per_concept;
    for pair in corpus.pairs() {
        assert!(validate_alignment(pair).is_valid());
        for (a, b) in pair.l1_story.sentences.iter().zip(&pair.l2_story.sentences) {
            let da = decode(&a.units, g);
            let db = decode(&b.units, g);
            assert_eq!(da.len(), cfg.sentence_len as usize);
            assert!(da.iter().all(|&(c, slot)| slot == 0 && c < cfg.concept_count));
            assert!(db.iter().all(|&(c, slot)| slot == 1 && c < cfg.concept_count));
            let ca: Vec<u32> = da.iter().map(|x| x.0).collect();
            let mut cb: Vec<u32> = db.iter().map(|x| x.0).collect();
            if order == WordOrder::Reversed {
                cb.reverse();
            }
            assert_eq!(ca, cb);
        }
    }
}

#[test]
fn second_language_realizes_the_same_concepts() {
    check_order(WordOrder::Preserved);
    check_order(WordOrder::Reversed);
}

#[test]
fn transition_rows_are_distributions() {
    let chain = MarkovChain::from_config(&SynthConfig::default());
    for from in 0..chain.concept_count() as u32 {
        let total: f64 = (0..chain.concept_count() as u32).map(|to| chain.log_prob(from, to).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "row {from} sums to {total}");
    }
}

#[test]
fn corpus_survives_a_disk_round_trip() {
    let corpus = generate_parallel_corpus(&SynthConfig {
        story_count: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&corpus, dir.path()).unwrap();
    assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
    let dir2 = tempfile::tempdir().unwrap();
    save_corpus(&corpus, dir2.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir.path().join(&name)).unwrap();
        let b = std::fs::read(dir2.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between saves");
    }
}
