use proptest::prelude::*;
use xlsm_core::corpus::{AlignedStoryPair, Story, UnitSentence};
use xlsm_core::interleave::{interleave_pair, pack, SequenceKind, Span, StreamSampler, TrainSequence};
use xlsm_core::synthlang::{generate_parallel_corpus, SynthConfig};

fn story(id: &str, lang: &str, sents: &[Vec<u32>]) -> Story {
    let sentences = sents
        .iter()
        .enumerate()
        .map(|(i, u)| UnitSentence {
            story_id: id.into(),
            lang: lang.into(),
            idx: i as u32 + 1,
            units: u.clone(),
        })
        .collect();
    Story::new(id.into(), lang.into(), sentences).unwrap()
}

fn sentences(n: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..64, 1..7), n)
}

fn aligned_stories() -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<Vec<u32>>, bool)> {
    (1usize..10).prop_flat_map(|n| (sentences(n), sentences(n), any::<bool>()))
}

fn sequence(tokens: Vec<u32>) -> TrainSequence {
    let len = tokens.len();
    TrainSequence {
        tokens,
        spans: vec![Span {
            story_id: "s".into(),
            lang: "en".into(),
            idx: 0,
            start: 0,
            len,
        }],
        kind: SequenceKind::Monolingual,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interleaving_alternates_aligned_sentences((en, fr, fr_leads) in aligned_stories()) {
        let a = story("s", "en", &en);
        let b = story("s", "fr", &fr);
        let lead = if fr_leads { "fr" } else { "en" };
        let seq = interleave_pair(AlignedStoryPair { l1_story: &a, l2_story: &b }, lead).unwrap();

        let (first, second) = if fr_leads { (&fr, &en) } else { (&en, &fr) };
        let mut expected = Vec::new();
        for (x, y) in first.iter().zip(second.iter()) {
            expected.extend_from_slice(x);
            expected.extend_from_slice(y);
        }
        prop_assert_eq!(&seq.tokens, &expected);
        prop_assert_eq!(seq.kind, SequenceKind::Interleaved);
        prop_assert!(seq.spans_tile());
        prop_assert_eq!(seq.spans.len(), 2 * en.len());
        for (k, span) in seq.spans.iter().enumerate() {
            let (lang, src) = if k % 2 == 0 { (lead, first) } else { (if fr_leads { "en" } else { "fr" }, second) };
            prop_assert_eq!(&span.lang, lang);
            prop_assert_eq!(span.idx as usize, k / 2 + 1);
            prop_assert_eq!(&seq.tokens[span.start..span.start + span.len], &src[k / 2][..]);
        }
    }

    #[test]
    fn packing_conserves_tokens(
        lens in prop::collection::vec(1usize..300, 0..40),
        ctx in 2usize..200,
        row_count in 0usize..60,
        bos in any::<bool>(),
    ) {
        let mut next = 0u32;
        let stream: Vec<TrainSequence> = lens
            .iter()
            .map(|&n| {
                let t: Vec<u32> = (next..next + n as u32).collect();
                next += n as u32;
                sequence(t)
            })
            .collect();
        let bos_id = bos.then_some(u32::MAX);
        let mut pulled = Vec::new();
        let batch = pack(stream.into_iter().inspect(|s| pulled.extend_from_slice(&s.tokens)), ctx, row_count, bos_id).unwrap();
        prop_assert!(next as usize >= pulled.len());

        prop_assert!(batch.rows.len() <= row_count);
        let mut emitted = Vec::new();
        for row in &batch.rows {
            prop_assert_eq!(row.tokens.len(), ctx);
            let body = if bos {
                prop_assert_eq!(row.tokens[0], u32::MAX);
                &row.tokens[1..]
            } else {
                &row.tokens[..]
            };
            prop_assert_eq!(row.lang_tokens.iter().map(|(_, n)| n).sum::<usize>(), body.len());
            emitted.extend_from_slice(body);
        }
        emitted.extend_from_slice(&batch.carryover);
        prop_assert_eq!(emitted, pulled);
        let per_row = ctx - usize::from(bos);
        if batch.rows.len() < row_count {
            prop_assert!(batch.carryover.len() < per_row);
        }
    }
}

#[test]
fn sampler_hits_the_configured_ratios() {
    let corpus = generate_parallel_corpus(&SynthConfig {
        story_count: 50,
        ..SynthConfig::default()
    })
    .unwrap();
    let n = 10_000;
    let mut s = StreamSampler::new(&corpus, 0.5, 0.5, 3).unwrap();
    let draws: Vec<_> = (0..n).map(|_| s.next_draw()).collect();
    let inter = draws.iter().filter(|d| d.kind == SequenceKind::Interleaved).count() as f64 / n as f64;
    assert!((0.48..=0.52).contains(&inter), "interleaved fraction {inter}");

    let mut s = StreamSampler::new(&corpus, 0.0, 0.8, 4).unwrap();
    let en = (0..n).filter(|_| s.next_draw().leading_lang == "en").count() as f64 / n as f64;
    assert!((0.78..=0.82).contains(&en), "english fraction {en}");
}
