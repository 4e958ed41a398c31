use std::collections::BTreeSet;
use std::sync::Arc;

use super::*;
use crate::clustering::DistanceMatrix;
use crate::corpus::{ingest_corpus, segment_chunks, RawRecord, SegmentParams};
use crate::gateway::{FnProvider, Mode, ProviderError, StubEmbedder, Transcript};

const MECHANICS: &str =
    "Mechanics will have to wait until electromagnetism is figured out; it will take some more time.";

fn table1() -> Corpus {
    let lines = [
        ("User-4235", "user", "Can you also include mechanics experiments?"),
        ("Designer-1", "designer", "For example, you can see the corresponding circuit diagram after connecting the physical diagram, or vice versa"),
        ("Designer-1", "designer", MECHANICS),
        ("User-4232", "user", "Oh, this is nice"),
        ("Designer-1", "designer", "Hope to figure out electromagnetism before the end of the year"),
        ("User-4235", "user", "The 3D effect of your software is very good"),
        ("Designer-1", "designer", "With bidirectional conversion, you can directly do problems in the application"),
        ("User-4234", "user", "It's already starting to take shape [Emoji]"),
        ("Designer-1", "designer", "For example, see the circuit diagram to connect the physical diagram, or vice versa"),
        ("User-4232", "user", "Don't aim for completeness, it should be categorized and refined one by one"),
    ];
    let records: Vec<RawRecord> = lines
        .iter()
        .enumerate()
        .map(|(i, (a, r, t))| RawRecord::new(&format!("m{i:02}"), a, r, 1_600_000_000 + 60 * i as i64, t))
        .collect();
    let mut c = segment_chunks(ingest_corpus(&records).unwrap(), &SegmentParams::default());
    c.metadata.insert("research_question".into(), "How did an online community emerge?".into());
    c.metadata.insert("context".into(), "A chat channel of a physics simulation app.".into());
    c
}

fn gateway(f: impl Fn(&PromptRequest) -> String + Send + Sync + 'static) -> Gateway {
    Gateway::new(
        Transcript::in_memory(Mode::Record, []),
        Some(Arc::new(FnProvider(move |r: &PromptRequest| {
            Ok::<_, ProviderError>(f(r))
        }))),
        Arc::new(StubEmbedder::default()),
    )
}

fn definitions_or(r: &PromptRequest, other: impl FnOnce() -> String) -> String {
    if r.tag.starts_with("define:") {
        "A definition.".into()
    } else {
        other()
    }
}

fn ctx(c: &Corpus) -> PromptContext {
    PromptContext::from_metadata(&c.metadata).unwrap()
}

fn labels(run: &CoderRun) -> BTreeSet<String> {
    run.codebook.codes.iter().map(|c| c.label.clone()).collect()
}

#[test]
fn item_prompts_carry_role_question_and_marked_chunk() {
    let c = table1();
    let cx = ctx(&c);
    let m = &c.messages[2];
    let item = build_prompt(Approach::ItemLevel, Unit::Message(m), &c, &cx).unwrap();
    assert!(item.system_text.contains(EXPERT_ROLE));
    assert!(item.system_text.contains("How did an online community emerge?"));
    assert!(item.system_text.contains("A chat channel of a physics simulation app."));
    assert!(item.user_text.contains(MECHANICS));
    for other in &c.messages {
        assert!(item.user_text.contains(&other.text), "chunk context missing {}", other.id);
    }
    assert!(!item.user_text.to_lowercase().contains("verb phrase"));
    let verb = build_prompt(Approach::ItemVerb, Unit::Message(m), &c, &cx).unwrap();
    assert!(verb.user_text.to_lowercase().contains("verb phrases for labels explicitly"));
    assert_eq!(verb.tag, "item_verb:m02");
}

#[test]
fn structured_prompt_asks_for_two_levels() {
    let c = table1();
    let r = build_prompt(Approach::ChunkStructured, Unit::Chunk(&c.chunks[0]), &c, &ctx(&c)).unwrap();
    assert!(r.user_text.contains("more than one level of concepts"));
    assert!(r.user_text.contains("parent"));
}

#[test]
fn unit_kind_must_match_approach() {
    let c = table1();
    let e = build_prompt(Approach::ItemLevel, Unit::Chunk(&c.chunks[0]), &c, &ctx(&c));
    assert!(matches!(e, Err(CoderError::UnitMismatch(Approach::ItemLevel))));
}

#[test]
fn missing_metadata_is_reported() {
    let mut c = table1();
    c.metadata.remove("context");
    assert!(matches!(
        PromptContext::from_metadata(&c.metadata),
        Err(CoderError::MissingMetadata(k)) if k == "context"
    ));
}

#[test]
fn chunk_coder_attaches_future_plans_to_the_chunk() {
    let c = table1();
    let g = gateway(|r| {
        definitions_or(r, || {
            r#"[{"label": "future plans", "definition": "Designers describing what comes next."},
                {"label": "praise for the app", "definition": "Users complimenting the software.", "message_index": [4, 6]}]"#.into()
        })
    });
    let run = run_chunk_coder(&c, false, &ctx(&c), &g, "chunk_level_test").unwrap();
    let fp = run.codebook.codes.iter().find(|c| c.label == "future plans").unwrap();
    assert_eq!(fp.example_message_ids.len(), c.messages.len());
    let praise = run.codebook.codes.iter().find(|c| c.label == "praise for the app").unwrap();
    assert_eq!(praise.example_message_ids, vec!["m03", "m05"]);
    assert!(run.failures.is_empty());
}

#[test]
fn structured_coder_emits_theme_over_children() {
    let c = table1();
    let g = gateway(|r| {
        definitions_or(r, || {
            r#"[{"label": "feature requests", "definition": "d", "message_index": 1, "parent": "product development"},
                {"label": "development roadmap", "definition": "d", "message_index": [3, 5], "parent": "product development"}]"#.into()
        })
    });
    let run = run_chunk_coder(&c, true, &ctx(&c), &g, "chunk_structured_test").unwrap();
    let cb = &run.codebook;
    let theme = cb.codes.iter().find(|c| c.is_theme).unwrap();
    assert_eq!(theme.label, "product development");
    assert_eq!(theme.example_message_ids, vec!["m00", "m02", "m04"]);
    let children: Vec<&crate::codebook::Code> = cb.codes.iter().filter(|c| !c.is_theme).collect();
    assert_eq!(children.len(), 2);
    assert!(children.iter().all(|c| c.parent.as_deref() == Some("product development")));
    // the timeline message is inside the theme but no code targets it alone
    assert_eq!(run.codebook.codes.len(), 3);
}

#[test]
fn item_coder_reproduces_table3_rows() {
    let c = table1();
    let script = |verb: bool| {
        move |r: &PromptRequest| {
            definitions_or(r, || match (verb, r.tag.as_str()) {
                (true, "item_verb:m02") => r#"[{"label":"manage user expectations","definition":"d"},
                    {"label":"explain current focus","definition":"d"},
                    {"label":"set timeline for mechanics experiments","definition":"d"}]"#.into(),
                (false, "item_level:m02") => r#"[{"label":"development timeline","definition":"d"},
                    {"label":"feature prioritization","definition":"d"},
                    {"label":"subject specific tools","definition":"d"},
                    {"label":"user feedback","definition":"d"}]"#.into(),
                _ => "[]".into(),
            })
        }
    };
    let verb = run_item_coder(&c, true, &ctx(&c), &gateway(script(true)), "v").unwrap();
    let want: BTreeSet<String> = ["manage user expectations", "explain current focus", "set timeline for mechanics experiments"]
        .map(String::from)
        .into();
    assert_eq!(labels(&verb), want);
    assert!(verb.codebook.codes.iter().all(|c| c.example_message_ids == vec!["m02"]));

    let item = run_item_coder(&c, false, &ctx(&c), &gateway(script(false)), "i").unwrap();
    let l = labels(&item);
    assert!(l.contains("development timeline") && l.contains("feature prioritization"));
    assert_eq!(item.codebook.approach, Some(Approach::ItemLevel));
}

#[test]
fn empty_answers_and_empty_corpus_give_empty_codebooks() {
    let mut c = table1();
    c.messages.truncate(1);
    c.chunks = vec![crate::corpus::Chunk {
        id: "c000".into(),
        message_ids: vec!["m00".into()],
    }];
    let g = gateway(|_| "[]".into());
    let run = run_chunk_coder(&c, false, &ctx(&c), &g, "x").unwrap();
    assert!(run.codebook.codes.is_empty());
    assert!(run.failures.is_empty());

    let mut empty = table1();
    empty.messages.clear();
    empty.chunks.clear();
    let run = run_item_coder(&empty, false, &ctx(&empty), &g, "x").unwrap();
    assert!(run.codebook.codes.is_empty());
    assert_eq!(g.upstream_calls(), 1);
}

#[test]
fn unparseable_output_is_reprompted_once_then_skipped() {
    let c = table1();
    let g = gateway(|r| {
        definitions_or(r, || match r.tag.as_str() {
            "item_level:m00" => "I cannot answer that.".into(),
            "item_level:m01" => r#"[{"label":"diagram conversion","definition":"d"}]"#.into(),
            "item_level:m01:retry" => unreachable!(),
            t if t == "item_level:m03" => "nope".into(),
            "item_level:m03:retry" => r#"[{"label":"positive reaction","definition":"d"}]"#.into(),
            t if t.ends_with(":retry") => "still prose".into(),
            _ => "[]".into(),
        })
    });
    let run = run_item_coder(&c, false, &ctx(&c), &g, "x").unwrap();
    assert_eq!(
        labels(&run),
        ["diagram conversion", "positive reaction"].map(String::from).into()
    );
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].unit_id, "m00");
    let retries: Vec<String> = g
        .sent_prompts()
        .into_iter()
        .filter(|r| r.tag.ends_with(":retry"))
        .map(|r| r.tag)
        .collect();
    assert_eq!(retries.len(), 2);
    assert!(g
        .sent_prompts()
        .iter()
        .filter(|r| r.tag.ends_with(":retry"))
        .all(|r| r.user_text.ends_with(REPROMPT_SUFFIX)));
}

#[test]
fn unsegmented_corpus_is_rejected() {
    let mut c = table1();
    c.chunks.clear();
    for m in &mut c.messages {
        m.chunk_id = None;
    }
    let g = gateway(|_| "[]".into());
    assert!(matches!(
        run_item_coder(&c, false, &ctx(&c), &g, "x"),
        Err(CoderError::NotSegmented)
    ));
}

#[test]
fn no_prompt_contains_a_generated_code() {
    let c = table1();
    let g = gateway(|r| {
        definitions_or(r, || format!(r#"[{{"label":"zq code for {}","definition":"d"}}]"#, r.tag))
    });
    let cx = ctx(&c);
    let first = run_item_coder(&c, false, &cx, &g, "a").unwrap();
    run_chunk_coder(&c, true, &cx, &g, "b").unwrap();
    let codes: Vec<String> = first.codebook.codes.iter().map(|c| c.label.clone()).collect();
    for p in g.sent_prompts().iter().filter(|p| !p.tag.starts_with("define:")) {
        for code in &codes {
            assert!(!p.user_text.contains(code.as_str()) && !p.system_text.contains(code.as_str()));
        }
    }
}

fn synthetic(groups: &[(&[&str], usize)]) -> (Corpus, Vec<usize>) {
    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut i = 0;
    for (g, (vocab, n)) in groups.iter().enumerate() {
        for k in 0..*n {
            let words: Vec<&str> = (0..vocab.len()).map(|j| vocab[(j + k) % vocab.len()]).collect();
            records.push(RawRecord::new(&format!("s{i:03}"), "u", "user", i as i64 * 60, &words.join(" ")));
            truth.push(g);
            i += 1;
        }
    }
    let mut c = segment_chunks(ingest_corpus(&records).unwrap(), &SegmentParams::default());
    c.metadata.insert("research_question".into(), "q".into());
    c.metadata.insert("context".into(), "c".into());
    (c, truth)
}

#[test]
fn topic_coder_recovers_two_disjoint_groups() {
    let a: &[&str] = &["circuit", "voltage", "resistor", "battery", "current"];
    let b: &[&str] = &["classroom", "teacher", "lesson", "homework", "students"];
    let (c, truth) = synthetic(&[(a, 6), (b, 5)]);

    // Oracle: exact pairwise stub distances must separate the generator's
    // groups; any threshold strictly between the widest within-group gap
    // and the narrowest between-group gap yields exactly those groups.
    let stub = StubEmbedder::default();
    let v: Vec<Vec<f32>> = c.messages.iter().map(|m| stub.embed_one(&m.text)).collect();
    let d = DistanceMatrix::cosine(&v);
    let (mut within, mut between) = (0f64, f64::MAX);
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            if truth[i] == truth[j] {
                within = within.max(d.get(i, j));
            } else {
                between = between.min(d.get(i, j));
            }
        }
    }
    assert!(within < between, "generator groups are not separable: {within} vs {between}");
    let params = TopicParams {
        distance_threshold: (within + between) / 2.0,
        ..TopicParams::default()
    };

    let g = gateway(|r| definitions_or(r, || format!("label {}", r.tag)));
    let run = run_topic_coder(&c, &params, &ctx(&c), &g, "topic").unwrap();
    assert_eq!(run.topics.len(), 2);
    for (t, group) in run.topics.iter().zip(0..) {
        let want: Vec<String> = (0..truth.len())
            .filter(|&i| truth[i] == group)
            .map(|i| c.messages[i].id.clone())
            .collect();
        assert_eq!(t.message_ids, want);
        assert!(t.exemplar_ids.len() <= 5);
    }
    assert!(run.topics[0].keywords.iter().all(|k| a.contains(&k.as_str())));
    assert_eq!(run.codebook.codes.len(), 2);
    assert_eq!(run.codebook.codes[0].label, "label topic_model:t000");
    assert_eq!(run.codebook.codes[0].example_message_ids.len(), 6);
}

#[test]
fn topic_prompt_has_keywords_exemplars_and_study_framing() {
    let a: &[&str] = &["circuit", "voltage", "resistor", "battery"];
    let (c, _) = synthetic(&[(a, 7)]);
    let g = gateway(|r| definitions_or(r, || "\"circuit building\"".into()));
    let run = run_topic_coder(&c, &TopicParams::default(), &ctx(&c), &g, "t").unwrap();
    assert_eq!(labels(&run), ["circuit building".to_string()].into());
    let p = g
        .sent_prompts()
        .into_iter()
        .find(|p| p.tag == "topic_model:t000")
        .unwrap();
    assert!(p.system_text.contains(EXPERT_ROLE));
    assert!(p.user_text.contains("circuit"));
    assert_eq!(p.user_text.matches("\n- [u]").count(), 5);
}

#[test]
fn oversized_topic_needs_review() {
    let a: &[&str] = &["electromagnetism", "update", "release", "schedule"];
    let (c, _) = synthetic(&[(a, 34)]);
    let g = gateway(|r| definitions_or(r, || "release schedule".into()));
    let run = run_topic_coder(&c, &TopicParams::default(), &ctx(&c), &g, "t").unwrap();
    assert_eq!(run.topics.len(), 1);
    assert_eq!(run.topics[0].message_ids.len(), 34);
    assert!(run.topics[0].needs_review);
    assert!(run.codebook.codes[0].needs_review);
    let small = TopicParams {
        oversized_threshold: 34,
        ..TopicParams::default()
    };
    let run = run_topic_coder(&c, &small, &ctx(&c), &g, "t").unwrap();
    assert!(!run.topics[0].needs_review);
}

#[test]
fn small_clusters_are_outliers_and_tiny_corpora_fail() {
    let a: &[&str] = &["circuit", "voltage", "resistor"];
    let (c, _) = synthetic(&[(a, 3)]);
    let g = gateway(|_| "unused".into());
    let run = run_topic_coder(&c, &TopicParams::default(), &ctx(&c), &g, "t").unwrap();
    assert!(run.codebook.codes.is_empty());
    assert_eq!(g.upstream_calls(), 0);

    let (one, _) = synthetic(&[(a, 1)]);
    assert!(matches!(
        run_topic_coder(&one, &TopicParams::default(), &ctx(&one), &g, "t"),
        Err(CoderError::TooFewMessages(1))
    ));
}

#[test]
fn class_based_weights_prefer_distinctive_terms() {
    let w = class_term_weights(&[vec!["circuit shared circuit", "shared"], vec!["lesson shared"]]);
    assert_eq!(w[0][0], ("circuit".to_string(), 1.0));
    let shared = w[0].iter().find(|(t, _)| t == "shared").unwrap().1;
    assert!((shared - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(w[1][0].0, "lesson");
    assert_eq!(tokenize("It's THE Circuit, a 3D one!"), vec!["circuit", "3d", "one"]);
}

#[test]
fn approach_names_resolve() {
    assert_eq!(Approach::resolve("chunk", true, false).unwrap(), Approach::ChunkStructured);
    assert_eq!(Approach::resolve("item", false, true).unwrap(), Approach::ItemVerb);
    assert_eq!("topic_model".parse::<Approach>().unwrap(), Approach::TopicModel);
    assert!("bertopic".parse::<Approach>().is_err());
    for a in Approach::ALL {
        assert_eq!(a.as_str().parse::<Approach>().unwrap(), a);
    }
}
