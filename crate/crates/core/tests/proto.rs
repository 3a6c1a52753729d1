//! Message round-trips, including a 31-universe partial result, and framing
//! over arbitrarily chunked byte streams.

use colflow::bench::{default_post_spec, generate_columns};
use colflow::colstore::{self, write_dataset};
use colflow::engine::{run_local, EntryRange, Mode, PartialResult};
use colflow::graph::build;
use colflow::proto::{decode, encode, write_message, FrameDecoder, Message, PlanKind, Submit, TaskMode};
use proptest::prelude::*;

fn thirty_one_universes() -> PartialResult {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.col");
    write_dataset(&path, &generate_columns(2000, 3), 500).unwrap();
    let uri = path.to_string_lossy().into_owned();
    let spec = default_post_spec(std::slice::from_ref(&uri));
    let schema = colstore::open(&uri).unwrap().handle().schema.clone();
    let graph = build(&spec, &schema).unwrap();
    run_local(&graph, &[uri], 1).unwrap()
}

#[test]
fn result_with_31_universes_round_trips_bit_exact() {
    let partial = thirty_one_universes();
    assert_eq!(partial.results.labels().len(), 31);
    let msg = Message::Result {
        task_id: 12,
        t_total: 0.25,
        partial,
    };
    let bytes = encode(&msg).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back, msg);
    assert_eq!(encode(&back).unwrap(), bytes);
}

fn sample_messages() -> Vec<Message> {
    vec![
        Message::Register {
            worker: "w0".into(),
            slots: 4,
        },
        Message::Graph {
            graph_id: 3,
            spec: r#"{"dataset": ["a.col"], "stages": [{"op": "count", "name": "n"}]}"#.into(),
        },
        Message::Task {
            task_id: 9,
            graph_id: 3,
            range: EntryRange::new("colsrv://127.0.0.1:1/a.col", 0, 1000),
            mode: TaskMode::Engine(Mode::OnlyUniverse("jesUp".into())),
            attempt: 2,
        },
        Message::Fail {
            task_id: 9,
            error: "range out of bounds".into(),
        },
        Message::Heartbeat { worker: "w0".into() },
        Message::Shutdown,
        Message::Submit(Submit {
            run_id: "r1".into(),
            spec: "{}".into(),
            plan: PlanKind::PerFile,
            mode: TaskMode::Legacy {
                payload_uri: "payload.bin".into(),
                payload_bytes: 1 << 20,
                passes: vec![Mode::WeightPass, Mode::OnlyUniverse("metUp".into())],
            },
            min_workers: 3,
            keep_partials: true,
            max_retries: 0,
            max_concurrent: 2,
        }),
        Message::Result {
            task_id: 1,
            t_total: 1.5,
            partial: PartialResult {
                events_processed: 10,
                snapshot_parts: vec!["skim.part1.col".into()],
                ..Default::default()
            },
        },
    ]
}

proptest! {
    #[test]
    fn chunked_stream_decodes_in_order(cuts in prop::collection::vec(1usize..64, 1..200)) {
        let msgs = sample_messages();
        let mut stream = Vec::new();
        for m in &msgs {
            write_message(&mut stream, m).unwrap();
        }
        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut i = 0;
        while pos < stream.len() {
            let n = cuts[i % cuts.len()].min(stream.len() - pos);
            dec.push(&stream[pos..pos + n]);
            pos += n;
            i += 1;
            while let Some(m) = dec.next_message().unwrap() {
                out.push(m);
            }
        }
        prop_assert_eq!(out, msgs);
        prop_assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn register_round_trips(worker in "[a-z0-9-]{0,40}", slots in any::<u32>()) {
        let m = Message::Register { worker, slots };
        prop_assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn truncation_never_panics(cut in 0usize..200) {
        for m in sample_messages() {
            let bytes = encode(&m).unwrap();
            if cut < bytes.len() {
                prop_assert!(decode(&bytes[..cut]).is_err());
            }
        }
    }
}

#[test]
fn length_below_header_is_rejected() {
    for len in 0u32..4 {
        let mut b = len.to_le_bytes().to_vec();
        b.extend_from_slice(&[6, 0, 1, 0]);
        assert!(decode(&b).is_err());
    }
}
