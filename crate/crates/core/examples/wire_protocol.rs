//! Encodes control messages, streams them in awkward chunk sizes and
//! decodes them again.

use colflow::engine::{EntryRange, Mode};
use colflow::proto::{encode, write_message, FrameDecoder, Message, TaskMode};

fn main() -> Result<(), colflow::proto::ProtoError> {
    let msgs = vec![
        Message::Register {
            worker: "w0".into(),
            slots: 2,
        },
        Message::Task {
            task_id: 4,
            graph_id: 1,
            range: EntryRange::new("colsrv://127.0.0.1:7070/data_000.col", 10_000, 20_000),
            mode: TaskMode::Engine(Mode::SinglePass),
            attempt: 1,
        },
        Message::Heartbeat { worker: "w0".into() },
        Message::Fail {
            task_id: 4,
            error: "range out of bounds".into(),
        },
        Message::Shutdown,
    ];
    let mut stream = Vec::new();
    for m in &msgs {
        let frame = encode(m)?;
        println!("kind {:>2}: {:>3} bytes, header {:02x?}", m.kind(), frame.len(), &frame[..8]);
        write_message(&mut stream, m)?;
    }
    let mut dec = FrameDecoder::new();
    let mut decoded = Vec::new();
    for chunk in stream.chunks(7) {
        dec.push(chunk);
        while let Some(m) = dec.next_message()? {
            decoded.push(m);
        }
    }
    println!("decoded {} messages from 7-byte chunks, identical: {}", decoded.len(), decoded == msgs);
    Ok(())
}
