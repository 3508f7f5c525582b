//! Regenerates the bundled reference fixture under `fixtures/`:
//! 460 labeled documents, their dimension scores and the judge replies
//! that produce those scores.
//!
//!     cargo run -p odis --example gen_fixture

use std::path::Path;

use odis::jsonl::to_jsonl;
use odis::labeling::MockReply;
use odis::synth::generate;
use odis_core::default_dimension_registry;

const ROWS: usize = 460;
const SEED: u64 = 460;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;
    let corpus = generate(SEED, ROWS * 4);
    let dims = default_dimension_registry();
    let mut replies = Vec::new();
    for s in &corpus.reference_scores {
        for (d, v) in dims.iter().zip(&s.values) {
            replies.push(MockReply {
                id: s.doc_id.clone(),
                dimension: d.name.clone(),
                reply: format!("The extract was assessed against the rubric.\n{} {v}", d.score_tag),
            });
        }
    }
    std::fs::write(dir.join("reference.jsonl"), to_jsonl(&corpus.reference))?;
    std::fs::write(dir.join("reference_scores.jsonl"), to_jsonl(&corpus.reference_scores))?;
    std::fs::write(dir.join("mock_replies.jsonl"), to_jsonl(&replies))?;
    println!("wrote {} rows to {}", corpus.reference.len(), dir.display());
    Ok(())
}
