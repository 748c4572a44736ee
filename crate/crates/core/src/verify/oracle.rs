//! Sequential ground truth for reconstructing a sublist from its base
//! contents plus the updates applied at the source.

use serde::{Deserialize, Serialize};

use crate::core_list::{Ident, ServerId};

/// One application node of a sublist as seen by equality checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeqEntry {
    pub key: u64,
    pub ts: u64,
    pub sid: ServerId,
    pub deleted: bool,
}

impl SeqEntry {
    pub fn ident(&self) -> Ident {
        Ident {
            sid: self.sid,
            ts: self.ts,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SublistEvent {
    /// `prev == None` means the insert was at the subhead.
    Insert { prev: Option<Ident>, item: SeqEntry },
    Delete { target: Ident },
}

/// Applies `events` in order to `base`.
pub fn replay_oracle(base: &[SeqEntry], events: &[SublistEvent]) -> Result<Vec<SeqEntry>, String> {
    let mut seq = base.to_vec();
    let find = |seq: &[SeqEntry], id: Ident| seq.iter().position(|e| e.ident() == id);
    for ev in events {
        match *ev {
            SublistEvent::Insert { prev, item } => {
                let at = match prev {
                    None => 0,
                    Some(p) => find(&seq, p).ok_or_else(|| format!("insert after unknown {p:?}"))? + 1,
                };
                if find(&seq, item.ident()).is_some() {
                    return Err(format!("duplicate identity {:?}", item.ident()));
                }
                seq.insert(at, item);
            }
            SublistEvent::Delete { target } => {
                let i = find(&seq, target).ok_or_else(|| format!("delete of unknown {target:?}"))?;
                seq[i].deleted = true;
            }
        }
    }
    Ok(seq)
}
