//! Leave-one-out splits with sampled evaluation negatives, and the binary
//! split-file format that materializes them.
//!
//! File layout, integers little-endian:
//!
//! ```text
//! magic    b"MRIFDST1"
//! u32      version (1)
//! u64      sampling seed
//! u32      k-core parameter the log was filtered with
//! u32      max sequence length the split targets
//! u32      negatives per user
//! u32      user count
//! u32      item count (dense vocabulary = count + 1, id 0 is padding)
//! [u8;32]  sha-256 of the source file (zeros when not derived from a file)
//! strings  user external ids, then item external ids (u32 length + UTF-8)
//! per user u32 train length, train items, heldout item, negatives
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, InteractionLog};

const MAGIC: &[u8; 8] = b"MRIFDST1";
const VERSION: u32 = 1;

/// Where a split came from; recorded in the file header so downstream runs
/// can detect reuse of an identical (source, k, seed) pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source_hash: [u8; 32],
    pub k_core: u32,
}

/// One user's split: chronological training items, the held-out last item,
/// and the fixed evaluation negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub train: Vec<u32>,
    pub heldout: u32,
    pub eval_negatives: Vec<u32>,
}

impl UserRecord {
    /// Every item the user ever touched (train + heldout), as a set.
    pub fn full_item_set(&self) -> HashSet<u32> {
        let mut set: HashSet<u32> = self.train.iter().copied().collect();
        set.insert(self.heldout);
        set
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub users: Vec<UserRecord>,
    pub user_ids: Vec<String>,
    /// External id of dense item index `i + 1`.
    pub item_ids: Vec<String>,
    pub max_seq_len: usize,
    pub num_negatives: usize,
    pub seed: u64,
    pub provenance: Provenance,
}

impl SequenceDataset {
    /// Dense item vocabulary size including the padding id.
    pub fn vocab_size(&self) -> usize {
        self.item_ids.len() + 1
    }
}

/// Build per-user chronological sequences, hold out each user's last item,
/// and draw `num_negatives` evaluation negatives per user uniformly without
/// replacement from the items outside the user's full sequence.
///
/// Timestamp ties keep input-file order (stable sort). The same `(log,
/// seed)` pair always produces a byte-identical dataset.
pub fn build_split(
    log: &InteractionLog,
    max_seq_len: usize,
    num_negatives: usize,
    seed: u64,
    provenance: Provenance,
) -> Result<SequenceDataset, DataError> {
    let vocab_size = log.items.len() + 1;
    let mut per_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); log.users.len()];
    for event in &log.interactions {
        per_user[event.user as usize].push((event.timestamp, event.item));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::with_capacity(per_user.len());
    for (index, mut events) in per_user.into_iter().enumerate() {
        if events.len() < 2 {
            return Err(DataError::UserTooShort {
                user: log.users[index].clone(),
            });
        }
        events.sort_by_key(|(ts, _)| *ts); // stable: ties keep input order
        let sequence: Vec<u32> = events.into_iter().map(|(_, item)| item).collect();
        let heldout = *sequence.last().unwrap();
        let train = sequence[..sequence.len() - 1].to_vec();

        let excluded: HashSet<u32> = sequence.iter().copied().collect();
        let available = vocab_size - 1 - excluded.len();
        if available < num_negatives {
            return Err(DataError::InsufficientNegatives {
                user: log.users[index].clone(),
                needed: num_negatives,
            });
        }
        let mut negatives = Vec::with_capacity(num_negatives);
        let mut drawn: HashSet<u32> = HashSet::new();
        while negatives.len() < num_negatives {
            let candidate = rng.gen_range(1..vocab_size as u32);
            if !excluded.contains(&candidate) && drawn.insert(candidate) {
                negatives.push(candidate);
            }
        }

        users.push(UserRecord {
            train,
            heldout,
            eval_negatives: negatives,
        });
    }

    Ok(SequenceDataset {
        users,
        user_ids: log.users.clone(),
        item_ids: log.items.clone(),
        max_seq_len,
        num_negatives,
        seed,
        provenance,
    })
}

/// Uniform draw from the items outside `excluded` (never the padding id 0).
/// The caller must guarantee the vocabulary is strictly larger than the
/// excluded set.
pub fn sample_train_negative<R: Rng>(
    excluded: &HashSet<u32>,
    vocab_size: usize,
    rng: &mut R,
) -> u32 {
    debug_assert!(vocab_size > excluded.len() + 1);
    loop {
        let candidate = rng.gen_range(1..vocab_size as u32);
        if !excluded.contains(&candidate) {
            return candidate;
        }
    }
}

// ── Binary materialization ──────────────────────────────────────────────────

impl SequenceDataset {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.provenance.k_core.to_le_bytes())?;
        out.write_all(&(self.max_seq_len as u32).to_le_bytes())?;
        out.write_all(&(self.num_negatives as u32).to_le_bytes())?;
        out.write_all(&(self.users.len() as u32).to_le_bytes())?;
        out.write_all(&(self.item_ids.len() as u32).to_le_bytes())?;
        out.write_all(&self.provenance.source_hash)?;
        for id in self.user_ids.iter().chain(&self.item_ids) {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        for user in &self.users {
            out.write_all(&(user.train.len() as u32).to_le_bytes())?;
            for &item in &user.train {
                out.write_all(&item.to_le_bytes())?;
            }
            out.write_all(&user.heldout.to_le_bytes())?;
            for &item in &user.eval_negatives {
                out.write_all(&item.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut input = BufReader::new(File::open(path)?);
        let bad = |msg: &str| DataError::BadSplitFile(msg.to_string());

        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("wrong magic bytes"));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(DataError::BadSplitFile(format!(
                "unsupported version {version}"
            )));
        }
        let seed = read_u64(&mut input)?;
        let k_core = read_u32(&mut input)?;
        let max_seq_len = read_u32(&mut input)? as usize;
        let num_negatives = read_u32(&mut input)? as usize;
        let num_users = read_u32(&mut input)? as usize;
        let num_items = read_u32(&mut input)? as usize;
        let mut source_hash = [0u8; 32];
        input.read_exact(&mut source_hash)?;

        let read_string = |input: &mut BufReader<File>| -> Result<String, DataError> {
            let len = read_u32(input)? as usize;
            let mut buf = vec![0u8; len];
            input.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|_| bad("id not UTF-8"))
        };
        let user_ids: Vec<String> = (0..num_users)
            .map(|_| read_string(&mut input))
            .collect::<Result<_, _>>()?;
        let item_ids: Vec<String> = (0..num_items)
            .map(|_| read_string(&mut input))
            .collect::<Result<_, _>>()?;

        let vocab = num_items as u32 + 1;
        let check = |item: u32| -> Result<u32, DataError> {
            if item == 0 || item >= vocab {
                Err(bad("item index out of vocabulary range"))
            } else {
                Ok(item)
            }
        };
        let mut users = Vec::with_capacity(num_users);
        for _ in 0..num_users {
            let train_len = read_u32(&mut input)? as usize;
            let mut train = Vec::with_capacity(train_len);
            for _ in 0..train_len {
                train.push(check(read_u32(&mut input)?)?);
            }
            let heldout = check(read_u32(&mut input)?)?;
            let mut eval_negatives = Vec::with_capacity(num_negatives);
            for _ in 0..num_negatives {
                eval_negatives.push(check(read_u32(&mut input)?)?);
            }
            users.push(UserRecord {
                train,
                heldout,
                eval_negatives,
            });
        }

        Ok(Self {
            users,
            user_ids,
            item_ids,
            max_seq_len,
            num_negatives,
            seed,
            provenance: Provenance {
                source_hash,
                k_core,
            },
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, std::io::Error> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
