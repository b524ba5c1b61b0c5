//! Users, their wallets and the payments they make.

use std::collections::{BTreeMap, HashMap, VecDeque};

use repchain_core::crypto::{Hasher, KeyPair, PublicKey, Scheme, Seed, SeededRng};
use repchain_core::types::{output_address, TxInput, TxOutput};
use repchain_core::{Address, Epoch, Tick, Transaction, TxId, Utxo, UtxoState};

/// Intents a user keeps waiting; further ones are dropped unsubmitted.
pub const MAX_QUEUE: usize = 4;
/// Amount tweaks tried to steer a payment's output shard.
pub const MAX_GRIND: u64 = 64;
pub const FEE: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Intent {
    /// Set when an earlier attempt was aborted and is being reissued.
    pub lineage: Option<u64>,
    pub cross: bool,
}

/// One payment across all its reissues.
#[derive(Clone, Debug)]
pub struct Lineage {
    pub id: u64,
    pub user: usize,
    pub valid: bool,
    pub cross: bool,
    pub first_submit: Tick,
    pub first_epoch: Epoch,
    pub current: Option<TxId>,
    pub committed_at: Option<Tick>,
    pub closed: bool,
    pub attempts: u32,
    /// Coins taken out of the wallet for the current attempt.
    pub coins: Vec<Utxo>,
}

#[derive(Debug)]
pub struct User {
    pub keys: KeyPair,
    /// Committed, unspent and not reserved by an open payment.
    pub available: BTreeMap<Address, Utxo>,
    pub queue: VecDeque<Intent>,
}

#[derive(Debug)]
pub struct Wallets {
    pub users: Vec<User>,
    by_key: HashMap<PublicKey, usize>,
    /// Signs forged spends of other people's coins.
    pub forger: KeyPair,
}

fn genesis_origin(user: usize, j: usize) -> TxId {
    let mut h = Hasher::new("repchain/sim-genesis");
    h.part(&(user as u64).to_le_bytes()).part(&(j as u64).to_le_bytes());
    TxId(h.finish())
}

impl Wallets {
    /// Seeded users, each with `per_user` genesis coins of `value`.
    pub fn generate(count: usize, per_user: usize, value: u64, scheme: Scheme, seed: Seed) -> (Self, Vec<Utxo>) {
        let mut users = Vec::with_capacity(count);
        let mut by_key = HashMap::with_capacity(count);
        let mut genesis = Vec::with_capacity(count * per_user);
        for u in 0..count {
            let keys = KeyPair::from_seed(scheme, seed.child(&format!("user/{u}")).0);
            by_key.insert(keys.public, u);
            let mut available = BTreeMap::new();
            for j in 0..per_user {
                let origin = genesis_origin(u, j);
                let utxo = Utxo {
                    address: output_address(origin, 0),
                    owner: keys.public,
                    value,
                    origin_tx: origin,
                    state: UtxoState::Unspent,
                };
                available.insert(utxo.address, utxo.clone());
                genesis.push(utxo);
            }
            users.push(User {
                keys,
                available,
                queue: VecDeque::new(),
            });
        }
        let forger = KeyPair::from_seed(scheme, seed.child("forger").0);
        (Wallets { users, by_key, forger }, genesis)
    }

    pub fn user_of(&self, owner: &PublicKey) -> Option<usize> {
        self.by_key.get(owner).copied()
    }

    /// Makes a freshly committed output spendable by its owner.
    pub fn credit(&mut self, utxo: &Utxo) {
        if let Some(u) = self.user_of(&utxo.owner) {
            self.users[u].available.insert(utxo.address, utxo.clone());
        }
    }

    /// Rebuilds every wallet from the ledgers' unspent coins.
    pub fn refresh<'a>(&mut self, unspent: impl IntoIterator<Item = &'a Utxo>) {
        for user in &mut self.users {
            user.available.clear();
        }
        for utxo in unspent {
            self.credit(utxo);
        }
    }

    /// Queues an intent, dropping it when the user is already backed up.
    /// Reissues always go first and are never dropped.
    pub fn enqueue(&mut self, user: usize, intent: Intent) -> bool {
        let q = &mut self.users[user].queue;
        if intent.lineage.is_some() {
            q.push_front(intent);
            true
        } else if q.len() < MAX_QUEUE {
            q.push_back(intent);
            true
        } else {
            false
        }
    }
}

fn signed_inputs(coins: &[Utxo], signer: &KeyPair, outputs: &[TxOutput]) -> Vec<TxInput> {
    let mut inputs: Vec<TxInput> = coins
        .iter()
        .map(|c| TxInput {
            address: c.address,
            origin_tx: c.origin_tx,
            value: c.value,
            owner: c.owner,
            signature: Default::default(),
        })
        .collect();
    let digest = Transaction::signing_digest(&inputs, outputs, FEE);
    for i in &mut inputs {
        i.signature = signer.sign(digest.as_bytes());
    }
    inputs
}

/// A payment of roughly half the inputs to `to`, change back to the
/// owner of the first input. The amount is nudged until `accept` takes
/// the transaction (to steer its output shard, or to dodge an id already
/// used); `None` if no nudge works.
pub fn build_payment(
    signer: &KeyPair,
    coins: &[Utxo],
    to: PublicKey,
    accept: impl Fn(&Transaction) -> bool,
    now: Tick,
) -> Option<Transaction> {
    let total: u64 = coins.iter().map(|c| c.value).sum();
    if coins.is_empty() || total < FEE + 2 {
        return None;
    }
    let change_to = coins[0].owner;
    let half = (total - FEE) / 2;
    for j in 0..MAX_GRIND.min(half) {
        let pay = half - j;
        let outputs = vec![
            TxOutput { owner: to, value: pay },
            TxOutput {
                owner: change_to,
                value: total - FEE - pay,
            },
        ];
        let inputs = signed_inputs(coins, signer, &outputs);
        let tx = Transaction::new(inputs, outputs, FEE, now);
        if accept(&tx) {
            return Some(tx);
        }
    }
    None
}

/// Draws how many new payments start this tick: the integer part of
/// `rate · n` plus one more with the fractional probability.
pub fn arrivals(rng: &mut SeededRng, rate: f64, n: usize) -> usize {
    let mean = rate * n as f64;
    let whole = mean.floor();
    whole as usize + usize::from(rng.chance(mean - whole))
}

#[cfg(test)]
mod tests {
    use super::*;
    use repchain_core::types::check_tx_body;

    fn wallets() -> (Wallets, Vec<Utxo>) {
        Wallets::generate(4, 2, 100, Scheme::Fast, Seed::from_u64(9))
    }

    #[test]
    fn genesis_funds_every_user() {
        let (w, g) = wallets();
        assert_eq!(g.len(), 8);
        assert!(w.users.iter().all(|u| u.available.len() == 2));
        assert_eq!(w.user_of(&g[3].owner), Some(1));
    }

    #[test]
    fn payments_are_valid_and_balanced() {
        let (w, g) = wallets();
        let coins = vec![g[0].clone(), g[1].clone()];
        let tx = build_payment(&w.users[0].keys, &coins, w.users[1].keys.public, |_| true, 5).unwrap();
        assert!(check_tx_body(&tx));
        assert_eq!(tx.output_total().unwrap() + tx.fee, 200);
    }

    #[test]
    fn grinding_steers_the_output_shard() {
        let (w, g) = wallets();
        for want in 0..4u32 {
            let tx = build_payment(
                &w.users[0].keys,
                &g[..1],
                w.users[2].keys.public,
                |t| t.output_shard(4).0 == want,
                0,
            )
            .unwrap();
            assert_eq!(tx.output_shard(4).0, want);
        }
    }

    #[test]
    fn forged_signatures_fail_the_body_check() {
        let (w, g) = wallets();
        let tx = build_payment(&w.forger, &g[..1], w.forger.public, |_| true, 0).unwrap();
        assert!(!check_tx_body(&tx));
    }

    #[test]
    fn dust_cannot_pay() {
        let (w, mut g) = wallets();
        g[0].value = 2;
        assert!(build_payment(&w.users[0].keys, &g[..1], w.users[1].keys.public, |_| true, 0).is_none());
    }

    #[test]
    fn queue_is_bounded_but_reissues_jump_it() {
        let (mut w, _) = wallets();
        for _ in 0..MAX_QUEUE {
            assert!(w.enqueue(0, Intent { lineage: None, cross: false }));
        }
        assert!(!w.enqueue(0, Intent { lineage: None, cross: false }));
        assert!(w.enqueue(0, Intent { lineage: Some(7), cross: true }));
        assert_eq!(w.users[0].queue.front().unwrap().lineage, Some(7));
    }
}
