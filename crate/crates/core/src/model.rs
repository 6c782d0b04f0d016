//! Learned joint-auction mechanism: a position-free transformer encoder over
//! bundle tokens scores every bundle, a (relaxed) sort of the scores assigns
//! slots, and a sigmoid head sets each bidder's payment as a fraction of its
//! bid-weighted expected click-through.

use jam_autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    bundle_bids, enumerate_bundles, AllocationMode, AuctionConfig, BidProfile, BundleAllocation, BundleIndex, Error,
    Outcome, Result,
};

/// Features per bundle token: brand bid, store bid, bundle bid, CTR sum, top CTR.
pub const TOKEN_FEATURES: usize = 5;
/// Extra per-bidder payment-head inputs: expected CTR, bid, brand indicator.
pub const PAYMENT_FEATURES: usize = 3;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Sort temperature used by soft-mode forwards.
    pub tau: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 64,
            heads: 4,
            ff_width: 128,
            tau: 1.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) || self.ff_width == 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} must be a positive multiple of heads {}, feed-forward width positive",
                self.width, self.heads
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.tau
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let (d, f) = (self.width, self.ff_width);
        let mut out = vec![
            ("embed.weight".to_string(), (TOKEN_FEATURES, d)),
            ("embed.bias".to_string(), (1, d)),
        ];
        for b in 0..self.depth {
            for (name, shape) in [
                ("attn.query", (d, d)),
                ("attn.key", (d, d)),
                ("attn.value", (d, d)),
                ("attn.out", (d, d)),
                ("ff.weight1", (d, f)),
                ("ff.bias1", (1, f)),
                ("ff.weight2", (f, d)),
                ("ff.bias2", (1, d)),
            ] {
                out.push((format!("block{b}.{name}"), shape));
            }
        }
        out.extend([
            ("score.weight".to_string(), (d, 1)),
            ("score.bias".to_string(), (1, 1)),
            ("payment.weight1".to_string(), (d + PAYMENT_FEATURES, d)),
            ("payment.bias1".to_string(), (1, d)),
            ("payment.weight2".to_string(), (d, 1)),
            ("payment.bias2".to_string(), (1, 1)),
        ]);
        out
    }
}

/// All learnable weights, stored in [`ArchConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    tensors: Vec<Tensor>,
}

fn is_bias(name: &str) -> bool {
    name.contains("bias")
}

impl ModelParams {
    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(name, (r, c))| {
                if is_bias(&name) {
                    Tensor::zeros(r, c)
                } else {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| rng.gen_range(-bound..bound))
                }
            })
            .collect();
        Ok(Self { arch, tensors })
    }

    /// Rebuilds parameters from named arrays, checking names and shapes.
    pub fn from_named(arch: ArchConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if named.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter arrays, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for ((want, shape), (name, t)) in layout.iter().zip(named) {
            if *want != name {
                return Err(Error::Shape(format!("expected array {want}, found {name}")));
            }
            if t.shape() != *shape {
                return Err(Error::Shape(format!(
                    "array {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("array {name} has non-finite entries")));
            }
            tensors.push(t);
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
        }
        self.arch.tau = tau;
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.arch
            .layout()
            .into_iter()
            .map(|(n, _)| n)
            .zip(&self.tensors)
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arch
            .layout()
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.arch.layout().iter().position(|(n, _)| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor in `g`: as trainable leaves or as constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SortMode {
    Soft { tau: f64 },
    Hard,
}

impl SortMode {
    pub fn allocation_mode(self) -> AllocationMode {
        match self {
            SortMode::Soft { .. } => AllocationMode::Soft,
            SortMode::Hard => AllocationMode::Hard,
        }
    }
}

/// Rank scores `(C + 1 - 2k) q_c - sum_j |q_c - q_j|` for `k = 1..=C`; row
/// `k - 1` peaks at the `k`-th largest score.
pub fn sort_row_scores(q: &[f64]) -> Vec<Vec<f64>> {
    let c = q.len();
    let abs_sums: Vec<f64> = q.iter().map(|&a| q.iter().map(|&b| (a - b).abs()).sum()).collect();
    (1..=c)
        .map(|k| {
            let coef = (c + 1) as f64 - 2.0 * k as f64;
            q.iter().zip(&abs_sums).map(|(&v, r)| coef * v - r).collect()
        })
        .collect()
}

/// Bundle indices ordered by descending score, then descending bundle bid,
/// then ascending index.
pub fn sort_order(q: &[f64], bundle_bids: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        q[b].total_cmp(&q[a])
            .then_with(|| {
                bundle_bids
                    .get(b)
                    .unwrap_or(&0.0)
                    .total_cmp(bundle_bids.get(a).unwrap_or(&0.0))
            })
            .then(a.cmp(&b))
    });
    order
}

/// Descending ranks (1-based): `rank[c]` is the sort position of bundle `c`.
pub fn descending_ranks(q: &[f64], bundle_bids: &[f64]) -> Vec<usize> {
    let order = sort_order(q, bundle_bids);
    let mut rank = vec![0; q.len()];
    for (pos, &c) in order.iter().enumerate() {
        rank[c] = pos + 1;
    }
    rank
}

/// `C x C` permutation matrix, row-major: row `k` is one-hot at the bundle
/// ranked `k`-th. Pass an empty `bundle_bids` to break ties by index only.
pub fn hard_sort_matrix(q: &[f64], bundle_bids: &[f64]) -> Vec<Vec<f64>> {
    let c = q.len();
    sort_order(q, bundle_bids)
        .into_iter()
        .map(|winner| (0..c).map(|j| if j == winner { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Row-wise tempered softmax of [`sort_row_scores`].
pub fn soft_sort_matrix(q: &[f64], tau: f64) -> Result<Vec<Vec<f64>>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    Ok(sort_row_scores(q)
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| ((v - max) / tau).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        })
        .collect())
}

/// Bundle allocation `S[c][k] = sort[k][c]` for the first `K` sort rows.
/// `sort` may hold only those rows; its row length is the bundle count.
pub fn truncate_to_slots(sort: &[Vec<f64>], num_slots: usize, mode: AllocationMode) -> Result<BundleAllocation> {
    let c = sort.first().map_or(0, Vec::len);
    if num_slots > c || num_slots > sort.len() {
        return Err(Error::InvalidArgument(format!("{num_slots} slots exceed {c} bundles")));
    }
    let mut w = vec![0.0; c * num_slots];
    for (k, row) in sort.iter().take(num_slots).enumerate() {
        for (b, &v) in row.iter().enumerate() {
            w[b * num_slots + k] = v;
        }
    }
    BundleAllocation::new(c, num_slots, w, mode)
}

/// Per-bidder payments `fraction * expected_ctr * bid`.
pub fn payments_from_fractions(fractions: &[f64], expected_ctr: &[f64], bids: &[f64]) -> Vec<f64> {
    fractions
        .iter()
        .zip(expected_ctr)
        .zip(bids)
        .map(|((f, g), b)| f * g * b)
        .collect()
}

/// Instance-specific constant matrices shared by every forward pass.
#[derive(Debug, Clone)]
pub struct InstanceContext {
    config: AuctionConfig,
    idx: BundleIndex,
    /// `C x C^2`: `q * diff` gives all pairwise `q_c - q_j`.
    diff: Tensor,
    /// `C^2 x C`: sums pairwise terms over `j`.
    pair_sum: Tensor,
    /// `C x (K C)`: block `k` is `(C + 1 - 2k) I`.
    rank_coef: Tensor,
    /// `C x (K C)`: `K` identity blocks.
    tile: Tensor,
    /// `(K C) x B`: `ctr_k` where bundle `c` contains bidder `x`.
    ctr_membership: Tensor,
    /// `B x C`: mean-pools member bundle encodings per bidder.
    pool: Tensor,
    pool_width: usize,
    /// Brand indicator per bidder.
    role: Vec<f64>,
}

impl InstanceContext {
    pub fn new(config: &AuctionConfig, width: usize) -> Result<Self> {
        let idx = enumerate_bundles(config)?;
        let (c, k, b) = (idx.len(), config.num_slots(), config.num_bidders());
        let diff = Tensor::from_fn(c, c * c, |r, col| {
            let (i, j) = (col / c, col % c);
            match (r == i, r == j) {
                (true, false) => 1.0,
                (false, true) => -1.0,
                _ => 0.0,
            }
        });
        let pair_sum = Tensor::from_fn(c * c, c, |r, col| if r / c == col { 1.0 } else { 0.0 });
        let rank_coef = Tensor::from_fn(c, k * c, |r, col| {
            let (slot, j) = (col / c, col % c);
            if r == j {
                (c + 1) as f64 - 2.0 * (slot + 1) as f64
            } else {
                0.0
            }
        });
        let tile = Tensor::from_fn(c, k * c, |r, col| if r == col % c { 1.0 } else { 0.0 });
        let ctrs = config.ctrs();
        let ctr_membership = Tensor::from_fn(k * c, b, |r, x| {
            let (slot, bundle) = (r / c, r % c);
            if idx.contains(bundle, x) {
                ctrs[slot]
            } else {
                0.0
            }
        });
        let pool = Tensor::from_fn(b, c, |x, bundle| {
            if idx.contains(bundle, x) {
                1.0 / idx.containing(x).len() as f64
            } else {
                0.0
            }
        });
        let role = (0..b)
            .map(|x| if x < config.num_brands() { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            config: config.clone(),
            idx,
            diff,
            pair_sum,
            rank_coef,
            tile,
            ctr_membership,
            pool,
            pool_width: width,
            role,
        })
    }

    pub fn config(&self) -> &AuctionConfig {
        &self.config
    }

    pub fn index(&self) -> &BundleIndex {
        &self.idx
    }

    pub fn width(&self) -> usize {
        self.pool_width
    }

    /// `C x 5` token features of one profile.
    pub fn token_features(&self, bids: &BidProfile) -> Result<Tensor> {
        self.features(std::slice::from_ref(bids))
    }

    fn features(&self, bids: &[BidProfile]) -> Result<Tensor> {
        let ctr_sum: f64 = self.config.ctrs().iter().sum();
        let top = self.config.ctrs()[0];
        let c = self.idx.len();
        let mut data = Vec::with_capacity(bids.len() * c * TOKEN_FEATURES);
        for p in bids {
            p.check_shape(&self.config)?;
            for &(i, j) in self.idx.bundles() {
                let (bi, bj) = (p.brands[i], p.stores[j]);
                data.extend_from_slice(&[bi, bj, bi + bj, ctr_sum, top]);
            }
        }
        Ok(Tensor::new(bids.len() * c, TOKEN_FEATURES, data)?)
    }
}

/// Graph handles produced by one batched forward pass over `N` profiles.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `(N C) x d` final encodings.
    pub encoded: Var,
    /// `N x C` bundle scores.
    pub scores: Var,
    /// `(N K) x C` truncated sort rows.
    pub sort_rows: Var,
    /// `N x B` expected CTR per bidder.
    pub expected_ctr: Var,
    /// `N x B` payment fractions.
    pub fractions: Var,
    /// `N x B` payments.
    pub payments: Var,
}

/// Builds the whole mechanism for a batch of profiles. `params` come from
/// [`ModelParams::register`].
pub fn build_forward(
    g: &mut Graph,
    params: &[Var],
    arch: &ArchConfig,
    ctx: &InstanceContext,
    bids: &[BidProfile],
    mode: SortMode,
) -> Result<ForwardVars> {
    if ctx.pool_width != arch.width {
        return Err(Error::Shape(format!(
            "context built for width {}, model width {}",
            ctx.pool_width, arch.width
        )));
    }
    if bids.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = bids.len();
    let c = ctx.idx.len();
    let k = ctx.config.num_slots();
    let nb = ctx.config.num_bidders();
    let mut p = params.iter().copied();
    let mut next = || p.next().ok_or_else(|| Error::Shape("too few parameter handles".into()));

    // Token embedding.
    let x = g.constant(ctx.features(bids)?);
    let (w, b) = (next()?, next()?);
    let h = g.matmul(x, w)?;
    let mut h = g.add_row(h, b)?;

    // Encoder blocks: attention within each profile's bundle set, post-norm.
    for _ in 0..arch.depth {
        let (wq, wk, wv, wo) = (next()?, next()?, next()?, next()?);
        let (w1, b1, w2, b2) = (next()?, next()?, next()?, next()?);
        let q = g.matmul(h, wq)?;
        let kk = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let att = g.attention(q, kk, v, c, arch.heads)?;
        let att = g.matmul(att, wo)?;
        let res = g.add(h, att)?;
        let h1 = g.layer_norm(res, LN_EPS)?;
        let f = g.matmul(h1, w1)?;
        let f = g.add_row(f, b1)?;
        let f = g.relu(f)?;
        let f = g.matmul(f, w2)?;
        let f = g.add_row(f, b2)?;
        let res = g.add(h1, f)?;
        h = g.layer_norm(res, LN_EPS)?;
    }
    let encoded = h;

    // Bundle scores.
    let (ws, bs) = (next()?, next()?);
    let s = g.matmul(encoded, ws)?;
    let s = g.add_row(s, bs)?;
    let scores = g.reshape(s, n, c)?;

    // Sort rows for the first K ranks.
    let sort_rows = match mode {
        SortMode::Soft { tau } => {
            let diff = g.constant(ctx.diff.clone());
            let pair_sum = g.constant(ctx.pair_sum.clone());
            let rank_coef = g.constant(ctx.rank_coef.clone());
            let tile = g.constant(ctx.tile.clone());
            let pairs = g.matmul(scores, diff)?;
            let pairs = g.abs(pairs)?;
            let abs_sum = g.matmul(pairs, pair_sum)?;
            let lin = g.matmul(scores, rank_coef)?;
            let pen = g.matmul(abs_sum, tile)?;
            let z = g.sub(lin, pen)?;
            let z = g.reshape(z, n * k, c)?;
            g.row_softmax(z, tau)?
        }
        SortMode::Hard => {
            let q = g.value(scores).clone();
            let mut onehot = Tensor::zeros(n * k, c);
            for (s, profile) in bids.iter().enumerate() {
                let e = bundle_bids(profile, &ctx.idx)?;
                let order = sort_order(q.row_slice(s), &e);
                for (slot, &winner) in order.iter().take(k).enumerate() {
                    onehot.set(s * k + slot, winner, 1.0);
                }
            }
            g.constant(onehot)
        }
    };

    // Expected CTR per bidder.
    let flat = g.reshape(sort_rows, n, k * c)?;
    let member = g.constant(ctx.ctr_membership.clone());
    let expected_ctr = g.matmul(flat, member)?;

    // Payment head on pooled member encodings.
    let pooled = g.group_matmul(&ctx.pool, encoded)?;
    let gcol = g.reshape(expected_ctr, n * nb, 1)?;
    let bid_flat: Vec<f64> = bids.iter().flat_map(BidProfile::flat).collect();
    let bid_col = g.constant(Tensor::column(bid_flat.clone()));
    let role = g.constant(Tensor::column((0..n).flat_map(|_| ctx.role.iter().copied()).collect()));
    let feats = g.concat_cols(&[pooled, gcol, bid_col, role])?;
    let (w1, b1, w2, b2) = (next()?, next()?, next()?, next()?);
    let hid = g.matmul(feats, w1)?;
    let hid = g.add_row(hid, b1)?;
    let hid = g.relu(hid)?;
    let out = g.matmul(hid, w2)?;
    let out = g.add_row(out, b2)?;
    let frac = g.sigmoid(out)?;
    let fractions = g.reshape(frac, n, nb)?;

    let bid_mat = g.constant(Tensor::new(n, nb, bid_flat)?);
    let charged = g.mul(fractions, expected_ctr)?;
    let payments = g.mul(charged, bid_mat)?;

    Ok(ForwardVars {
        encoded,
        scores,
        sort_rows,
        expected_ctr,
        fractions,
        payments,
    })
}

/// Profiles per inference graph when evaluating large sets.
pub const INFERENCE_CHUNK: usize = 32;

/// Per-profile expected CTRs and payments (row-major `N x B`) without gradient tracking.
pub fn forward_values(
    params: &ModelParams,
    ctx: &InstanceContext,
    bids: &[BidProfile],
    mode: SortMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ctr = Vec::new();
    let mut pay = Vec::new();
    for chunk in bids.chunks(INFERENCE_CHUNK) {
        let mut g = Graph::inference();
        let vars = params.register(&mut g, false);
        let f = build_forward(&mut g, &vars, params.arch(), ctx, chunk, mode)?;
        ctr.extend_from_slice(g.value(f.expected_ctr).data());
        pay.extend_from_slice(g.value(f.payments).data());
    }
    Ok((ctr, pay))
}

/// Full outcomes for a batch of reported profiles.
pub fn forward(
    params: &ModelParams,
    ctx: &InstanceContext,
    bids: &[BidProfile],
    mode: SortMode,
) -> Result<Vec<Outcome>> {
    let c = ctx.idx.len();
    let k = ctx.config.num_slots();
    let nb = ctx.config.num_bidders();
    let mut out = Vec::with_capacity(bids.len());
    for chunk in bids.chunks(INFERENCE_CHUNK) {
        let mut g = Graph::inference();
        let vars = params.register(&mut g, false);
        let f = build_forward(&mut g, &vars, params.arch(), ctx, chunk, mode)?;
        let rows = g.value(f.sort_rows);
        let pay = g.value(f.payments);
        for (s, profile) in chunk.iter().enumerate() {
            let sort: Vec<Vec<f64>> = (0..k).map(|slot| rows.row_slice(s * k + slot).to_vec()).collect();
            let alloc = truncate_to_slots(&sort, k, mode.allocation_mode())?;
            debug_assert_eq!(alloc.num_bundles(), c);
            let payments = pay.row_slice(s)[..nb].to_vec();
            out.push(Outcome::new(&ctx.config, &ctx.idx, alloc, payments, profile)?);
        }
    }
    Ok(out)
}
