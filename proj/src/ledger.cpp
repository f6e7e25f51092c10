#include "sleepguard/ledger.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace sleepguard::ledger {

namespace {

constexpr std::string_view kTxDomain = "sleepguard/tx/v1";

std::string key_of(const Hash256& h) { return std::string(h.begin(), h.end()); }

Hash256 hash_pair(const Hash256& a, const Hash256& b) {
  std::array<std::uint8_t, 64> buf{};
  std::copy(a.begin(), a.end(), buf.begin());
  std::copy(b.begin(), b.end(), buf.begin() + 32);
  return sha256(buf);
}

std::vector<Hash256> leaves_of(std::span<const Transaction> txs) {
  std::vector<Hash256> out;
  out.reserve(txs.size());
  for (const auto& tx : txs) out.push_back(tx.hash());
  return out;
}

std::uint64_t bit_window(const Hash256& h, unsigned start) {
  std::uint64_t m = 0;
  for (unsigned i = 0; i < 64; ++i) {
    unsigned bit = start + i;
    m = (m << 1) | ((h[bit / 8] >> (7 - bit % 8)) & 1u);
  }
  return m;
}

void put_u64_be(std::uint8_t* p, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) {
    p[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

}  // namespace

Bytes Transaction::signing_bytes() const {
  ByteWriter w;
  w.str(kTxDomain).raw(sender).str(contract).blob(payload).u64(sequence).u64(timestamp).u64(fee);
  return std::move(w).bytes();
}

Bytes Transaction::encode() const {
  ByteWriter w;
  w.raw(sender).str(contract).blob(payload).u64(sequence).u64(timestamp).u64(fee).raw(signature);
  return std::move(w).bytes();
}

Transaction Transaction::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  Transaction tx;
  tx.sender = r.fixed<crypto::kPublicKeyBytes>();
  tx.contract = r.str();
  tx.payload = r.blob();
  tx.sequence = r.u64();
  tx.timestamp = r.u64();
  tx.fee = r.u64();
  tx.signature = r.fixed<crypto::kSignatureBytes>();
  r.expect_end();
  return tx;
}

Hash256 Transaction::hash() const { return sha256(encode()); }

Transaction make_transaction(const crypto::KeyPair& signer, std::string contract, Bytes payload,
                             std::uint64_t sequence, std::uint64_t timestamp) {
  Transaction tx;
  tx.sender = signer.public_key;
  tx.contract = std::move(contract);
  tx.payload = std::move(payload);
  tx.sequence = sequence;
  tx.timestamp = timestamp;
  tx.signature = crypto::sign(signer, tx.signing_bytes());
  return tx;
}

bool meets_target(const Hash256& hash, TargetBits bits) {
  if (bits > kMaxTargetBits) throw std::invalid_argument("target_bits above 192 leading zero bits");
  const unsigned zeros = bits >> 16;
  const unsigned frac = bits & 0xffffu;
  for (unsigned i = 0; i < zeros / 8; ++i) {
    if (hash[i] != 0) return false;
  }
  if (zeros % 8 != 0 && (hash[zeros / 8] >> (8 - zeros % 8)) != 0) return false;
  if (frac == 0) return true;
  const long double limit = std::exp2l(64.0L - static_cast<long double>(frac) / 65536.0L);
  return static_cast<long double>(bit_window(hash, zeros)) < std::floor(limit);
}

Bytes BlockHeader::encode() const {
  ByteWriter w;
  w.u32(version).raw(prev_hash).raw(merkle_root).u64(timestamp).u32(target_bits).u64(nonce);
  return std::move(w).bytes();
}

BlockHeader BlockHeader::decode(ByteReader& r) {
  BlockHeader h;
  h.version = r.u32();
  h.prev_hash = r.fixed<32>();
  h.merkle_root = r.fixed<32>();
  h.timestamp = r.u64();
  h.target_bits = r.u32();
  h.nonce = r.u64();
  return h;
}

Hash256 BlockHeader::hash() const { return sha256(encode()); }

Bytes Block::encode() const {
  ByteWriter w;
  w.raw(header.encode()).u32(static_cast<std::uint32_t>(txs.size()));
  for (const auto& tx : txs) w.blob(tx.encode());
  return std::move(w).bytes();
}

Block Block::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  Block b;
  b.header = BlockHeader::decode(r);
  auto n = r.u32();
  if (n > r.remaining() / 4) throw DecodeError("transaction count exceeds block size");
  b.txs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) b.txs.push_back(Transaction::decode(r.blob()));
  r.expect_end();
  return b;
}

Hash256 merkle_root_of_leaves(std::vector<Hash256> level) {
  if (level.empty()) throw std::domain_error("merkle root of an empty transaction list");
  while (level.size() > 1) {
    if (level.size() % 2 == 1) level.push_back(level.back());
    std::vector<Hash256> next;
    next.reserve(level.size() / 2);
    for (std::size_t i = 0; i < level.size(); i += 2) next.push_back(hash_pair(level[i], level[i + 1]));
    level = std::move(next);
  }
  return level.front();
}

Hash256 merkle_root(std::span<const Transaction> txs) { return merkle_root_of_leaves(leaves_of(txs)); }

MerkleProof merkle_proof(std::span<const Transaction> txs, std::size_t index) {
  if (index >= txs.size()) throw std::out_of_range("merkle proof index out of range");
  auto level = leaves_of(txs);
  MerkleProof proof;
  while (level.size() > 1) {
    if (level.size() % 2 == 1) level.push_back(level.back());
    std::size_t sib = index ^ 1u;
    proof.push_back({level[sib], sib < index});
    std::vector<Hash256> next;
    for (std::size_t i = 0; i < level.size(); i += 2) next.push_back(hash_pair(level[i], level[i + 1]));
    level = std::move(next);
    index /= 2;
  }
  return proof;
}

bool verify_merkle_proof(const Hash256& leaf, const MerkleProof& proof, const Hash256& root) {
  Hash256 cur = leaf;
  for (const auto& step : proof) cur = step.sibling_on_left ? hash_pair(step.sibling, cur) : hash_pair(cur, step.sibling);
  return cur == root;
}

MineResult mine(std::vector<Transaction> txs, const Hash256& prev_hash, TargetBits bits, std::uint64_t timestamp,
                unsigned threads, std::uint64_t max_nonce) {
  if (txs.empty()) throw std::invalid_argument("cannot mine an empty block");
  if (bits > kMaxTargetBits) throw std::invalid_argument("target_bits above 192 leading zero bits");
  MineResult r;
  r.block.header.prev_hash = prev_hash;
  r.block.header.timestamp = timestamp;
  r.block.header.target_bits = bits;
  r.block.header.merkle_root = merkle_root(txs);
  r.block.txs = std::move(txs);

  const Bytes base = r.block.header.encode();
  const std::size_t nonce_at = BlockHeader::kEncodedSize - 8;
  threads = std::max(1u, threads);
  std::atomic<std::uint64_t> best{UINT64_MAX};
  std::atomic<bool> found{false};

  auto worker = [&](unsigned offset) {
    Bytes buf = base;
    for (std::uint64_t n = offset; n <= max_nonce && n < best.load(std::memory_order_relaxed); n += threads) {
      put_u64_be(buf.data() + nonce_at, n);
      if (meets_target(sha256(buf), bits)) {
        std::uint64_t cur = best.load();
        while (n < cur && !best.compare_exchange_weak(cur, n)) {
        }
        found = true;
        return;
      }
      if (max_nonce - n < threads) return;
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }
  if (!found) throw MiningError("nonce space exhausted without meeting the target");
  r.block.header.nonce = best.load();
  r.attempts = r.block.header.nonce + 1;
  return r;
}

std::string_view violation_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::Structure: return "structure";
    case ViolationKind::HashMismatch: return "hash-mismatch";
    case ViolationKind::PrevLink: return "prev-link";
    case ViolationKind::ProofOfWork: return "proof-of-work";
    case ViolationKind::MerkleRoot: return "merkle-root";
    case ViolationKind::Timestamp: return "timestamp";
    case ViolationKind::UnknownSigner: return "unknown-signer";
    case ViolationKind::BadSignature: return "bad-signature";
    case ViolationKind::Sequence: return "sequence";
  }
  return "?";
}

namespace {

std::string describe(std::uint64_t height, const std::vector<Violation>& v) {
  std::string s = "block " + std::to_string(height) + " rejected:";
  for (const auto& x : v) s += " " + std::string(violation_name(x.kind)) + " (" + x.detail + ")";
  return s;
}

}  // namespace

ValidationError::ValidationError(std::uint64_t height, std::vector<Violation> v)
    : std::runtime_error(describe(height, v)), height_(height), violations_(std::move(v)) {}

Bytes ChainConfig::encode() const {
  ByteWriter w;
  w.u32(target_bits).u32(static_cast<std::uint32_t>(signers.size()));
  for (const auto& pk : signers) w.raw(pk);
  return std::move(w).bytes();
}

ChainConfig ChainConfig::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  ChainConfig c;
  c.target_bits = r.u32();
  auto n = r.u32();
  if (n > r.remaining() / crypto::kPublicKeyBytes) throw DecodeError("signer count exceeds payload");
  for (std::uint32_t i = 0; i < n; ++i) c.signers.push_back(r.fixed<crypto::kPublicKeyBytes>());
  r.expect_end();
  return c;
}

Chain Chain::create(const crypto::KeyPair& admin, std::vector<PublicKey> signers, std::uint64_t timestamp,
                    TargetBits bits) {
  if (bits > kMaxTargetBits) throw std::invalid_argument("target_bits above 192 leading zero bits");
  if (std::find(signers.begin(), signers.end(), admin.public_key) == signers.end()) {
    signers.insert(signers.begin(), admin.public_key);
  }
  ChainConfig cfg{bits, std::move(signers)};
  Block g;
  g.txs.push_back(make_transaction(admin, std::string(kInitContract), cfg.encode(), 0, timestamp));
  g.header.timestamp = timestamp;
  g.header.merkle_root = merkle_root(g.txs);
  Chain c;
  auto h = g.hash();
  c.blocks_.push_back(g);
  c.hashes_.push_back(h);
  c.index_[key_of(h)] = 0;
  apply(c.state_, g, h, true);
  return c;
}

Chain Chain::from_records(std::vector<std::pair<Hash256, Block>> records) {
  Chain c;
  for (auto& [h, b] : records) {
    bool genesis = c.blocks_.empty();
    c.index_.emplace(key_of(h), c.blocks_.size());
    c.blocks_.push_back(std::move(b));
    c.hashes_.push_back(h);
    try {
      apply(c.state_, c.blocks_.back(), h, genesis);
    } catch (const std::exception&) {
      c.state_.tip = h;
    }
  }
  return c;
}

Chain::Chain(const Chain& other) {
  std::shared_lock lock(other.mu_);
  blocks_ = other.blocks_;
  hashes_ = other.hashes_;
  index_ = other.index_;
  state_ = other.state_;
}

Chain& Chain::operator=(const Chain& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  blocks_ = other.blocks_;
  hashes_ = other.hashes_;
  index_ = other.index_;
  state_ = other.state_;
  return *this;
}

std::vector<Violation> Chain::check_genesis(const Block& b) {
  std::vector<Violation> v;
  if (b.header.version != 1) v.push_back({ViolationKind::Structure, "unsupported block version"});
  if (b.header.prev_hash != Hash256{}) v.push_back({ViolationKind::PrevLink, "genesis must have a zero prev_hash"});
  if (b.txs.size() != 1 || b.txs[0].contract != kInitContract) {
    v.push_back({ViolationKind::Structure, "genesis must hold exactly one chain/init transaction"});
    return v;
  }
  if (merkle_root(b.txs) != b.header.merkle_root) v.push_back({ViolationKind::MerkleRoot, "genesis merkle root"});
  const auto& tx = b.txs[0];
  if (!crypto::verify(tx.sender, tx.signing_bytes(), tx.signature)) {
    v.push_back({ViolationKind::BadSignature, "genesis transaction signature"});
  }
  try {
    auto cfg = ChainConfig::decode(tx.payload);
    if (std::find(cfg.signers.begin(), cfg.signers.end(), tx.sender) == cfg.signers.end()) {
      v.push_back({ViolationKind::Structure, "genesis signer missing from signer list"});
    }
    if (cfg.target_bits > kMaxTargetBits) v.push_back({ViolationKind::Structure, "genesis target out of range"});
  } catch (const DecodeError& e) {
    v.push_back({ViolationKind::Structure, std::string("genesis config: ") + e.what()});
  }
  return v;
}

std::vector<Violation> Chain::check_block(const State& s, const Block& b) {
  std::vector<Violation> v;
  if (b.header.version != 1) v.push_back({ViolationKind::Structure, "unsupported block version"});
  if (b.txs.empty()) {
    v.push_back({ViolationKind::Structure, "block has no transactions"});
    return v;
  }
  if (b.header.prev_hash != s.tip) v.push_back({ViolationKind::PrevLink, "prev_hash does not match the tip"});
  if (b.header.target_bits != s.bits) {
    v.push_back({ViolationKind::ProofOfWork, "declared target differs from the chain target"});
  } else if (!meets_target(b.hash(), b.header.target_bits)) {
    v.push_back({ViolationKind::ProofOfWork, "header hash above target"});
  }
  bool merkle_ok = merkle_root(b.txs) == b.header.merkle_root;
  if (!merkle_ok) v.push_back({ViolationKind::MerkleRoot, "merkle root does not match transactions"});
  if (b.header.timestamp < s.tip_timestamp) v.push_back({ViolationKind::Timestamp, "timestamp precedes parent"});
  if (!merkle_ok) return v;

  std::map<KeyId, std::uint64_t> seq = s.last_sequence;
  for (std::size_t i = 0; i < b.txs.size(); ++i) {
    const auto& tx = b.txs[i];
    auto id = tx.sender_id();
    auto it = s.signers.find(id);
    std::string where = "tx " + std::to_string(i);
    if (it == s.signers.end()) {
      v.push_back({ViolationKind::UnknownSigner, where + " sender is not a permitted signer"});
      continue;
    }
    if (!crypto::verify(tx.sender, tx.signing_bytes(), tx.signature)) {
      v.push_back({ViolationKind::BadSignature, where + " signature does not verify"});
      continue;
    }
    auto last = seq.find(id);
    if (last != seq.end() && tx.sequence <= last->second) {
      v.push_back({ViolationKind::Sequence, where + " sequence " + std::to_string(tx.sequence) + " not above " +
                                                std::to_string(last->second)});
      continue;
    }
    seq[id] = tx.sequence;
  }
  return v;
}

void Chain::apply(State& s, const Block& b, const Hash256& hash, bool genesis) {
  if (genesis) {
    const auto& tx = b.txs.at(0);
    auto cfg = ChainConfig::decode(tx.payload);
    s.admin = tx.sender_id();
    s.bits = cfg.target_bits;
    for (const auto& pk : cfg.signers) s.signers[crypto::key_id(pk)] = pk;
  }
  for (const auto& tx : b.txs) {
    auto& last = s.last_sequence[tx.sender_id()];
    last = std::max(last, tx.sequence);
  }
  s.tip = hash;
  s.tip_timestamp = b.header.timestamp;
}

std::vector<Violation> Chain::validate_block(const Block& b) const {
  std::shared_lock lock(mu_);
  return check_block(state_, b);
}

void Chain::append(const Block& b) {
  std::unique_lock lock(mu_);
  auto v = check_block(state_, b);
  if (!v.empty()) throw ValidationError(blocks_.size(), std::move(v));
  auto h = b.hash();
  blocks_.push_back(b);
  hashes_.push_back(h);
  index_[key_of(h)] = blocks_.size() - 1;
  apply(state_, b, h, false);
}

MineResult Chain::mine_and_append(std::vector<Transaction> txs, std::uint64_t timestamp, unsigned threads) {
  Hash256 tip;
  TargetBits bits;
  {
    std::shared_lock lock(mu_);
    tip = state_.tip;
    bits = state_.bits;
    timestamp = std::max(timestamp, state_.tip_timestamp);
  }
  auto r = mine(std::move(txs), tip, bits, timestamp, threads);
  append(r.block);
  return r;
}

std::optional<VerifyFailure> Chain::verify() const {
  std::shared_lock lock(mu_);
  if (blocks_.empty()) return VerifyFailure{0, {{ViolationKind::Structure, "chain has no genesis block"}}};
  State s;
  for (std::size_t h = 0; h < blocks_.size(); ++h) {
    const auto& b = blocks_[h];
    if (b.hash() != hashes_[h]) {
      return VerifyFailure{h, {{ViolationKind::HashMismatch, "header no longer hashes to the recorded block hash"}}};
    }
    auto v = h == 0 ? check_genesis(b) : check_block(s, b);
    if (!v.empty()) return VerifyFailure{h, std::move(v)};
    apply(s, b, hashes_[h], h == 0);
  }
  return std::nullopt;
}

std::uint64_t Chain::height() const {
  std::shared_lock lock(mu_);
  return blocks_.size() - 1;
}

std::size_t Chain::size() const {
  std::shared_lock lock(mu_);
  return blocks_.size();
}

Hash256 Chain::tip_hash() const {
  std::shared_lock lock(mu_);
  return state_.tip;
}

std::uint64_t Chain::tip_timestamp() const {
  std::shared_lock lock(mu_);
  return state_.tip_timestamp;
}

TargetBits Chain::target_bits() const {
  std::shared_lock lock(mu_);
  return state_.bits;
}

void Chain::set_target_bits(TargetBits bits) {
  if (bits > kMaxTargetBits) throw std::invalid_argument("target_bits above 192 leading zero bits");
  std::unique_lock lock(mu_);
  state_.bits = bits;
}

KeyId Chain::admin_id() const {
  std::shared_lock lock(mu_);
  return state_.admin;
}

bool Chain::is_signer(const KeyId& id) const {
  std::shared_lock lock(mu_);
  return state_.signers.count(id) != 0;
}

std::uint64_t Chain::next_sequence(const KeyId& id) const {
  std::shared_lock lock(mu_);
  auto it = state_.last_sequence.find(id);
  return it == state_.last_sequence.end() ? 1 : it->second + 1;
}

Block Chain::block(std::uint64_t height) const {
  std::shared_lock lock(mu_);
  return blocks_.at(height);
}

Hash256 Chain::recorded_hash(std::uint64_t height) const {
  std::shared_lock lock(mu_);
  return hashes_.at(height);
}

std::optional<std::uint64_t> Chain::find(const Hash256& hash) const {
  std::shared_lock lock(mu_);
  auto it = index_.find(key_of(hash));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<Block> Chain::blocks() const {
  std::shared_lock lock(mu_);
  return blocks_;
}

std::optional<std::size_t> select_chain(std::span<const Chain* const> candidates) {
  std::optional<std::size_t> best;
  std::uint64_t best_height = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i]->verify()) continue;
    auto h = candidates[i]->height();
    if (!best || h > best_height) {
      best = i;
      best_height = h;
    }
  }
  return best;
}

TargetBits adjust_target(std::span<const BlockHeader> recent, double desired_interval_s, TargetBits current) {
  if (recent.size() < 2) throw std::invalid_argument("target adjustment needs at least two blocks");
  if (!(desired_interval_s > 0)) throw std::invalid_argument("desired interval must be positive");
  double first = static_cast<double>(recent.front().timestamp);
  double last = static_cast<double>(recent.back().timestamp);
  double observed = std::max(0.0, last - first) / static_cast<double>(recent.size() - 1);
  double ratio = std::clamp(observed / desired_interval_s, 0.5, 2.0);
  double d = std::clamp(difficulty_bits(current) - std::log2(ratio), 0.0, difficulty_bits(kMaxTargetBits));
  return static_cast<TargetBits>(std::llround(d * kWholeBit));
}

Bytes serialize_chain(const Chain& c) {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kChainMagic.data()), kChainMagic.size()));
  auto blocks = c.blocks();
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    auto bytes = blocks[h].encode();
    w.u32(static_cast<std::uint32_t>(bytes.size())).raw(c.recorded_hash(h)).raw(bytes);
  }
  return std::move(w).bytes();
}

Chain deserialize_chain(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  auto magic = r.raw(kChainMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kChainMagic.begin())) throw DecodeError("not a chain file");
  std::vector<std::pair<Hash256, Block>> records;
  while (!r.done()) {
    try {
      auto len = r.u32();
      auto hash = r.fixed<32>();
      auto bytes = r.raw(len);
      records.emplace_back(hash, Block::decode(bytes));
    } catch (const DecodeError& e) {
      throw DecodeError("record at height " + std::to_string(records.size()) + ": " + e.what());
    }
  }
  if (records.empty()) throw DecodeError("chain file has no genesis block");
  return Chain::from_records(std::move(records));
}

void save_chain(const Chain& c, const std::filesystem::path& path) {
  auto bytes = serialize_chain(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Chain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_chain(bytes);
}

void append_block_file(const std::filesystem::path& path, const Block& b) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for appending");
  ByteWriter w;
  auto bytes = b.encode();
  w.u32(static_cast<std::uint32_t>(bytes.size())).raw(b.hash()).raw(bytes);
  const auto& rec = w.bytes();
  out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  if (!out) throw std::runtime_error("append to " + path.string() + " failed");
}

std::string explorer_dump(const Chain& c) {
  std::string out = "height  hash                                                              txs  miner             timestamp   difficulty\n";
  auto miner = to_hex(c.admin_id()).substr(0, 16);
  auto blocks = c.blocks();
  char line[256];
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    const auto& b = blocks[h];
    std::snprintf(line, sizeof(line), "%6zu  %s  %3zu  %s  %10llu  %.4f\n", h, to_hex(c.recorded_hash(h)).c_str(),
                  b.txs.size(), miner.c_str(), static_cast<unsigned long long>(b.header.timestamp),
                  difficulty_bits(b.header.target_bits));
    out += line;
  }
  return out;
}

}  // namespace sleepguard::ledger
