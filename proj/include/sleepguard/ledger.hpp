#pragma once

// Permissioned proof-of-work chain. Everything that is hashed or signed goes
// through the canonical big-endian encoding in bytes.hpp.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sleepguard/bytes.hpp"
#include "sleepguard/crypto.hpp"

namespace sleepguard::ledger {

using crypto::KeyId;
using crypto::PublicKey;

struct Transaction {
  PublicKey sender{};
  std::string contract;
  Bytes payload;
  std::uint64_t sequence = 0;
  std::uint64_t timestamp = 0;
  std::uint64_t fee = 0;  // carried, never charged
  crypto::Signature signature{};

  KeyId sender_id() const { return crypto::key_id(sender); }
  Bytes signing_bytes() const;
  Bytes encode() const;
  static Transaction decode(std::span<const std::uint8_t> in);  // throws DecodeError
  Hash256 hash() const;

  friend bool operator==(const Transaction&, const Transaction&) = default;
};

Transaction make_transaction(const crypto::KeyPair& signer, std::string contract, Bytes payload,
                             std::uint64_t sequence, std::uint64_t timestamp);

// 16.16 fixed-point count of required leading zero bits.
using TargetBits = std::uint32_t;
inline constexpr TargetBits kWholeBit = 1u << 16;
inline constexpr TargetBits kDefaultTargetBits = 12 * kWholeBit;
inline constexpr TargetBits kMaxTargetBits = 192 * kWholeBit;

constexpr TargetBits target_from_bits(double zero_bits) { return static_cast<TargetBits>(zero_bits * kWholeBit + 0.5); }
inline double difficulty_bits(TargetBits t) { return static_cast<double>(t) / kWholeBit; }

// hash < 2^(256 - d) with d = bits / 65536. Bits of d below 1 scale a 64-bit
// window that follows the whole leading zero bits.
bool meets_target(const Hash256& hash, TargetBits bits);

struct BlockHeader {
  std::uint32_t version = 1;
  Hash256 prev_hash{};
  Hash256 merkle_root{};
  std::uint64_t timestamp = 0;
  TargetBits target_bits = 0;
  std::uint64_t nonce = 0;

  static constexpr std::size_t kEncodedSize = 4 + 32 + 32 + 8 + 4 + 8;
  Bytes encode() const;
  static BlockHeader decode(ByteReader& r);
  Hash256 hash() const;

  friend bool operator==(const BlockHeader&, const BlockHeader&) = default;
};

struct Block {
  BlockHeader header;
  std::vector<Transaction> txs;

  Bytes encode() const;
  static Block decode(std::span<const std::uint8_t> in);  // throws DecodeError
  Hash256 hash() const { return header.hash(); }

  friend bool operator==(const Block&, const Block&) = default;
};

// Leaves are SHA-256 of each canonical transaction. An odd level duplicates
// its last node; a single leaf is its own root. Throws std::domain_error on
// an empty list.
Hash256 merkle_root(std::span<const Transaction> txs);
Hash256 merkle_root_of_leaves(std::vector<Hash256> level);

struct ProofStep {
  Hash256 sibling{};
  bool sibling_on_left = false;
};
using MerkleProof = std::vector<ProofStep>;

MerkleProof merkle_proof(std::span<const Transaction> txs, std::size_t index);
bool verify_merkle_proof(const Hash256& leaf, const MerkleProof& proof, const Hash256& root);

class MiningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MineResult {
  Block block;
  std::uint64_t attempts = 0;
};

// Scans nonces upward from 0 and returns the first header meeting the target.
// With threads > 1 the nonce space is striped across workers and the smallest
// valid nonce is still the one returned.
MineResult mine(std::vector<Transaction> txs, const Hash256& prev_hash, TargetBits bits, std::uint64_t timestamp,
                unsigned threads = 1, std::uint64_t max_nonce = UINT64_MAX);

enum class ViolationKind : std::uint8_t {
  Structure,
  HashMismatch,
  PrevLink,
  ProofOfWork,
  MerkleRoot,
  Timestamp,
  UnknownSigner,
  BadSignature,
  Sequence,
};

std::string_view violation_name(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::string detail;
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::uint64_t height, std::vector<Violation> v);
  const std::vector<Violation>& violations() const { return violations_; }
  std::uint64_t height() const { return height_; }

 private:
  std::uint64_t height_;
  std::vector<Violation> violations_;
};

inline constexpr std::string_view kInitContract = "chain/init";

struct ChainConfig {
  TargetBits target_bits = kDefaultTargetBits;
  std::vector<PublicKey> signers;  // permitted transaction senders, admin included

  Bytes encode() const;
  static ChainConfig decode(std::span<const std::uint8_t> in);
};

struct VerifyFailure {
  std::uint64_t height = 0;
  std::vector<Violation> violations;
};

class Chain {
 public:
  // Genesis: one admin-signed chain/init transaction, zero prev_hash, no work.
  static Chain create(const crypto::KeyPair& admin, std::vector<PublicKey> signers, std::uint64_t timestamp,
                      TargetBits bits = kDefaultTargetBits);
  // Rebuilds from stored blocks and their recorded hashes without validating;
  // run verify() afterwards.
  static Chain from_records(std::vector<std::pair<Hash256, Block>> records);

  Chain(const Chain& other);
  Chain& operator=(const Chain& other);

  std::vector<Violation> validate_block(const Block& b) const;
  void append(const Block& b);  // throws ValidationError
  // Mines the transactions on top of the tip at the current target and appends.
  MineResult mine_and_append(std::vector<Transaction> txs, std::uint64_t timestamp, unsigned threads = 1);
  std::optional<VerifyFailure> verify() const;

  std::uint64_t height() const;  // genesis has height 0
  std::size_t size() const;
  Hash256 tip_hash() const;
  std::uint64_t tip_timestamp() const;
  TargetBits target_bits() const;
  void set_target_bits(TargetBits bits);
  KeyId admin_id() const;
  bool is_signer(const KeyId& id) const;
  std::uint64_t next_sequence(const KeyId& id) const;

  Block block(std::uint64_t height) const;
  Hash256 recorded_hash(std::uint64_t height) const;
  std::optional<std::uint64_t> find(const Hash256& hash) const;
  std::vector<Block> blocks() const;

  // For tamper tests: direct access that bypasses validation.
  Block& mutable_block_for_test(std::uint64_t height) { return blocks_.at(height); }

 private:
  Chain() = default;

  struct State {
    KeyId admin{};
    std::map<KeyId, PublicKey> signers;
    std::map<KeyId, std::uint64_t> last_sequence;
    TargetBits bits = kDefaultTargetBits;
    Hash256 tip{};
    std::uint64_t tip_timestamp = 0;
  };

  static std::vector<Violation> check_genesis(const Block& b);
  static std::vector<Violation> check_block(const State& s, const Block& b);
  static void apply(State& s, const Block& b, const Hash256& hash, bool genesis);

  mutable std::shared_mutex mu_;
  std::vector<Block> blocks_;
  std::vector<Hash256> hashes_;
  std::unordered_map<std::string, std::uint64_t> index_;
  State state_;
};

// Longest chain wins; equal heights keep the earliest candidate. Candidates
// that fail verification are skipped. Returns the index into `candidates`.
std::optional<std::size_t> select_chain(std::span<const Chain* const> candidates);

// d' = d - log2(observed / desired), ratio clamped to [1/2, 2].
TargetBits adjust_target(std::span<const BlockHeader> recent, double desired_interval_s, TargetBits current);

inline constexpr std::string_view kChainMagic = "SGCHAIN1";

Bytes serialize_chain(const Chain& c);
Chain deserialize_chain(std::span<const std::uint8_t> in);  // throws DecodeError
void save_chain(const Chain& c, const std::filesystem::path& path);
Chain load_chain(const std::filesystem::path& path);
void append_block_file(const std::filesystem::path& path, const Block& b);

// One line per block: height, hash, tx count, miner, timestamp, difficulty.
std::string explorer_dump(const Chain& c);

}  // namespace sleepguard::ledger
