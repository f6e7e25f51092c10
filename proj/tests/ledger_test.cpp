#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "sleepguard/ledger.hpp"

using namespace sleepguard;
using namespace sleepguard::ledger;
using crypto::KeyPair;

namespace {

const KeyPair& admin() {
  static const KeyPair k = KeyPair::deterministic("ledger-admin");
  return k;
}
const KeyPair& outsider() {
  static const KeyPair k = KeyPair::deterministic("ledger-outsider");
  return k;
}

Bytes payload(std::uint64_t i) {
  ByteWriter w;
  w.str("record").u64(i);
  return std::move(w).bytes();
}

std::vector<Transaction> txs_for(const Chain& c, std::size_t n, std::uint64_t ts) {
  std::vector<Transaction> out;
  auto seq = c.next_sequence(admin().id);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_transaction(admin(), "store", payload(seq + i), seq + i, ts));
  return out;
}

Chain build_chain(std::size_t blocks, TargetBits bits) {
  auto c = Chain::create(admin(), {}, 1000, bits);
  for (std::size_t h = 1; h <= blocks; ++h) c.mine_and_append(txs_for(c, 1 + h % 3, 1000 + h), 1000 + 60 * h);
  return c;
}

// Textbook recursive Merkle construction over explicit byte concatenation.
Hash256 merkle_oracle(std::vector<Hash256> nodes) {
  if (nodes.size() == 1) return nodes[0];
  if (nodes.size() % 2) nodes.push_back(nodes.back());
  std::vector<Hash256> up;
  for (std::size_t i = 0; i < nodes.size(); i += 2) {
    Bytes cat(nodes[i].begin(), nodes[i].end());
    cat.insert(cat.end(), nodes[i + 1].begin(), nodes[i + 1].end());
    up.push_back(sha256(cat));
  }
  return merkle_oracle(up);
}

// Compares the hash against 2^(256-d) built as an explicit 256-bit integer.
bool target_oracle(const Hash256& h, TargetBits bits) {
  unsigned z = bits >> 16, f = bits & 0xffff;
  std::array<std::uint8_t, 33> target{};  // 264-bit big-endian so 2^256 fits
  if (f == 0) {
    unsigned bit = 256 - z;  // set bit `bit` counting from the least significant end
    target[32 - bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  } else {
    auto mant = static_cast<std::uint64_t>(std::floor(std::exp2l(64.0L - f / 65536.0L)));
    unsigned shift = 192 - z;
    for (unsigned i = 0; i < 64; ++i) {
      if ((mant >> i) & 1u) {
        unsigned bit = shift + i;
        target[32 - bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
      }
    }
  }
  std::array<std::uint8_t, 33> value{};
  std::copy(h.begin(), h.end(), value.begin() + 1);
  return value < target;
}

std::vector<ViolationKind> kinds(const std::vector<Violation>& v) {
  std::vector<ViolationKind> out;
  for (const auto& x : v) out.push_back(x.kind);
  return out;
}

void remine(Block& b) {
  auto r = mine(b.txs, b.header.prev_hash, b.header.target_bits, b.header.timestamp);
  b.header.nonce = r.block.header.nonce;
}

}  // namespace

TEST(Encoding, TransactionRoundTrip) {
  auto tx = make_transaction(admin(), "store", payload(3), 7, 99);
  EXPECT_EQ(Transaction::decode(tx.encode()), tx);
  EXPECT_TRUE(crypto::verify(tx.sender, tx.signing_bytes(), tx.signature));
  auto bytes = tx.encode();
  bytes.push_back(0);
  EXPECT_THROW(Transaction::decode(bytes), DecodeError);
}

TEST(Encoding, HeaderIsBigEndianFixedWidth) {
  BlockHeader h;
  h.version = 1;
  h.timestamp = 0x0102030405060708ULL;
  h.target_bits = 0x000c0000;
  h.nonce = 0xA1;
  auto b = h.encode();
  ASSERT_EQ(b.size(), BlockHeader::kEncodedSize);
  EXPECT_EQ(b[3], 1);
  EXPECT_EQ(b[68], 0x01);
  EXPECT_EQ(b[75], 0x08);
  EXPECT_EQ(b[77], 0x0c);
  EXPECT_EQ(b[87], 0xA1);
}

TEST(Merkle, SingleLeafIsItsOwnRoot) {
  std::vector<Transaction> one{make_transaction(admin(), "a", {}, 1, 1)};
  EXPECT_EQ(merkle_root(one), one[0].hash());
  EXPECT_THROW(merkle_root(std::vector<Transaction>{}), std::domain_error);
}

TEST(Merkle, OrderSensitive) {
  std::vector<Transaction> t{make_transaction(admin(), "a", {}, 1, 1), make_transaction(admin(), "b", {}, 2, 1)};
  auto r1 = merkle_root(t);
  std::swap(t[0], t[1]);
  EXPECT_NE(r1, merkle_root(t));
}

TEST(Merkle, MatchesRecursiveOracleForManySizes) {
  std::vector<Transaction> t;
  for (std::uint64_t n = 1; n <= 17; ++n) {
    t.push_back(make_transaction(admin(), "m", payload(n), n, n));
    std::vector<Hash256> leaves;
    for (const auto& x : t) leaves.push_back(sha256(x.encode()));
    EXPECT_EQ(merkle_root(t), merkle_oracle(leaves)) << n;
  }
}

TEST(Merkle, InclusionProofs) {
  std::vector<Transaction> t;
  for (std::uint64_t n = 1; n <= 7; ++n) t.push_back(make_transaction(admin(), "m", payload(n), n, n));
  auto root = merkle_root(t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto proof = merkle_proof(t, i);
    EXPECT_TRUE(verify_merkle_proof(t[i].hash(), proof, root)) << i;
    auto absent = make_transaction(admin(), "m", payload(100), 100, 1);
    EXPECT_FALSE(verify_merkle_proof(absent.hash(), proof, root));
  }
}

TEST(Target, MatchesBigIntegerOracle) {
  std::mt19937_64 gen(5);
  const TargetBits samples[] = {0, kWholeBit, 3 * kWholeBit, 8 * kWholeBit, target_from_bits(7.5),
                                target_from_bits(12.25), target_from_bits(0.1), target_from_bits(20.9)};
  for (TargetBits bits : samples) {
    for (int i = 0; i < 3000; ++i) {
      Hash256 h{};
      for (auto& b : h) b = static_cast<std::uint8_t>(gen());
      // Bias towards small hashes so the boundary region is exercised.
      unsigned lead = static_cast<unsigned>(gen() % 24);
      for (unsigned k = 0; k < lead; ++k) h[k / 8] &= static_cast<std::uint8_t>(~(0x80u >> (k % 8)));
      ASSERT_EQ(meets_target(h, bits), target_oracle(h, bits)) << bits << " " << to_hex(h);
    }
  }
  Hash256 max{};
  max.fill(0xff);
  EXPECT_TRUE(meets_target(max, 0));
  EXPECT_THROW(meets_target(max, kMaxTargetBits + 1), std::invalid_argument);
}

TEST(Mine, EasiestTargetAcceptsNonceZero) {
  auto r = mine({make_transaction(admin(), "a", {}, 1, 1)}, Hash256{}, 0, 10);
  EXPECT_EQ(r.block.header.nonce, 0u);
  EXPECT_EQ(r.attempts, 1u);
}

TEST(Mine, MinedHeaderMeetsTargetAndIsDeterministic) {
  std::vector<Transaction> t{make_transaction(admin(), "a", payload(1), 1, 1)};
  auto a = mine(t, Hash256{}, kDefaultTargetBits, 50);
  auto b = mine(t, Hash256{}, kDefaultTargetBits, 50);
  EXPECT_TRUE(meets_target(a.block.hash(), kDefaultTargetBits));
  EXPECT_EQ(a.block, b.block);
  for (std::uint64_t n = 0; n < a.block.header.nonce; ++n) {
    auto h = a.block.header;
    h.nonce = n;
    ASSERT_FALSE(meets_target(h.hash(), kDefaultTargetBits));
  }
}

TEST(Mine, ParallelFindsTheSameSmallestNonce) {
  std::vector<Transaction> t{make_transaction(admin(), "a", payload(2), 1, 1)};
  for (std::uint64_t ts = 0; ts < 5; ++ts) {
    auto serial = mine(t, Hash256{}, 10 * kWholeBit, ts);
    auto parallel = mine(t, Hash256{}, 10 * kWholeBit, ts, 4);
    EXPECT_EQ(serial.block, parallel.block);
  }
}

TEST(Mine, EightBitAttemptsAverageNear256) {
  double total = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto r = mine({make_transaction(admin(), "pow", payload(i), i + 1, i)}, Hash256{}, 8 * kWholeBit, i);
    total += static_cast<double>(r.attempts);
  }
  double mean = total / 100;
  EXPECT_GE(mean, 256.0 / 3);
  EXPECT_LE(mean, 256.0 * 3);
}

TEST(Mine, ExhaustionIsReported) {
  EXPECT_THROW(mine({make_transaction(admin(), "a", {}, 1, 1)}, Hash256{}, 40 * kWholeBit, 0, 1, 100), MiningError);
}

TEST(Chain, GenesisOnlyVerifies) {
  auto c = Chain::create(admin(), {}, 5);
  EXPECT_EQ(c.height(), 0u);
  EXPECT_FALSE(c.verify());
  EXPECT_EQ(c.block(0).header.prev_hash, Hash256{});
  EXPECT_EQ(c.admin_id(), admin().id);
  EXPECT_TRUE(c.is_signer(admin().id));
  EXPECT_FALSE(c.is_signer(outsider().id));
}

TEST(Chain, FiftyBlocksVerifyAndIndex) {
  auto c = build_chain(50, kDefaultTargetBits);
  EXPECT_EQ(c.height(), 50u);
  EXPECT_FALSE(c.verify());
  for (std::uint64_t h = 0; h <= 50; ++h) EXPECT_EQ(c.find(c.recorded_hash(h)), h);
  for (std::uint64_t h = 1; h <= 50; ++h) EXPECT_EQ(c.block(h).header.prev_hash, c.recorded_hash(h - 1));
}

TEST(Chain, NonceTamperReportsItsHeight) {
  auto c = build_chain(20, 8 * kWholeBit);
  for (std::uint64_t target : {10u, 20u, 1u}) {
    auto t = c;
    t.mutable_block_for_test(target).header.nonce += 1;
    auto f = t.verify();
    ASSERT_TRUE(f);
    EXPECT_EQ(f->height, target);
  }
}

TEST(Validate, FreshBlockIsClean) {
  auto c = build_chain(2, 8 * kWholeBit);
  auto r = mine(txs_for(c, 2, 5000), c.tip_hash(), c.target_bits(), 5000);
  EXPECT_TRUE(c.validate_block(r.block).empty());
}

TEST(Validate, EachTamperYieldsExactlyItsViolation) {
  auto c = build_chain(2, 8 * kWholeBit);
  auto fresh = [&] { return mine(txs_for(c, 3, 5000), c.tip_hash(), c.target_bits(), 5000).block; };
  using K = ViolationKind;

  auto b = fresh();
  b.txs[1].payload[0] ^= 1;
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::MerkleRoot});

  b = fresh();
  b.header.prev_hash[0] ^= 1;
  remine(b);
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::PrevLink});

  b = fresh();
  b.header.timestamp = 1;
  remine(b);
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::Timestamp});

  b = fresh();
  b.txs[0].signature[5] ^= 1;
  b.header.merkle_root = merkle_root(b.txs);
  remine(b);
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::BadSignature});

  b = fresh();
  b.txs[2] = make_transaction(outsider(), "store", payload(1), 1, 1);
  b.header.merkle_root = merkle_root(b.txs);
  remine(b);
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::UnknownSigner});

  b = fresh();
  b.header.target_bits = 0;
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::ProofOfWork});

  // Nonce search for a header that fails the target.
  b = fresh();
  do {
    ++b.header.nonce;
  } while (meets_target(b.hash(), b.header.target_bits));
  EXPECT_EQ(kinds(c.validate_block(b)), std::vector<K>{K::ProofOfWork});
}

TEST(Validate, ReplayedTransactionIsASequenceViolation) {
  auto c = build_chain(3, 8 * kWholeBit);
  auto old = c.block(2).txs[0];
  auto r = mine({old}, c.tip_hash(), c.target_bits(), 9000);
  EXPECT_EQ(kinds(c.validate_block(r.block)), std::vector<ViolationKind>{ViolationKind::Sequence});
  EXPECT_THROW(c.append(r.block), ValidationError);
  auto seq = c.next_sequence(admin().id);
  std::vector<Transaction> dup{make_transaction(admin(), "s", {}, seq, 1), make_transaction(admin(), "s", {}, seq, 1)};
  r = mine(dup, c.tip_hash(), c.target_bits(), 9000);
  EXPECT_EQ(kinds(c.validate_block(r.block)), std::vector<ViolationKind>{ViolationKind::Sequence});
}

TEST(Persist, RoundTripAndAppendOnlyFile) {
  auto c = build_chain(5, 8 * kWholeBit);
  auto path = std::filesystem::temp_directory_path() / "sleepguard_ledger_test.chain";
  save_chain(c, path);
  auto back = load_chain(path);
  EXPECT_FALSE(back.verify());
  EXPECT_EQ(back.blocks(), c.blocks());
  EXPECT_EQ(back.next_sequence(admin().id), c.next_sequence(admin().id));

  auto r = back.mine_and_append(txs_for(back, 1, 99999), 99999);
  append_block_file(path, r.block);
  auto again = load_chain(path);
  EXPECT_FALSE(again.verify());
  EXPECT_EQ(again.height(), 6u);
  std::filesystem::remove(path);
}

TEST(Persist, AnySingleBitFlipIsDetected) {
  auto c = build_chain(3, 8 * kWholeBit);
  auto bytes = serialize_chain(c);
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 1500; ++trial) {
    auto bad = bytes;
    std::size_t bit = gen() % (bad.size() * 8);
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    bool detected = false;
    try {
      detected = deserialize_chain(bad).verify().has_value();
    } catch (const std::exception&) {
      detected = true;
    }
    ASSERT_TRUE(detected) << "bit " << bit;
  }
}

TEST(Adjust, ProportionalAndClamped) {
  std::vector<BlockHeader> hs(5);
  for (std::size_t i = 0; i < hs.size(); ++i) hs[i].timestamp = 600 * i;
  EXPECT_EQ(adjust_target(hs, 600, kDefaultTargetBits), kDefaultTargetBits);
  EXPECT_EQ(adjust_target(hs, 300, kDefaultTargetBits), 11 * kWholeBit);
  EXPECT_EQ(adjust_target(hs, 60, kDefaultTargetBits), 11 * kWholeBit);  // clamped to one halving
  EXPECT_EQ(adjust_target(hs, 1200, kDefaultTargetBits), 13 * kWholeBit);
  EXPECT_EQ(adjust_target(hs, 1e6, kDefaultTargetBits), 13 * kWholeBit);
  EXPECT_THROW(adjust_target(std::span(hs).first(1), 600, kDefaultTargetBits), std::invalid_argument);
}

TEST(Adjust, SlowerBlocksNeverMakeTheTargetHarder) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 2000; ++i) {
    std::vector<BlockHeader> a(2 + gen() % 8), b;
    std::uint64_t ts = 0;
    for (auto& h : a) h.timestamp = ts += gen() % 1200;
    b = a;
    std::uint64_t extra = gen() % 600;
    for (std::size_t k = 1; k < b.size(); ++k) b[k].timestamp += extra * k;
    auto current = static_cast<TargetBits>(gen() % (30 * kWholeBit));
    EXPECT_LE(adjust_target(b, 600, current), adjust_target(a, 600, current));
  }
}

TEST(Fork, LongestValidChainWinsWithFirstSeenTieBreak) {
  auto base = build_chain(2, 8 * kWholeBit);
  auto a = base, b = base, longer = base;
  a.mine_and_append(txs_for(a, 1, 7000), 7000);
  b.mine_and_append(txs_for(b, 2, 7001), 7001);
  longer.mine_and_append(txs_for(longer, 1, 7002), 7002);
  longer.mine_and_append(txs_for(longer, 1, 7003), 7003);
  std::vector<const Chain*> tie{&a, &b};
  EXPECT_EQ(select_chain(tie), 0u);
  std::vector<const Chain*> all{&a, &b, &longer};
  EXPECT_EQ(select_chain(all), 2u);
  auto broken = longer;
  broken.mutable_block_for_test(3).txs[0].payload.push_back(1);
  std::vector<const Chain*> with_broken{&a, &broken};
  EXPECT_EQ(select_chain(with_broken), 0u);
}

TEST(Concurrency, ReadersRunAlongsideAppends) {
  auto c = Chain::create(admin(), {}, 0, 4 * kWholeBit);
  std::atomic<bool> stop{false};
  std::atomic<std::size_t> reads{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 3; ++i) {
    readers.emplace_back([&] {
      while (!stop) {
        auto h = c.height();
        auto b = c.block(h);
        EXPECT_EQ(b.hash(), c.recorded_hash(h));
        ++reads;
      }
    });
  }
  for (std::uint64_t i = 1; i <= 30; ++i) {
    c.mine_and_append(txs_for(c, 1, i), i);
    std::size_t before = reads;
    while (reads == before) std::this_thread::yield();
  }
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(c.height(), 30u);
  EXPECT_FALSE(c.verify());
  EXPECT_GT(reads.load(), 0u);
}

TEST(Explorer, OneLinePerBlock) {
  auto c = build_chain(3, 4 * kWholeBit);
  auto dump = explorer_dump(c);
  EXPECT_EQ(std::count(dump.begin(), dump.end(), '\n'), 5);
  EXPECT_NE(dump.find(to_hex(c.recorded_hash(3))), std::string::npos);
  EXPECT_NE(dump.find(to_hex(admin().id).substr(0, 16)), std::string::npos);
}
