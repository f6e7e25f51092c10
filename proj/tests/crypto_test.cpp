#include <gtest/gtest.h>

#include <set>

#include "sleepguard/crypto.hpp"

using namespace sleepguard;
using namespace sleepguard::crypto;

namespace {

Bytes message(std::size_t n, std::uint8_t start = 0) {
  Bytes m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = static_cast<std::uint8_t>(start + i * 31);
  return m;
}

}  // namespace

TEST(Keys, SeededGenerationIsDeterministic) {
  auto a = KeyPair::deterministic("alice");
  auto b = KeyPair::deterministic("alice");
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.secret_key, b.secret_key);
  EXPECT_EQ(key_id(a.public_key), a.id);
  EXPECT_EQ(a.id, sha256(a.public_key));
}

TEST(Keys, DistinctSeedsGiveDistinctIds) {
  std::set<KeyId> ids;
  for (std::uint64_t i = 0; i < 1000; ++i) ids.insert(KeyPair::deterministic("k", i).id);
  EXPECT_EQ(ids.size(), 1000u);
  EXPECT_NE(KeyPair::generate().id, KeyPair::generate().id);
}

TEST(Sign, RoundTripAndBitFlip) {
  auto kp = KeyPair::deterministic("signer");
  auto m = message(1024);
  auto sig = sign(kp, m);
  EXPECT_TRUE(verify(kp.public_key, m, sig));
  for (std::size_t bit : {0u, 4095u, 8191u}) {
    auto bad = m;
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    EXPECT_FALSE(verify(kp.public_key, bad, sig));
  }
  auto bad_sig = sig;
  bad_sig[10] ^= 1;
  EXPECT_FALSE(verify(kp.public_key, m, bad_sig));
}

TEST(Sign, CrossPairMatrix) {
  std::vector<KeyPair> keys;
  for (std::uint64_t i = 0; i < 10; ++i) keys.push_back(KeyPair::deterministic("matrix", i));
  auto m = message(77);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto sig = sign(keys[i], m);
    for (std::size_t j = 0; j < keys.size(); ++j) EXPECT_EQ(verify(keys[j].public_key, m, sig), i == j) << i << j;
  }
}

TEST(Sign, MalformedKeyMaterial) {
  auto kp = KeyPair::deterministic("x");
  auto m = message(8);
  auto sig = sign(kp, m);
  Bytes short_pub(kp.public_key.begin(), kp.public_key.begin() + 31);
  EXPECT_THROW(verify(short_pub, m, sig), KeyError);
  KeyPair broken = kp;
  broken.secret_key.resize(10);
  EXPECT_THROW(sign(broken, m), KeyError);
}

TEST(Seal, RoundTripOneMebibyte) {
  auto kp = KeyPair::deterministic("recipient");
  auto m = message(1 << 20, 5);
  auto env = seal(kp.public_key, m);
  EXPECT_EQ(open(kp, env), m);
  EXPECT_EQ(open_bytes(kp, env.encode()), m);
}

TEST(Seal, EmptyPlaintext) {
  auto kp = KeyPair::deterministic("recipient");
  EXPECT_TRUE(open_bytes(kp, seal_bytes(kp.public_key, {})).empty());
}

TEST(Seal, ProbabilisticCiphertexts) {
  auto kp = KeyPair::deterministic("recipient");
  auto m = message(64);
  auto a = seal(kp.public_key, m);
  auto b = seal(kp.public_key, m);
  EXPECT_NE(a.ciphertext, b.ciphertext);
  EXPECT_NE(a.encode(), b.encode());
  EXPECT_FALSE(contains_bytes(a.encode(), m));
}

TEST(Seal, WrongKeyFails) {
  auto kp = KeyPair::deterministic("recipient");
  auto other = KeyPair::deterministic("other");
  auto wire = seal_bytes(kp.public_key, message(100));
  EXPECT_THROW(open_bytes(other, wire), DecryptionError);
}

TEST(Seal, EverySingleByteTamperFails) {
  auto kp = KeyPair::deterministic("recipient");
  auto wire = seal_bytes(kp.public_key, message(40));
  std::string first_message;
  for (std::size_t i = 0; i < wire.size(); ++i) {
    auto bad = wire;
    bad[i] ^= 0x01;
    try {
      open_bytes(kp, bad);
      FAIL() << "tamper at byte " << i << " went unnoticed";
    } catch (const DecryptionError& e) {
      if (first_message.empty()) first_message = e.what();
      EXPECT_EQ(first_message, e.what());
    }
  }
  auto truncated = wire;
  truncated.pop_back();
  EXPECT_THROW(open_bytes(kp, truncated), DecryptionError);
  auto extended = wire;
  extended.push_back(0);
  EXPECT_THROW(open_bytes(kp, extended), DecryptionError);
}

TEST(KeyFile, RoundTripAndValidation) {
  auto kp = KeyPair::deterministic("file");
  auto back = keypair_from_json(keypair_to_json(kp));
  EXPECT_EQ(back.id, kp.id);
  EXPECT_EQ(back.secret_key, kp.secret_key);
  EXPECT_EQ(public_key_from_json(public_key_to_json(kp.public_key)), kp.public_key);
  EXPECT_FALSE(public_key_to_json(kp.public_key).find(to_hex(kp.secret_key)) != std::string::npos);

  auto other = KeyPair::deterministic("other");
  auto mixed = keypair_to_json(kp);
  mixed.replace(mixed.find(to_hex(kp.public_key)), 64, to_hex(other.public_key));
  EXPECT_THROW(keypair_from_json(mixed), KeyError);
  EXPECT_THROW(keypair_from_json("not json"), KeyError);
  EXPECT_THROW(keypair_from_json(public_key_to_json(kp.public_key)), KeyError);
}
