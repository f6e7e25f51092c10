#pragma once

// Signing keys, detached signatures and public-key sealing of arbitrary-size
// payloads. Ed25519 keys sign; the same keys are converted to X25519 to wrap
// a per-message XChaCha20-Poly1305 key.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "sleepguard/bytes.hpp"

namespace sleepguard::crypto {

inline constexpr std::size_t kPublicKeyBytes = 32;
inline constexpr std::size_t kSecretKeyBytes = 64;
inline constexpr std::size_t kSignatureBytes = 64;
inline constexpr std::size_t kSeedBytes = 32;
inline constexpr std::uint8_t kEnvelopeVersion = 1;
inline constexpr std::string_view kAlgorithm = "ed25519/x25519-sealedbox/xchacha20poly1305";

using KeyId = Hash256;
using PublicKey = std::array<std::uint8_t, kPublicKeyBytes>;
using Signature = std::array<std::uint8_t, kSignatureBytes>;

class KeyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Same message for every failure cause.
class DecryptionError : public std::runtime_error {
 public:
  DecryptionError() : std::runtime_error("envelope could not be opened") {}
};

KeyId key_id(const PublicKey& pub);

struct KeyPair {
  PublicKey public_key{};
  Bytes secret_key;  // kSecretKeyBytes
  KeyId id{};

  static KeyPair generate();  // OS entropy
  static KeyPair from_seed(std::span<const std::uint8_t, kSeedBytes> seed);
  // Test convenience: seed bytes derived from a label and a counter.
  static KeyPair deterministic(std::string_view label, std::uint64_t n = 0);
};

Signature sign(const KeyPair& kp, std::span<const std::uint8_t> message);
bool verify(const PublicKey& pub, std::span<const std::uint8_t> message, const Signature& sig);
// Throws KeyError if `pub` is not exactly kPublicKeyBytes.
bool verify(std::span<const std::uint8_t> pub, std::span<const std::uint8_t> message,
            std::span<const std::uint8_t> sig);

struct SealedEnvelope {
  std::uint8_t version = kEnvelopeVersion;
  Bytes wrapped_key;
  Bytes nonce;
  Bytes ciphertext;
  Bytes tag;

  Bytes encode() const;
  static SealedEnvelope decode(std::span<const std::uint8_t> wire);  // throws DecryptionError
};

SealedEnvelope seal(const PublicKey& recipient, std::span<const std::uint8_t> plaintext);
Bytes open(const KeyPair& recipient, const SealedEnvelope& env);

inline Bytes seal_bytes(const PublicKey& recipient, std::span<const std::uint8_t> plaintext) {
  return seal(recipient, plaintext).encode();
}
inline Bytes open_bytes(const KeyPair& recipient, std::span<const std::uint8_t> wire) {
  return open(recipient, SealedEnvelope::decode(wire));
}

// Key files: JSON with version, algorithm, public and (optionally) private hex.
std::string keypair_to_json(const KeyPair& kp);
KeyPair keypair_from_json(const std::string& text);
std::string public_key_to_json(const PublicKey& pub);
PublicKey public_key_from_json(const std::string& text);
void save_keypair(const KeyPair& kp, const std::filesystem::path& path);
KeyPair load_keypair(const std::filesystem::path& path);

}  // namespace sleepguard::crypto
