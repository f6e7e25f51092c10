#include "sleepguard/crypto.hpp"

#include <sodium.h>

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sleepguard::crypto {

namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

constexpr std::size_t kSessionKeyBytes = crypto_aead_xchacha20poly1305_ietf_KEYBYTES;
constexpr std::size_t kNonceBytes = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
constexpr std::size_t kTagBytes = crypto_aead_xchacha20poly1305_ietf_ABYTES;
constexpr std::size_t kWrappedBytes = kSessionKeyBytes + crypto_box_SEALBYTES;

Bytes associated_data(const SealedEnvelope& env) {
  ByteWriter w;
  w.u8(env.version).raw(env.wrapped_key);
  return std::move(w).bytes();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PublicKey public_from_hex(const std::string& hex) {
  Bytes b;
  try {
    b = from_hex(hex);
  } catch (const std::exception&) {
    throw KeyError("public key is not valid hex");
  }
  if (b.size() != kPublicKeyBytes) throw KeyError("public key must be 32 bytes");
  PublicKey pk{};
  std::copy(b.begin(), b.end(), pk.begin());
  return pk;
}

nlohmann::json key_file_json(std::string_view kind) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = kind;
  j["algorithm"] = kAlgorithm;
  return j;
}

nlohmann::json parse_key_file(const std::string& text, std::string_view kind) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw KeyError("key file is not JSON");
  }
  if (!j.is_object() || j.value("version", 0) != 1) throw KeyError("unsupported key file version");
  if (j.value("algorithm", "") != kAlgorithm) throw KeyError("unsupported key algorithm");
  if (j.value("kind", "") != kind) throw KeyError("expected a " + std::string(kind) + " key file");
  return j;
}

}  // namespace

KeyId key_id(const PublicKey& pub) { return sha256(pub); }

KeyPair KeyPair::generate() {
  ensure_sodium();
  KeyPair kp;
  kp.secret_key.resize(kSecretKeyBytes);
  crypto_sign_keypair(kp.public_key.data(), kp.secret_key.data());
  kp.id = key_id(kp.public_key);
  return kp;
}

KeyPair KeyPair::from_seed(std::span<const std::uint8_t, kSeedBytes> seed) {
  ensure_sodium();
  KeyPair kp;
  kp.secret_key.resize(kSecretKeyBytes);
  crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed.data());
  kp.id = key_id(kp.public_key);
  return kp;
}

KeyPair KeyPair::deterministic(std::string_view label, std::uint64_t n) {
  ByteWriter w;
  w.str(label).u64(n);
  auto seed = sha256(w.bytes());
  return from_seed(seed);
}

Signature sign(const KeyPair& kp, std::span<const std::uint8_t> message) {
  if (kp.secret_key.size() != kSecretKeyBytes) throw KeyError("secret key must be 64 bytes");
  ensure_sodium();
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), kp.secret_key.data());
  return sig;
}

bool verify(const PublicKey& pub, std::span<const std::uint8_t> message, const Signature& sig) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(), pub.data()) == 0;
}

bool verify(std::span<const std::uint8_t> pub, std::span<const std::uint8_t> message,
            std::span<const std::uint8_t> sig) {
  if (pub.size() != kPublicKeyBytes) throw KeyError("public key must be 32 bytes");
  if (sig.size() != kSignatureBytes) return false;
  PublicKey pk{};
  Signature s{};
  std::copy(pub.begin(), pub.end(), pk.begin());
  std::copy(sig.begin(), sig.end(), s.begin());
  return verify(pk, message, s);
}

Bytes SealedEnvelope::encode() const {
  ByteWriter w;
  w.u8(version).blob(wrapped_key).blob(nonce).blob(ciphertext).blob(tag);
  return std::move(w).bytes();
}

SealedEnvelope SealedEnvelope::decode(std::span<const std::uint8_t> wire) {
  try {
    ByteReader r(wire);
    SealedEnvelope env;
    env.version = r.u8();
    env.wrapped_key = r.blob();
    env.nonce = r.blob();
    env.ciphertext = r.blob();
    env.tag = r.blob();
    r.expect_end();
    return env;
  } catch (const DecodeError&) {
    throw DecryptionError();
  }
}

SealedEnvelope seal(const PublicKey& recipient, std::span<const std::uint8_t> plaintext) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> x_pub{};
  if (crypto_sign_ed25519_pk_to_curve25519(x_pub.data(), recipient.data()) != 0) {
    throw KeyError("recipient public key is not a valid curve point");
  }
  std::array<std::uint8_t, kSessionKeyBytes> session_key{};
  crypto_aead_xchacha20poly1305_ietf_keygen(session_key.data());

  SealedEnvelope env;
  env.wrapped_key.resize(kWrappedBytes);
  crypto_box_seal(env.wrapped_key.data(), session_key.data(), session_key.size(), x_pub.data());
  env.nonce.resize(kNonceBytes);
  randombytes_buf(env.nonce.data(), env.nonce.size());
  env.ciphertext.resize(plaintext.size());
  env.tag.resize(kTagBytes);
  auto ad = associated_data(env);
  crypto_aead_xchacha20poly1305_ietf_encrypt_detached(env.ciphertext.data(), env.tag.data(), nullptr, plaintext.data(),
                                                      plaintext.size(), ad.data(), ad.size(), nullptr,
                                                      env.nonce.data(), session_key.data());
  sodium_memzero(session_key.data(), session_key.size());
  return env;
}

Bytes open(const KeyPair& recipient, const SealedEnvelope& env) {
  ensure_sodium();
  if (recipient.secret_key.size() != kSecretKeyBytes) throw KeyError("secret key must be 64 bytes");
  if (env.version != kEnvelopeVersion || env.wrapped_key.size() != kWrappedBytes || env.nonce.size() != kNonceBytes ||
      env.tag.size() != kTagBytes) {
    throw DecryptionError();
  }
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> x_pub{};
  std::array<std::uint8_t, crypto_box_SECRETKEYBYTES> x_sec{};
  if (crypto_sign_ed25519_pk_to_curve25519(x_pub.data(), recipient.public_key.data()) != 0 ||
      crypto_sign_ed25519_sk_to_curve25519(x_sec.data(), recipient.secret_key.data()) != 0) {
    throw KeyError("recipient key cannot be converted for decryption");
  }
  std::array<std::uint8_t, kSessionKeyBytes> session_key{};
  int rc = crypto_box_seal_open(session_key.data(), env.wrapped_key.data(), env.wrapped_key.size(), x_pub.data(),
                                x_sec.data());
  sodium_memzero(x_sec.data(), x_sec.size());
  if (rc != 0) throw DecryptionError();

  Bytes plain(env.ciphertext.size());
  auto ad = associated_data(env);
  rc = crypto_aead_xchacha20poly1305_ietf_decrypt_detached(plain.data(), nullptr, env.ciphertext.data(),
                                                          env.ciphertext.size(), env.tag.data(), ad.data(), ad.size(),
                                                          env.nonce.data(), session_key.data());
  sodium_memzero(session_key.data(), session_key.size());
  if (rc != 0) throw DecryptionError();
  return plain;
}

std::string keypair_to_json(const KeyPair& kp) {
  auto j = key_file_json("keypair");
  j["public"] = to_hex(kp.public_key);
  j["private"] = to_hex(kp.secret_key);
  return j.dump(1);
}

KeyPair keypair_from_json(const std::string& text) {
  auto j = parse_key_file(text, "keypair");
  KeyPair kp;
  kp.public_key = public_from_hex(j.value("public", ""));
  try {
    kp.secret_key = from_hex(j.value("private", ""));
  } catch (const std::exception&) {
    throw KeyError("private key is not valid hex");
  }
  if (kp.secret_key.size() != kSecretKeyBytes) throw KeyError("private key must be 64 bytes");
  // Ed25519 secret keys carry their public half in the last 32 bytes.
  if (!std::equal(kp.public_key.begin(), kp.public_key.end(), kp.secret_key.begin() + 32)) {
    throw KeyError("private key does not match public key");
  }
  kp.id = key_id(kp.public_key);
  return kp;
}

std::string public_key_to_json(const PublicKey& pub) {
  auto j = key_file_json("public");
  j["public"] = to_hex(pub);
  return j.dump(1);
}

PublicKey public_key_from_json(const std::string& text) {
  auto j = parse_key_file(text, "public");
  return public_from_hex(j.value("public", ""));
}

void save_keypair(const KeyPair& kp, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << keypair_to_json(kp) << '\n';
  out.close();
  std::filesystem::permissions(path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write,
                               std::filesystem::perm_options::replace);
}

KeyPair load_keypair(const std::filesystem::path& path) { return keypair_from_json(read_file(path)); }

}  // namespace sleepguard::crypto
