#pragma once

// Three-party protocol over an in-process bus: the edge device uploads
// records, requesters read them, and the admin node verifies, checks the
// access policy, publishes to the chain and re-seals responses.
//
// Every wire body is signed by its sender and then sealed to its recipient.
// The signature travels inside the envelope, so an observer learns neither
// the payload nor a signature that could confirm a guess about it.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sleepguard/contracts.hpp"
#include "sleepguard/crypto.hpp"
#include "sleepguard/ledger.hpp"

namespace sleepguard::gateway {

using crypto::KeyId;
using crypto::KeyPair;
using crypto::PublicKey;

enum class MessageKind : std::uint8_t {
  UploadRequest = 1,
  UploadAck,
  DataTx,
  Receipt,
  AccessRequest,
  DataResponse,
  Denial,
  PolicyRequest,
};

std::string_view kind_name(MessageKind k);

struct WireMessage {
  MessageKind kind = MessageKind::Denial;
  KeyId sender{};
  KeyId recipient{};
  Bytes envelope;  // sealed (sender public key, payload, signature)

  Bytes encode() const;
  static WireMessage decode(std::span<const std::uint8_t> in);  // throws DecodeError
};

struct OpenedMessage {
  MessageKind kind;
  PublicKey sender_key{};
  Bytes payload;
};

class SignatureError : public std::runtime_error {
 public:
  SignatureError() : std::runtime_error("message signature does not verify") {}
};

class IntegrityError : public std::runtime_error {
 public:
  IntegrityError() : std::runtime_error("response failed integrity check") {}
};

// Bytes covered by the sender signature: domain, kind, recipient, payload.
Bytes message_signing_bytes(MessageKind kind, const KeyId& recipient, std::span<const std::uint8_t> payload);

// `claimed` is the public key written into the body; it differs from
// signer.public_key only when forging.
WireMessage make_message(const KeyPair& signer, const PublicKey& claimed, const PublicKey& recipient, MessageKind kind,
                         std::span<const std::uint8_t> payload);
inline WireMessage make_message(const KeyPair& signer, const PublicKey& recipient, MessageKind kind,
                                std::span<const std::uint8_t> payload) {
  return make_message(signer, signer.public_key, recipient, kind, payload);
}

// Throws DecryptionError if the envelope does not open, SignatureError if the
// signature or the sender binding fails (unless check_signature is false).
OpenedMessage open_message(const KeyPair& recipient, const WireMessage& m, bool check_signature = true);

// Per-recipient FIFO queues plus a capture of every encoded message.
class Bus {
 public:
  using Interceptor = std::function<void(WireMessage&)>;

  void post(WireMessage m);
  std::optional<WireMessage> poll(const KeyId& recipient);
  std::size_t pending(const KeyId& recipient) const;
  const std::vector<Bytes>& capture() const { return capture_; }
  void set_interceptor(Interceptor f) { interceptor_ = std::move(f); }
  // u32 length-prefixed wire messages, one after another.
  void write_capture(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mu_;
  std::map<KeyId, std::deque<WireMessage>> queues_;
  std::vector<Bytes> capture_;
  Interceptor interceptor_;
};

// Test hooks; both off in a real deployment.
struct Hooks {
  bool disable_signature_check = false;
  bool store_plaintext_on_chain = false;
};

struct Receipt {
  Hash256 block_hash{};
  std::uint64_t height = 0;
  Hash256 tx_hash{};
};

struct UploadResult {
  bool accepted = false;
  std::string stage;  // "signature", "access", "contract" or "stored"
  std::string reason;
  std::optional<Receipt> receipt;
};

enum class Query : std::uint8_t { Latest, Averages };

struct RetrieveResult {
  bool granted = false;
  std::string reason;
  Bytes plaintext;
  std::optional<contracts::PhysioRecord> record;
  std::optional<contracts::Averages> averages;
};

struct PolicyResult {
  bool granted = false;
  std::string reason;
  std::optional<Receipt> receipt;
};

// Protocol aborts that never reach the chain, kept by the admin node.
struct AbortEvent {
  std::string flow;
  KeyId sender{};
  std::string reason;
};

Bytes encode_averages(const contracts::Averages& a);
contracts::Averages decode_averages(std::span<const std::uint8_t> in);

class Deployment {
 public:
  // Creates the chain and, when `deploy` is set, deploys both contracts with
  // `owner` as the user and registered edge key.
  Deployment(KeyPair admin, KeyPair owner, ledger::TargetBits bits = 0, std::uint64_t genesis_time = 0,
             bool deploy = true, Hooks hooks = {});
  // Resumes from an existing chain; contract state is replayed.
  Deployment(KeyPair admin, KeyPair owner, ledger::Chain chain, Hooks hooks = {});

  Receipt deploy_contracts();

  UploadResult upload(const KeyPair& edge, const contracts::PhysioRecord& record);
  // Upload attempt signed by `signer` while claiming the identity `claimed`.
  UploadResult upload_as(const KeyPair& signer, const PublicKey& claimed, const contracts::PhysioRecord& record);

  // Throws IntegrityError when the response fails to open or verify.
  RetrieveResult retrieve(const KeyPair& requester, Query q = Query::Latest, std::uint64_t now = 0);

  PolicyResult add_role(const KeyPair& caller, const std::string& name,
                        const std::vector<contracts::Permission>& perms = {});
  PolicyResult remove_role(const KeyPair& caller, const std::string& name);
  PolicyResult add_bearer(const KeyPair& caller, const KeyId& bearer, const std::string& role);
  PolicyResult remove_bearer(const KeyPair& caller, const KeyId& bearer);

  const ledger::Chain& chain() const { return chain_; }
  const contracts::Engine& engine() const { return engine_; }
  Bus& bus() { return bus_; }
  const std::vector<AbortEvent>& aborts() const { return aborts_; }
  const KeyPair& admin() const { return admin_; }
  const KeyPair& owner() const { return owner_; }
  Hooks& hooks() { return hooks_; }
  void set_threads(unsigned n) { threads_ = n; }
  void set_clock(std::function<std::uint64_t()> clock) { clock_ = std::move(clock); }

 private:
  contracts::Opener opener();
  std::pair<Receipt, std::vector<contracts::AuditEvent>> submit(std::vector<contracts::Call> calls);
  std::optional<OpenedMessage> admin_receive(MessageKind expected, const char* flow);
  OpenedMessage client_receive(const KeyPair& me);
  PolicyResult policy_call(const KeyPair& caller, std::string function, std::vector<Bytes> args);
  std::uint64_t next_time();

  KeyPair admin_;
  KeyPair owner_;
  Hooks hooks_;
  ledger::Chain chain_;
  contracts::Engine engine_;
  Bus bus_;
  std::vector<AbortEvent> aborts_;
  std::recursive_mutex mu_;
  unsigned threads_ = 1;
  std::uint64_t time_ = 0;
  std::function<std::uint64_t()> clock_;
};

// Deployment state on disk: admin.key, owner.key and chain.bin.
void save_deployment(Deployment& d, const std::filesystem::path& dir);
Deployment load_deployment(const std::filesystem::path& dir, Hooks hooks = {});

struct ThreatOutcome {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

// Runs the four attack scenarios against a fresh deployment.
std::vector<ThreatOutcome> threat_suite(Hooks hooks = {}, ledger::TargetBits bits = 0);

struct TimingRow {
  std::string function;
  double min_s = 0;
  double max_s = 0;
  double mean_s = 0;
};

struct TimingReport {
  ledger::TargetBits bits = 0;
  std::size_t trials = 0;
  std::vector<TimingRow> rows;  // deploy, add_role, add_bearer, create_record
};

// Wall time from submission to receipt for each contract function.
TimingReport tt_metrics(std::size_t trials, ledger::TargetBits bits, std::uint64_t seed = 1);

// Sample record used by the harnesses.
contracts::PhysioRecord sample_record(std::uint64_t timestamp, std::uint64_t seed);

}  // namespace sleepguard::gateway
