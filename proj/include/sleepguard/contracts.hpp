#pragma once

// Contract state machines applied deterministically as blocks are appended:
// an access policy (owner, roles, bearers) and a physiological data store.
// Every call, granted or denied, leaves an audit event.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sleepguard/ledger.hpp"
#include "sleepguard/physio.hpp"

namespace sleepguard::contracts {

using crypto::KeyId;

inline constexpr std::string_view kAccessPolicy = "access-policy";
inline constexpr std::string_view kDataStore = "data-store";
inline constexpr std::uint64_t kDay = 24 * 3600;

enum class Permission : std::uint8_t { Retrieve, Averages };

std::string_view permission_name(Permission p);
std::optional<Permission> parse_permission(std::string_view s);
// Default set granted by add_role when none is named.
inline const std::set<Permission> kDefaultRolePermissions{Permission::Retrieve, Permission::Averages};

// Functions. access-policy: deploy(owner), add_role(name, [permission...]),
// remove_role(name), add_bearer(key, role), remove_bearer(key).
// data-store: deploy(writer), create_record(timestamp, sealed, digest),
// retrieve(), averages(now). The last two only record the read.
// Either contract: log_denial(action, reason) records a request the gateway
// refused before it reached the contract.
//
// A contract call as carried in a transaction payload. `caller` is the key id
// the admin node authenticated for this request.
struct Call {
  std::string contract;
  std::string function;
  KeyId caller{};
  std::vector<Bytes> args;

  Bytes encode() const;
  static Call decode(std::span<const std::uint8_t> in);  // throws DecodeError

  friend bool operator==(const Call&, const Call&) = default;
};

Bytes arg_str(std::string_view s);
Bytes arg_u64(std::uint64_t v);
Bytes arg_id(const KeyId& id);
std::string str_arg(const Bytes& b);
std::uint64_t u64_arg(const Bytes& b);
KeyId id_arg(const Bytes& b);

// Plaintext of one uploaded observation.
struct PhysioRecord {
  std::uint64_t timestamp = 0;
  SleepSample sample;
  StressState detected = StressState::LowNormal;
  std::string predicted;  // next-day outlook label, empty if none

  Bytes encode() const;
  static PhysioRecord decode(std::span<const std::uint8_t> in);

  friend bool operator==(const PhysioRecord&, const PhysioRecord&) = default;
};

struct StoredRecord {
  std::uint64_t timestamp = 0;
  Bytes sealed;  // sealed to the admin key
  Hash256 digest{};  // SHA-256 of the plaintext record
  std::uint64_t height = 0;
  std::optional<PhysioRecord> plain;  // filled when the engine holds an opener

  friend bool operator==(const StoredRecord&, const StoredRecord&) = default;
};

struct AuditEvent {
  std::uint64_t height = 0;
  std::uint32_t index = 0;
  std::string contract;
  std::string action;
  KeyId actor{};
  std::string subject;
  bool granted = false;
  std::string reason;

  friend bool operator==(const AuditEvent&, const AuditEvent&) = default;
};

struct AccessPolicyState {
  bool deployed = false;
  KeyId owner{};
  KeyId admin{};
  std::map<std::string, std::set<Permission>> roles;
  std::map<KeyId, std::string> bearers;

  friend bool operator==(const AccessPolicyState&, const AccessPolicyState&) = default;
};

struct DataStoreState {
  bool deployed = false;
  KeyId writer{};
  std::vector<StoredRecord> records;  // ascending timestamp; back() is the latest

  friend bool operator==(const DataStoreState&, const DataStoreState&) = default;
};

struct Decision {
  bool allowed = false;
  std::string reason;
};

struct Averages {
  std::size_t count = 0;
  SleepSample mean;
  StressState modal = StressState::LowNormal;
};

class ReadDenied : public std::runtime_error {
 public:
  explicit ReadDenied(const std::string& reason) : std::runtime_error(reason) {}
};

class EmptyStore : public std::runtime_error {
 public:
  EmptyStore() : std::runtime_error("data store holds no records") {}
};

using Opener = std::function<std::optional<PhysioRecord>(const StoredRecord&)>;

class Engine {
 public:
  explicit Engine(Opener opener = {}) : opener_(std::move(opener)) {}

  // Applies every contract transaction of a block; returns the audit events
  // it produced.
  std::vector<AuditEvent> apply_block(const ledger::Block& b, std::uint64_t height);
  AuditEvent apply(const ledger::Transaction& tx, std::uint64_t height, std::uint32_t index);

  static Engine replay(const ledger::Chain& chain, Opener opener = {});

  Decision check_access(const KeyId& caller, Permission p) const;
  // Throws ReadDenied or EmptyStore.
  const StoredRecord& retrieve_latest(const KeyId& caller) const;
  // Records with now - kDay < timestamp <= now. Needs opened records; throws
  // ReadDenied or EmptyStore when nothing falls in the window.
  Averages average_values(const KeyId& caller, std::uint64_t now) const;

  const AccessPolicyState& policy() const { return policy_; }
  const DataStoreState& store() const { return store_; }
  const std::vector<AuditEvent>& audit() const { return audit_; }

  bool same_state(const Engine& o) const {
    return policy_ == o.policy_ && store_ == o.store_ && audit_ == o.audit_;
  }

 private:
  void access_call(const Call& call, AuditEvent& ev);
  void store_call(const Call& call, AuditEvent& ev, std::uint64_t height);

  Opener opener_;
  std::optional<KeyId> gateway_;  // chain admin, learned from the genesis block
  AccessPolicyState policy_;
  DataStoreState store_;
  std::vector<AuditEvent> audit_;
};

Averages average_of(std::span<const PhysioRecord> records);

inline constexpr std::string_view kAuditCsvHeader = "height,index,contract,action,actor,subject,outcome,reason";
std::string audit_csv(std::span<const AuditEvent> events);

}  // namespace sleepguard::contracts
