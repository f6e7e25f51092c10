#include "sleepguard/contracts.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace sleepguard::contracts {

std::string_view permission_name(Permission p) {
  switch (p) {
    case Permission::Retrieve: return "retrieve";
    case Permission::Averages: return "averages";
  }
  return "?";
}

std::optional<Permission> parse_permission(std::string_view s) {
  if (s == "retrieve") return Permission::Retrieve;
  if (s == "averages") return Permission::Averages;
  return std::nullopt;
}

Bytes Call::encode() const {
  ByteWriter w;
  w.str(contract).str(function).raw(caller).u32(static_cast<std::uint32_t>(args.size()));
  for (const auto& a : args) w.blob(a);
  return std::move(w).bytes();
}

Call Call::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  Call c;
  c.contract = r.str();
  c.function = r.str();
  c.caller = r.fixed<32>();
  auto n = r.u32();
  if (n > r.remaining() / 4) throw DecodeError("argument count exceeds payload");
  for (std::uint32_t i = 0; i < n; ++i) c.args.push_back(r.blob());
  r.expect_end();
  return c;
}

Bytes arg_str(std::string_view s) { return Bytes(s.begin(), s.end()); }

Bytes arg_u64(std::uint64_t v) { return ByteWriter().u64(v).bytes(); }

Bytes arg_id(const KeyId& id) { return Bytes(id.begin(), id.end()); }

std::string str_arg(const Bytes& b) { return std::string(b.begin(), b.end()); }

std::uint64_t u64_arg(const Bytes& b) {
  ByteReader r(b);
  auto v = r.u64();
  r.expect_end();
  return v;
}

KeyId id_arg(const Bytes& b) {
  ByteReader r(b);
  auto id = r.fixed<32>();
  r.expect_end();
  return id;
}

Bytes PhysioRecord::encode() const {
  ByteWriter w;
  w.u64(timestamp);
  for (double v : sample.to_array()) w.f64(v);
  w.u8(static_cast<std::uint8_t>(detected)).str(predicted);
  return std::move(w).bytes();
}

PhysioRecord PhysioRecord::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  PhysioRecord p;
  p.timestamp = r.u64();
  FeatureVector v{};
  for (auto& x : v) x = r.f64();
  p.sample = SleepSample::from_array(v);
  auto level = r.u8();
  if (level >= kLevelCount) throw DecodeError("stress level out of range");
  p.detected = static_cast<StressState>(level);
  p.predicted = r.str();
  r.expect_end();
  return p;
}

namespace {

std::string id_hex(const KeyId& id) { return to_hex(id); }

void deny(AuditEvent& ev, std::string reason) {
  ev.granted = false;
  ev.reason = std::move(reason);
}

void need_args(const Call& c, std::size_t lo, std::size_t hi) {
  if (c.args.size() < lo || c.args.size() > hi) throw DecodeError("wrong argument count");
}

}  // namespace

AuditEvent Engine::apply(const ledger::Transaction& tx, std::uint64_t height, std::uint32_t index) {
  AuditEvent ev;
  ev.height = height;
  ev.index = index;
  ev.contract = tx.contract;
  ev.granted = true;
  Call call;
  try {
    call = Call::decode(tx.payload);
  } catch (const DecodeError&) {
    ev.action = "?";
    deny(ev, "malformed");
    audit_.push_back(ev);
    return ev;
  }
  ev.action = call.function;
  ev.actor = call.caller;
  if (call.contract != tx.contract) {
    deny(ev, "malformed");
  } else if (!gateway_ || tx.sender_id() != *gateway_) {
    deny(ev, "not-gateway");
  } else {
    try {
      if (call.function == "log_denial") {
        need_args(call, 2, 2);
        ev.action = str_arg(call.args[0]);
        deny(ev, str_arg(call.args[1]));
      } else if (call.contract == kAccessPolicy) {
        access_call(call, ev);
      } else {
        store_call(call, ev, height);
      }
    } catch (const DecodeError&) {
      deny(ev, "malformed");
    }
  }
  audit_.push_back(ev);
  return ev;
}

void Engine::access_call(const Call& c, AuditEvent& ev) {
  auto& p = policy_;
  if (c.function == "deploy") {
    need_args(c, 1, 1);
    auto owner = id_arg(c.args[0]);
    ev.subject = id_hex(owner);
    if (p.deployed) return deny(ev, "already-deployed");
    p.deployed = true;
    p.owner = owner;
    p.admin = *gateway_;
    return;
  }
  if (!p.deployed) return deny(ev, "not-deployed");
  if (c.function == "add_role") {
    need_args(c, 1, 3);
    auto name = str_arg(c.args[0]);
    ev.subject = name;
    std::set<Permission> perms;
    for (std::size_t i = 1; i < c.args.size(); ++i) {
      auto perm = parse_permission(str_arg(c.args[i]));
      if (!perm) return deny(ev, "unknown-permission");
      perms.insert(*perm);
    }
    if (perms.empty()) perms = kDefaultRolePermissions;
    if (c.caller != p.owner) return deny(ev, "not-owner");
    if (name.empty()) return deny(ev, "malformed");
    if (p.roles.contains(name)) return deny(ev, "role-exists");
    p.roles.emplace(name, perms);
  } else if (c.function == "remove_role") {
    need_args(c, 1, 1);
    auto name = str_arg(c.args[0]);
    ev.subject = name;
    if (c.caller != p.owner) return deny(ev, "not-owner");
    if (!p.roles.erase(name)) return deny(ev, "unknown-role");
    std::erase_if(p.bearers, [&](const auto& kv) { return kv.second == name; });
  } else if (c.function == "add_bearer") {
    need_args(c, 2, 2);
    auto key = id_arg(c.args[0]);
    auto role = str_arg(c.args[1]);
    ev.subject = id_hex(key) + ":" + role;
    if (c.caller != p.owner) return deny(ev, "not-owner");
    if (!p.roles.contains(role)) return deny(ev, "unknown-role");
    p.bearers[key] = role;
  } else if (c.function == "remove_bearer") {
    need_args(c, 1, 1);
    auto key = id_arg(c.args[0]);
    ev.subject = id_hex(key);
    if (c.caller != p.owner) return deny(ev, "not-owner");
    if (!p.bearers.erase(key)) return deny(ev, "not-bound");
  } else {
    deny(ev, "unknown-function");
  }
}

void Engine::store_call(const Call& c, AuditEvent& ev, std::uint64_t height) {
  auto& s = store_;
  if (c.function == "deploy") {
    need_args(c, 1, 1);
    auto writer = id_arg(c.args[0]);
    ev.subject = id_hex(writer);
    if (s.deployed) return deny(ev, "already-deployed");
    s.deployed = true;
    s.writer = writer;
    return;
  }
  if (!s.deployed) return deny(ev, "not-deployed");
  if (c.function == "create_record") {
    need_args(c, 3, 3);
    StoredRecord rec;
    rec.timestamp = u64_arg(c.args[0]);
    rec.sealed = c.args[1];
    if (c.args[2].size() != rec.digest.size()) throw DecodeError("digest size");
    std::copy(c.args[2].begin(), c.args[2].end(), rec.digest.begin());
    rec.height = height;
    ev.subject = std::to_string(rec.timestamp);
    if (c.caller != s.writer) return deny(ev, "not-writer");
    if (!s.records.empty() && rec.timestamp <= s.records.back().timestamp) return deny(ev, "timestamp-regression");
    if (opener_) {
      rec.plain = opener_(rec);
      if (!rec.plain || sha256(rec.plain->encode()) != rec.digest || rec.plain->timestamp != rec.timestamp) {
        return deny(ev, "digest-mismatch");
      }
    }
    s.records.push_back(std::move(rec));
  } else if (c.function == "retrieve") {
    need_args(c, 0, 0);
    if (auto d = check_access(c.caller, Permission::Retrieve); !d.allowed) return deny(ev, d.reason);
    if (s.records.empty()) return deny(ev, "empty-store");
    ev.subject = std::to_string(s.records.back().timestamp);
  } else if (c.function == "averages") {
    need_args(c, 1, 1);
    auto now = u64_arg(c.args[0]);
    ev.subject = std::to_string(now);
    if (auto d = check_access(c.caller, Permission::Averages); !d.allowed) return deny(ev, d.reason);
  } else {
    deny(ev, "unknown-function");
  }
}

std::vector<AuditEvent> Engine::apply_block(const ledger::Block& b, std::uint64_t height) {
  std::vector<AuditEvent> out;
  std::uint32_t index = 0;
  for (const auto& tx : b.txs) {
    if (tx.contract == ledger::kInitContract) {
      if (height == 0 && !gateway_) gateway_ = tx.sender_id();
    } else if (tx.contract == kAccessPolicy || tx.contract == kDataStore) {
      out.push_back(apply(tx, height, index));
    }
    ++index;
  }
  return out;
}

Engine Engine::replay(const ledger::Chain& chain, Opener opener) {
  Engine e(std::move(opener));
  auto blocks = chain.blocks();
  for (std::uint64_t h = 0; h < blocks.size(); ++h) e.apply_block(blocks[h], h);
  return e;
}

Decision Engine::check_access(const KeyId& caller, Permission p) const {
  if (!policy_.deployed) return {false, "not-deployed"};
  if (caller == policy_.owner) return {true, "owner"};
  auto b = policy_.bearers.find(caller);
  if (b == policy_.bearers.end()) return {false, "not-bound"};
  auto r = policy_.roles.find(b->second);
  if (r == policy_.roles.end() || !r->second.contains(p)) return {false, "no-permission"};
  return {true, b->second};
}

const StoredRecord& Engine::retrieve_latest(const KeyId& caller) const {
  if (auto d = check_access(caller, Permission::Retrieve); !d.allowed) throw ReadDenied(d.reason);
  if (store_.records.empty()) throw EmptyStore();
  return store_.records.back();
}

Averages Engine::average_values(const KeyId& caller, std::uint64_t now) const {
  if (auto d = check_access(caller, Permission::Averages); !d.allowed) throw ReadDenied(d.reason);
  std::vector<PhysioRecord> in;
  for (const auto& r : store_.records) {
    if (r.timestamp > now || now - r.timestamp >= kDay) continue;
    if (!r.plain) throw std::logic_error("averages need opened records");
    in.push_back(*r.plain);
  }
  if (in.empty()) throw EmptyStore();
  return average_of(in);
}

Averages average_of(std::span<const PhysioRecord> records) {
  Averages a;
  a.count = records.size();
  if (records.empty()) return a;
  FeatureVector sum{};
  std::array<std::size_t, kLevelCount> votes{};
  for (const auto& r : records) {
    auto v = r.sample.to_array();
    for (std::size_t i = 0; i < kFeatureCount; ++i) sum[i] += v[i];
    ++votes[static_cast<std::size_t>(r.detected)];
  }
  for (auto& x : sum) x /= static_cast<double>(records.size());
  a.mean = SleepSample::from_array(sum);
  std::size_t best = 0;
  for (std::size_t k = 0; k < kLevelCount; ++k) {
    if (votes[k] >= votes[best]) best = k;
  }
  a.modal = static_cast<StressState>(best);
  return a;
}

std::string audit_csv(std::span<const AuditEvent> events) {
  std::ostringstream out;
  out << kAuditCsvHeader << '\n';
  for (const auto& e : events) {
    out << e.height << ',' << e.index << ',' << e.contract << ',' << e.action << ',' << to_hex(e.actor) << ','
        << e.subject << ',' << (e.granted ? "granted" : "denied") << ',' << e.reason << '\n';
  }
  return out.str();
}

}  // namespace sleepguard::contracts
