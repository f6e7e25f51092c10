#include "sleepguard/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

namespace sleepguard::gateway {

using contracts::arg_id;
using contracts::arg_str;
using contracts::arg_u64;
using contracts::Call;
using contracts::PhysioRecord;

namespace {

constexpr std::string_view kMessageDomain = "sleepguard/msg/v1";

}  // namespace

std::string_view kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::UploadRequest: return "upload-request";
    case MessageKind::UploadAck: return "upload-ack";
    case MessageKind::DataTx: return "data-tx";
    case MessageKind::Receipt: return "receipt";
    case MessageKind::AccessRequest: return "access-request";
    case MessageKind::DataResponse: return "data-response";
    case MessageKind::Denial: return "denial";
    case MessageKind::PolicyRequest: return "policy-request";
  }
  return "?";
}

Bytes WireMessage::encode() const {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(kind)).raw(sender).raw(recipient).blob(envelope);
  return std::move(w).bytes();
}

WireMessage WireMessage::decode(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  WireMessage m;
  auto k = r.u8();
  if (k < 1 || k > static_cast<std::uint8_t>(MessageKind::PolicyRequest)) throw DecodeError("unknown message kind");
  m.kind = static_cast<MessageKind>(k);
  m.sender = r.fixed<32>();
  m.recipient = r.fixed<32>();
  m.envelope = r.blob();
  r.expect_end();
  return m;
}

Bytes message_signing_bytes(MessageKind kind, const KeyId& recipient, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.str(kMessageDomain).u8(static_cast<std::uint8_t>(kind)).raw(recipient).blob(payload);
  return std::move(w).bytes();
}

WireMessage make_message(const KeyPair& signer, const PublicKey& claimed, const PublicKey& recipient, MessageKind kind,
                         std::span<const std::uint8_t> payload) {
  WireMessage m;
  m.kind = kind;
  m.sender = crypto::key_id(claimed);
  m.recipient = crypto::key_id(recipient);
  auto sig = crypto::sign(signer, message_signing_bytes(kind, m.recipient, payload));
  ByteWriter body;
  body.raw(claimed).blob(payload).raw(sig);
  m.envelope = crypto::seal_bytes(recipient, body.bytes());
  return m;
}

OpenedMessage open_message(const KeyPair& recipient, const WireMessage& m, bool check_signature) {
  auto body = crypto::open_bytes(recipient, m.envelope);
  OpenedMessage out{m.kind, {}, {}};
  crypto::Signature sig{};
  try {
    ByteReader r(body);
    out.sender_key = r.fixed<crypto::kPublicKeyBytes>();
    out.payload = r.blob();
    sig = r.fixed<crypto::kSignatureBytes>();
    r.expect_end();
  } catch (const DecodeError&) {
    throw SignatureError();
  }
  if (check_signature) {
    if (crypto::key_id(out.sender_key) != m.sender || m.recipient != recipient.id) throw SignatureError();
    if (!crypto::verify(out.sender_key, message_signing_bytes(m.kind, m.recipient, out.payload), sig)) {
      throw SignatureError();
    }
  }
  return out;
}

void Bus::post(WireMessage m) {
  std::lock_guard lock(mu_);
  if (interceptor_) interceptor_(m);
  capture_.push_back(m.encode());
  queues_[m.recipient].push_back(std::move(m));
}

std::optional<WireMessage> Bus::poll(const KeyId& recipient) {
  std::lock_guard lock(mu_);
  auto it = queues_.find(recipient);
  if (it == queues_.end() || it->second.empty()) return std::nullopt;
  auto m = std::move(it->second.front());
  it->second.pop_front();
  return m;
}

std::size_t Bus::pending(const KeyId& recipient) const {
  std::lock_guard lock(mu_);
  auto it = queues_.find(recipient);
  return it == queues_.end() ? 0 : it->second.size();
}

void Bus::write_capture(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  ByteWriter w;
  for (const auto& m : capture_) w.blob(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write capture file " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
}

Bytes encode_averages(const contracts::Averages& a) {
  ByteWriter w;
  w.u64(a.count);
  for (double v : a.mean.to_array()) w.f64(v);
  w.u8(static_cast<std::uint8_t>(a.modal));
  return std::move(w).bytes();
}

contracts::Averages decode_averages(std::span<const std::uint8_t> in) {
  ByteReader r(in);
  contracts::Averages a;
  a.count = r.u64();
  FeatureVector v{};
  for (auto& x : v) x = r.f64();
  a.mean = SleepSample::from_array(v);
  auto level = r.u8();
  if (level >= kLevelCount) throw DecodeError("stress level out of range");
  a.modal = static_cast<StressState>(level);
  r.expect_end();
  return a;
}

Deployment::Deployment(KeyPair admin, KeyPair owner, ledger::TargetBits bits, std::uint64_t genesis_time, bool deploy,
                       Hooks hooks)
    : admin_(std::move(admin)),
      owner_(std::move(owner)),
      hooks_(hooks),
      chain_(ledger::Chain::create(admin_, {}, genesis_time, bits)),
      engine_(opener()),
      time_(genesis_time) {
  engine_.apply_block(chain_.block(0), 0);
  if (deploy) deploy_contracts();
}

Deployment::Deployment(KeyPair admin, KeyPair owner, ledger::Chain chain, Hooks hooks)
    : admin_(std::move(admin)),
      owner_(std::move(owner)),
      hooks_(hooks),
      chain_(std::move(chain)),
      engine_(contracts::Engine::replay(chain_, opener())),
      time_(chain_.tip_timestamp()) {
  if (chain_.admin_id() != admin_.id) throw std::invalid_argument("chain admin does not match the admin key");
}

contracts::Opener Deployment::opener() {
  return [this](const contracts::StoredRecord& r) -> std::optional<PhysioRecord> {
    try {
      return PhysioRecord::decode(crypto::open_bytes(admin_, r.sealed));
    } catch (const crypto::DecryptionError&) {
    } catch (const DecodeError&) {
      return std::nullopt;
    }
    if (!hooks_.store_plaintext_on_chain) return std::nullopt;
    try {
      return PhysioRecord::decode(r.sealed);
    } catch (const DecodeError&) {
      return std::nullopt;
    }
  };
}

std::uint64_t Deployment::next_time() {
  auto t = clock_ ? clock_() : time_ + 1;
  time_ = std::max({t, time_, chain_.tip_timestamp()});
  return time_;
}

std::pair<Receipt, std::vector<contracts::AuditEvent>> Deployment::submit(std::vector<Call> calls) {
  std::lock_guard lock(mu_);
  std::vector<ledger::Transaction> txs;
  auto ts = next_time();
  auto seq = chain_.next_sequence(admin_.id);
  for (const auto& c : calls) txs.push_back(ledger::make_transaction(admin_, c.contract, c.encode(), seq++, ts));
  auto tx_hash = txs.back().hash();
  auto mined = chain_.mine_and_append(std::move(txs), ts, threads_);
  auto height = chain_.height();
  auto events = engine_.apply_block(mined.block, height);
  return {Receipt{mined.block.hash(), height, tx_hash}, std::move(events)};
}

Receipt Deployment::deploy_contracts() {
  auto [receipt, events] = submit({
      Call{std::string(contracts::kAccessPolicy), "deploy", admin_.id, {arg_id(owner_.id)}},
      Call{std::string(contracts::kDataStore), "deploy", admin_.id, {arg_id(owner_.id)}},
  });
  for (const auto& e : events) {
    if (!e.granted) throw std::logic_error("contract deployment refused: " + e.reason);
  }
  return receipt;
}

std::optional<OpenedMessage> Deployment::admin_receive(MessageKind expected, const char* flow) {
  auto m = bus_.poll(admin_.id);
  if (!m) throw std::logic_error("admin inbox empty");
  try {
    if (m->kind != expected) throw SignatureError();
    return open_message(admin_, *m, !hooks_.disable_signature_check);
  } catch (const crypto::DecryptionError&) {
    aborts_.push_back({flow, m->sender, "undecryptable"});
  } catch (const SignatureError&) {
    aborts_.push_back({flow, m->sender, "bad-signature"});
  }
  return std::nullopt;
}

OpenedMessage Deployment::client_receive(const KeyPair& me) {
  auto m = bus_.poll(me.id);
  if (!m) throw std::logic_error("client inbox empty");
  try {
    auto opened = open_message(me, *m);
    if (opened.sender_key != admin_.public_key) throw IntegrityError();
    return opened;
  } catch (const crypto::DecryptionError&) {
    throw IntegrityError();
  } catch (const SignatureError&) {
    throw IntegrityError();
  }
}

UploadResult Deployment::upload(const KeyPair& edge, const PhysioRecord& record) {
  return upload_as(edge, edge.public_key, record);
}

UploadResult Deployment::upload_as(const KeyPair& signer, const PublicKey& claimed, const PhysioRecord& record) {
  std::lock_guard lock(mu_);
  const bool genuine = signer.public_key == claimed;
  const auto claimed_id = crypto::key_id(claimed);
  const auto plain = record.encode();

  // Upload request, then the access check on the authenticated sender.
  bus_.post(make_message(signer, claimed, admin_.public_key, MessageKind::UploadRequest, arg_u64(record.timestamp)));
  auto req = admin_receive(MessageKind::UploadRequest, "upload");
  if (!req) return {false, "signature", "bad-signature", std::nullopt};
  auto caller = crypto::key_id(req->sender_key);
  const auto& store = engine_.store();
  if (!store.deployed || store.writer != caller) {
    auto reason = store.deployed ? "not-writer" : "not-deployed";
    auto [receipt, events] = submit({Call{std::string(contracts::kDataStore), "log_denial", caller,
                                          {arg_str("create_record"), arg_str(reason)}}});
    bus_.post(make_message(admin_, req->sender_key, MessageKind::Denial, arg_str(reason)));
    if (genuine) client_receive(signer);
    else bus_.poll(claimed_id);
    return {false, "access", reason, receipt};
  }

  // Acknowledge; only the real key holder can open it.
  bus_.post(make_message(admin_, req->sender_key, MessageKind::UploadAck, arg_u64(record.timestamp)));
  if (genuine) client_receive(signer);
  else bus_.poll(claimed_id);

  // Signed and sealed data transaction.
  bus_.post(make_message(signer, claimed, admin_.public_key, MessageKind::DataTx, plain));
  auto data = admin_receive(MessageKind::DataTx, "upload");
  if (!data) return {false, "signature", "bad-signature", std::nullopt};
  PhysioRecord parsed;
  try {
    parsed = PhysioRecord::decode(data->payload);
  } catch (const DecodeError&) {
    aborts_.push_back({"upload", caller, "malformed-record"});
    return {false, "contract", "malformed-record", std::nullopt};
  }
  auto stored_plain = parsed.encode();
  auto digest = sha256(stored_plain);
  Bytes body = hooks_.store_plaintext_on_chain ? stored_plain : crypto::seal_bytes(admin_.public_key, stored_plain);
  auto [receipt, events] = submit({Call{std::string(contracts::kDataStore), "create_record", caller,
                                        {arg_u64(parsed.timestamp), body, Bytes(digest.begin(), digest.end())}}});
  const auto& ev = events.at(0);

  ByteWriter r;
  r.raw(receipt.block_hash).u64(receipt.height).raw(receipt.tx_hash).u8(ev.granted ? 1 : 0).str(ev.reason);
  bus_.post(make_message(admin_, req->sender_key, MessageKind::Receipt, r.bytes()));
  if (genuine) {
    auto got = client_receive(signer);
    if (got.kind != MessageKind::Receipt || got.payload != r.bytes()) throw IntegrityError();
  } else {
    bus_.poll(claimed_id);
  }
  if (!ev.granted) return {false, "contract", ev.reason, receipt};
  return {true, "stored", "", receipt};
}

RetrieveResult Deployment::retrieve(const KeyPair& requester, Query q, std::uint64_t now) {
  std::lock_guard lock(mu_);
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(q)).u64(now);
  bus_.post(make_message(requester, admin_.public_key, MessageKind::AccessRequest, w.bytes()));
  auto req = admin_receive(MessageKind::AccessRequest, "retrieve");
  if (!req) return {false, "bad-signature", {}, std::nullopt, std::nullopt};
  auto caller = crypto::key_id(req->sender_key);

  Query query = Query::Latest;
  std::uint64_t at = 0;
  try {
    ByteReader r(req->payload);
    auto qb = r.u8();
    if (qb > 1) throw DecodeError("query");
    query = static_cast<Query>(qb);
    at = r.u64();
    r.expect_end();
  } catch (const DecodeError&) {
    aborts_.push_back({"retrieve", caller, "malformed-request"});
    return {false, "malformed-request", {}, std::nullopt, std::nullopt};
  }

  // The contract call records the read either way.
  Call call = query == Query::Latest
                  ? Call{std::string(contracts::kDataStore), "retrieve", caller, {}}
                  : Call{std::string(contracts::kDataStore), "averages", caller, {arg_u64(at)}};
  auto [receipt, events] = submit({call});
  const auto& ev = events.at(0);

  std::string reason = ev.reason;
  Bytes response;
  bool granted = ev.granted;
  if (granted) {
    try {
      if (query == Query::Latest) {
        const auto& rec = engine_.retrieve_latest(caller);
        if (!rec.plain) throw std::logic_error("stored record did not open");
        response = rec.plain->encode();
      } else {
        response = encode_averages(engine_.average_values(caller, at));
      }
    } catch (const contracts::EmptyStore&) {
      granted = false;
      reason = "empty-store";
    }
  }

  if (!granted) {
    bus_.post(make_message(admin_, req->sender_key, MessageKind::Denial, arg_str(reason)));
    auto got = client_receive(requester);
    if (got.kind != MessageKind::Denial) throw IntegrityError();
    return {false, contracts::str_arg(got.payload), {}, std::nullopt, std::nullopt};
  }
  bus_.post(make_message(admin_, req->sender_key, MessageKind::DataResponse, response));
  auto got = client_receive(requester);
  if (got.kind != MessageKind::DataResponse) throw IntegrityError();
  RetrieveResult out{true, "", got.payload, std::nullopt, std::nullopt};
  try {
    if (query == Query::Latest) out.record = PhysioRecord::decode(got.payload);
    else out.averages = decode_averages(got.payload);
  } catch (const DecodeError&) {
    throw IntegrityError();
  }
  return out;
}

PolicyResult Deployment::policy_call(const KeyPair& caller, std::string function, std::vector<Bytes> args) {
  std::lock_guard lock(mu_);
  Call request{std::string(contracts::kAccessPolicy), std::move(function), caller.id, std::move(args)};
  bus_.post(make_message(caller, admin_.public_key, MessageKind::PolicyRequest, request.encode()));
  auto req = admin_receive(MessageKind::PolicyRequest, "policy");
  if (!req) return {false, "bad-signature", std::nullopt};
  Call call;
  try {
    call = Call::decode(req->payload);
  } catch (const DecodeError&) {
    aborts_.push_back({"policy", caller.id, "malformed-request"});
    return {false, "malformed-request", std::nullopt};
  }
  // The authenticated key is the caller, whatever the request claims.
  call.contract = std::string(contracts::kAccessPolicy);
  call.caller = crypto::key_id(req->sender_key);
  auto [receipt, events] = submit({call});
  const auto& ev = events.at(0);
  ByteWriter r;
  r.raw(receipt.block_hash).u64(receipt.height).u8(ev.granted ? 1 : 0).str(ev.reason);
  bus_.post(make_message(admin_, req->sender_key, ev.granted ? MessageKind::Receipt : MessageKind::Denial, r.bytes()));
  client_receive(caller);
  return {ev.granted, ev.reason, receipt};
}

PolicyResult Deployment::add_role(const KeyPair& caller, const std::string& name,
                                  const std::vector<contracts::Permission>& perms) {
  std::vector<Bytes> args{arg_str(name)};
  for (auto p : perms) args.push_back(arg_str(contracts::permission_name(p)));
  return policy_call(caller, "add_role", std::move(args));
}

PolicyResult Deployment::remove_role(const KeyPair& caller, const std::string& name) {
  return policy_call(caller, "remove_role", {arg_str(name)});
}

PolicyResult Deployment::add_bearer(const KeyPair& caller, const KeyId& bearer, const std::string& role) {
  return policy_call(caller, "add_bearer", {arg_id(bearer), arg_str(role)});
}

PolicyResult Deployment::remove_bearer(const KeyPair& caller, const KeyId& bearer) {
  return policy_call(caller, "remove_bearer", {arg_id(bearer)});
}

void save_deployment(Deployment& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (!std::filesystem::exists(dir / "admin.key")) crypto::save_keypair(d.admin(), dir / "admin.key");
  if (!std::filesystem::exists(dir / "owner.key")) crypto::save_keypair(d.owner(), dir / "owner.key");
  ledger::save_chain(d.chain(), dir / "chain.bin");
}

Deployment load_deployment(const std::filesystem::path& dir, Hooks hooks) {
  auto chain = ledger::load_chain(dir / "chain.bin");
  if (auto failure = chain.verify()) {
    throw std::runtime_error("chain fails verification at height " + std::to_string(failure->height));
  }
  return Deployment(crypto::load_keypair(dir / "admin.key"), crypto::load_keypair(dir / "owner.key"),
                    std::move(chain), hooks);
}

PhysioRecord sample_record(std::uint64_t timestamp, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto table = RangeTable::standard();
  auto state = static_cast<StressState>(rng() % kLevelCount);
  PhysioRecord p;
  p.timestamp = timestamp;
  for (auto f : kAllFeatures) {
    auto iv = table.sampling_interval(f, state);
    p.sample[f] = std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
  }
  p.detected = state;
  p.predicted = "ML";
  return p;
}

namespace {

bool leaks_record(std::span<const std::uint8_t> haystack, const PhysioRecord& r) {
  if (contains_bytes(haystack, r.encode())) return true;
  for (double v : r.sample.to_array()) {
    auto b = ByteWriter().f64(v).bytes();
    if (contains_bytes(haystack, b)) return true;
  }
  return false;
}

}  // namespace

std::vector<ThreatOutcome> threat_suite(Hooks hooks, ledger::TargetBits bits) {
  auto admin = KeyPair::deterministic("threat/admin");
  auto user = KeyPair::deterministic("threat/user");
  auto family = KeyPair::deterministic("threat/family");
  auto adversary = KeyPair::deterministic("threat/adversary");
  Deployment d(admin, user, bits, 1'700'000'000, true, hooks);
  d.add_role(user, "Family");
  d.add_bearer(user, family.id, "Family");
  std::vector<PhysioRecord> uploaded;
  for (std::uint64_t i = 0; i < 3; ++i) {
    uploaded.push_back(sample_record(1'700'000'000 + 900 * (i + 1), 11 + i));
    if (!d.upload(user, uploaded.back()).accepted) throw std::logic_error("baseline upload failed");
  }
  std::vector<ThreatOutcome> out;

  {
    // Forged upload: the adversary claims the user's identity without the key.
    auto before_height = d.chain().height();
    auto before_records = d.engine().store().records.size();
    auto forged = sample_record(1'700'000'000 + 900 * 10, 99);
    uploaded.push_back(forged);
    auto r = d.upload_as(adversary, user.public_key, forged);
    bool passed = !r.accepted && r.stage == "signature" && d.chain().height() == before_height &&
                  d.engine().store().records.size() == before_records;
    out.push_back({1, "impersonated upload", passed,
                   r.accepted ? "forged record stored" : "aborted at " + r.stage + " (" + r.reason + ")"});
  }
  {
    auto audit_before = d.engine().audit().size();
    auto r = d.retrieve(adversary);
    const auto& audit = d.engine().audit();
    bool audited = audit.size() == audit_before + 1 && !audit.back().granted && audit.back().actor == adversary.id;
    bool passed = !r.granted && r.plaintext.empty() && audited;
    out.push_back({2, "unauthorized retrieval", passed, r.granted ? "data returned" : "denied (" + r.reason + ")"});
  }
  {
    // Eavesdropper holds every wire message of an authorized retrieval.
    auto start = d.bus().capture().size();
    auto r = d.retrieve(family);
    std::size_t opened = 0, total = 0;
    bool leaked = false;
    for (std::size_t i = start; i < d.bus().capture().size(); ++i) {
      const auto& wire = d.bus().capture()[i];
      ++total;
      for (const auto& rec : uploaded) leaked = leaked || leaks_record(wire, rec);
      try {
        open_message(adversary, WireMessage::decode(wire), false);
        ++opened;
      } catch (const crypto::DecryptionError&) {
      }
    }
    bool passed = r.granted && r.record == d.engine().store().records.back().plain && total > 0 && opened == 0 &&
                  !leaked;
    out.push_back({3, "eavesdropping", passed,
                   std::to_string(opened) + "/" + std::to_string(total) + " captured messages opened" +
                       (leaked ? ", plaintext on the wire" : "")});
  }
  {
    // Storage inspection: raw chain bytes must not reveal any feature value.
    auto raw = ledger::serialize_chain(d.chain());
    std::size_t leaked = 0;
    for (const auto& rec : uploaded) leaked += leaks_record(raw, rec) ? 1 : 0;
    out.push_back({4, "storage inspection", leaked == 0,
                   std::to_string(leaked) + "/" + std::to_string(uploaded.size()) + " records readable on chain"});
  }
  return out;
}

TimingReport tt_metrics(std::size_t trials, ledger::TargetBits bits, std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  using clock = std::chrono::steady_clock;
  auto admin = KeyPair::deterministic("bench/admin", seed);
  auto user = KeyPair::deterministic("bench/user", seed);
  std::vector<std::vector<double>> samples(4);
  auto timed = [](auto&& f) {
    auto t0 = clock::now();
    f();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  for (std::size_t i = 0; i < trials; ++i) {
    Deployment fresh(admin, user, bits, 1'700'000'000, false);
    samples[0].push_back(timed([&] { fresh.deploy_contracts(); }));
  }
  Deployment d(admin, user, bits, 1'700'000'000, true);
  for (std::size_t i = 0; i < trials; ++i) {
    samples[1].push_back(timed([&] {
      if (!d.add_role(user, "role-" + std::to_string(i)).granted) throw std::logic_error("add_role refused");
    }));
  }
  for (std::size_t i = 0; i < trials; ++i) {
    auto bearer = KeyPair::deterministic("bench/bearer", seed * 1000 + i);
    samples[2].push_back(timed([&] {
      if (!d.add_bearer(user, bearer.id, "role-" + std::to_string(i)).granted) {
        throw std::logic_error("add_bearer refused");
      }
    }));
  }
  for (std::size_t i = 0; i < trials; ++i) {
    auto rec = sample_record(1'700'000'000 + 900 * (i + 1), seed + i);
    samples[3].push_back(timed([&] {
      if (!d.upload(user, rec).accepted) throw std::logic_error("upload refused");
    }));
  }

  TimingReport report{bits, trials, {}};
  const char* names[] = {"deploy", "add_role", "add_bearer", "create_record"};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& s = samples[k];
    auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    double sum = 0;
    for (double v : s) sum += v;
    report.rows.push_back({names[k], *lo, *hi, sum / static_cast<double>(s.size())});
  }
  return report;
}

}  // namespace sleepguard::gateway
