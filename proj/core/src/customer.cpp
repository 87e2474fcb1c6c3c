#include "fedstr/customer/customer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fedstr/crypto/sha256.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/events/schemas.hpp"
#include "fedstr/payments/zap.hpp"
#include "fedstr/storage/store.hpp"
#include "fedstr/util/rng.hpp"
#include "json.hpp"

using nlohmann::json;

namespace fedstr::customer {

void CustomerConfig::validate() const {
  if (num_pr < 1) throw ConfigError("num_pr must be >= 1");
  if (num_jobs < 1) throw ConfigError("num_jobs must be >= 1");
  if (relays.empty()) throw ConfigError("customer needs at least one relay");
  if (job_timeout <= feedback_interval)
    throw ConfigError("job_timeout must exceed feedback_interval");
  if (request_kind < kinds::kJobRequestMin || request_kind > kinds::kJobRequestMax)
    throw ConfigError("request kind must lie in 8000-8999");
  if (train.rows() == 0) throw ConfigError("training dataset is empty");
  if (test.rows() == 0) throw ConfigError("test dataset is empty");
  hyper.validate();
}

std::string RoundLogEntry::to_json() const {
  return json{{"ts", ts_ms},     {"round", round},       {"provider", provider},
              {"phase", phase},  {"event_id", event_id}, {"detail", detail}}
      .dump();
}

namespace {

using events::FeedbackStatus;
using events::JobFeedback;
using events::JobRequest;
using events::JobResult;
using Clock = std::chrono::steady_clock;

std::int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Unrecoverable mid-run failure; run_training converts it into an aborted
// report with a partial round log.
struct AbortRun : std::runtime_error {
  explicit AbortRun(const std::string& reason) : std::runtime_error(reason) {}
};

enum class Phase {
  kRequested,
  kPaymentRequested,
  kPaid,
  kProcessing,
  kResultReady,
  kValidated,
  kFailed
};

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kRequested: return "Requested";
    case Phase::kPaymentRequested: return "PaymentRequested";
    case Phase::kPaid: return "Paid";
    case Phase::kProcessing: return "Processing";
    case Phase::kResultReady: return "ResultReady";
    case Phase::kValidated: return "Validated";
    case Phase::kFailed: return "Failed";
  }
  return "?";
}

struct Slot {
  bool outer = false;
  int shard_index = 0;
  std::string provider;
  std::string shard_url;
  JobRequest request;           // template for (re)publication
  nostr::Event request_event;   // last published form
  Phase phase = Phase::kRequested;
  Clock::time_point deadline;
  int attempts = 0;
  std::optional<ml::ModelParams> output;
  StorageRef output_ref;
  double reported_loss = 0.0;
  std::optional<std::uint64_t> result_amount;
  std::optional<std::uint64_t> feedback_amount;
  std::string result_event_id;
  std::string chain_result_id;  // prior round's result for job chaining
};

class Orchestrator {
 public:
  explicit Orchestrator(const CustomerConfig& cfg)
      : cfg_(cfg), storage_(storage::Storage::local(
                       cfg.storage_root.empty() ? storage::default_storage_root()
                                                : cfg.storage_root)) {
    if (!cfg_.log_path.empty()) {
      log_file_.open(cfg_.log_path, std::ios::app);
      if (!log_file_) throw ConfigError("cannot open round log: " + cfg_.log_path);
    }
  }

  TrainingReport run();

 private:
  void log(int round, const std::string& provider, const std::string& phase,
           const std::string& event_id, const std::string& detail) {
    RoundLogEntry entry{wall_ms(), round, provider, phase, event_id, detail};
    if (log_file_.is_open()) {
      log_file_ << entry.to_json() << "\n";
      log_file_.flush();
    }
    report_.log.push_back(std::move(entry));
  }

  void connect();
  void start_subscription();
  std::optional<nostr::Event> next_event(std::chrono::milliseconds timeout);
  std::optional<nostr::Event> fetch_event_by_id(const std::string& id);

  void publish_request(Slot& slot, int round);
  void pay(const std::string& provider, std::uint64_t amount,
           const std::string& request_id, const std::string& memo, int round);
  void reassign(Slot& slot, int round, const std::string& reason);
  void handle_feedback(Slot& slot, const JobFeedback& fb, int round);
  bool fetch_result(Slot& slot, const nostr::Event& event, int round);
  void validate_ready(std::vector<Slot*>& slots, int round);
  validation::Verdict run_validation(Slot& slot, const std::vector<Slot*>& peers);
  // Drives the given slots until every one is Validated.
  void drive(std::vector<Slot*> slots, int round);

  ml::ModelParams self_outer(const std::vector<ml::ModelParams>& outputs);
  ml::ModelParams delegated_outer(const std::vector<Slot>& inner_slots, int round);

  validation::ValidationConfig validation_cfg() const;
  StorageRef put_params(const ml::ModelParams& p);

  CustomerConfig cfg_;
  storage::Storage storage_;
  std::ofstream log_file_;
  TrainingReport report_;

  std::vector<std::shared_ptr<relay::RelaySession>> sessions_;
  std::vector<std::shared_ptr<relay::SubscriptionStream>> streams_;
  std::vector<std::thread> forwarders_;
  BlockingQueue<nostr::Event> inbox_;
  std::atomic<int> live_relays_{0};
  std::set<std::string> seen_;

  std::vector<std::string> denylist_;
  std::vector<std::string> roster_;  // currently engaged providers
  std::string outer_provider_;

  ml::ModelParams theta_;
  StorageRef theta_ref_;
  ml::OuterState outer_state_;
  validation::ParamHistory history_;
  std::string train_url_;

  static constexpr char kGlobalSeries[] = "::global";
};

void Orchestrator::connect() {
  for (const auto& url : cfg_.relays) {
    try {
      auto session = relay::RelaySession::connect(url);
      sessions_.push_back(session);
      auto parsed = net::parse_ws_url(url);
      if (parsed) report_.relay_hosts.push_back(parsed->host);
    } catch (const RelayError& e) {
      log(0, "", "relay-unreachable", "", std::string(e.what()));
    }
  }
  if (sessions_.empty()) throw AbortRun("no relay reachable");
  live_relays_.store(static_cast<int>(sessions_.size()));
}

void Orchestrator::start_subscription() {
  std::vector<nostr::Filter> filters;
  nostr::Filter fb;
  fb.kinds = {{kinds::kJobFeedback}};
  fb.tag_queries["p"] = {cfg_.key.public_key_hex()};
  filters.push_back(fb);
  nostr::Filter results;
  results.kinds = {{kinds::result_kind_for_request(cfg_.request_kind)}};
  results.tag_queries["p"] = {cfg_.key.public_key_hex()};
  filters.push_back(results);

  for (auto& session : sessions_) {
    auto stream = session->subscribe(filters);
    streams_.push_back(stream);
    forwarders_.emplace_back([this, stream] {
      bool live = false;
      for (;;) {
        auto item = stream->pop(std::chrono::milliseconds(250));
        if (!item) {
          if (inbox_.closed()) return;
          continue;
        }
        if (item->type == relay::SubItem::Type::kDisconnected) {
          live_relays_.fetch_sub(1);
          return;
        }
        if (item->type == relay::SubItem::Type::kEndOfStored) {
          live = true;
          continue;
        }
        if (live) inbox_.push(std::move(item->event));
      }
    });
  }
}

std::optional<nostr::Event> Orchestrator::next_event(std::chrono::milliseconds timeout) {
  auto event = inbox_.pop(timeout);
  if (!event) {
    if (live_relays_.load() <= 0) throw AbortRun("all relay connections lost");
    return std::nullopt;
  }
  if (!seen_.insert(event->id).second) return std::nullopt;  // cross-relay dedup
  return event;
}

std::optional<nostr::Event> Orchestrator::fetch_event_by_id(const std::string& id) {
  nostr::Filter f;
  f.ids = {{id}};
  f.limit = 1;
  auto stream = sessions_.front()->subscribe({f});
  std::optional<nostr::Event> found;
  auto deadline = Clock::now() + std::chrono::seconds(3);
  while (Clock::now() < deadline) {
    auto item = stream->pop(std::chrono::milliseconds(200));
    if (!item) continue;
    if (item->type == relay::SubItem::Type::kEvent) {
      found = item->event;
      break;
    }
    if (item->type != relay::SubItem::Type::kEvent) break;  // EOSE or disconnect
  }
  sessions_.front()->unsubscribe(stream->sub_id());
  return found;
}

validation::ValidationConfig Orchestrator::validation_cfg() const {
  validation::ValidationConfig v;
  v.test_type = cfg_.test_type;
  if (cfg_.gamma_t) {
    v.gamma_t = *cfg_.gamma_t;
  } else {
    // Default schedule: test A sums loss differences over the test set, and
    // far from convergence the peers' summed deltas legitimately land far
    // from any single candidate. Scale the tolerance with the current
    // model's summed test loss, floored at 0.5 per test sample.
    double current = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.test) *
                     static_cast<double>(cfg_.test.rows());
    v.gamma_t = std::max(0.5 * static_cast<double>(cfg_.test.rows()), 0.5 * current);
  }
  v.beta_t = cfg_.beta_t;
  v.tau_c = cfg_.tau_c;
  v.test_dataset = cfg_.test;
  v.loss = cfg_.loss;
  v.model = cfg_.model;
  return v;
}

StorageRef Orchestrator::put_params(const ml::ModelParams& p) {
  return storage_.put_model(ml::serialize_params(p));
}

void Orchestrator::publish_request(Slot& slot, int round) {
  slot.request.providers = {slot.provider};
  slot.request.model_state.ref = theta_ref_;
  slot.request.model_state.inline_data.clear();

  // job chaining: rounds after the first reference the prior result event
  if (!slot.outer) {
    if (round > 1 && !slot.chain_result_id.empty()) {
      slot.request.inputs = {{slot.chain_result_id, events::InputType::kJob,
                              sessions_.front()->url(), "prior-round"}};
    } else {
      slot.request.inputs = {
          {slot.shard_url, events::InputType::kUrl, sessions_.front()->url(), "data"}};
    }
  }

  slot.request_event = events::build_job_request(slot.request, cfg_.key);
  try {
    relay::multi_relay_publish(sessions_, slot.request_event);
  } catch (const RelayError& e) {
    throw AbortRun(std::string("cannot publish job request: ") + e.what());
  }
  slot.phase = Phase::kRequested;
  slot.deadline = Clock::now() + cfg_.job_timeout;
  slot.output.reset();
  slot.result_amount.reset();
  slot.feedback_amount.reset();
  slot.result_event_id.clear();
  log(round, slot.provider, "Requested", slot.request_event.id,
      slot.outer ? "outer job request" : "inner job request, shard " +
                                             std::to_string(slot.shard_index));
}

void Orchestrator::pay(const std::string& provider, std::uint64_t amount,
                       const std::string& request_id, const std::string& memo,
                       int round) {
  payments::ZapRequestFields fields;
  fields.relays = cfg_.relays;
  fields.amount_msats = amount;
  fields.lnurl = payments::lnurl_for(provider);
  fields.recipient_pubkey = provider;
  fields.event_id = request_id;
  fields.message = memo;
  auto zap = payments::create_zap_request(fields, cfg_.key);
  try {
    relay::multi_relay_publish(sessions_, zap);
  } catch (const RelayError& e) {
    throw AbortRun(std::string("cannot publish payment: ") + e.what());
  }
  report_.msats_paid += amount;
  report_.zaps_sent += 1;
  log(round, provider, "PaymentSent", zap.id,
      memo + ", " + std::to_string(amount) + " msats for " + request_id);
}

void Orchestrator::reassign(Slot& slot, int round, const std::string& reason) {
  log(round, slot.provider, "Failed", slot.request_event.id, reason);
  denylist_.push_back(slot.provider);
  slot.attempts += 1;
  report_.reassignments += 1;
  auto round_it = std::find_if(report_.rounds.begin(), report_.rounds.end(),
                               [&](const RoundRecord& r) { return r.round == round; });
  if (round_it != report_.rounds.end()) round_it->reassignments += 1;

  if (slot.attempts > cfg_.max_reassign_attempts)
    throw AbortRun("reassignment exhausted after " +
                   std::to_string(cfg_.max_reassign_attempts) + " attempts (" +
                   reason + ")");

  std::vector<std::string> exclude = denylist_;
  exclude.insert(exclude.end(), roster_.begin(), roster_.end());
  if (!outer_provider_.empty()) exclude.push_back(outer_provider_);
  std::vector<std::string> fresh;
  try {
    fresh = discover_providers(sessions_, 1, cfg_.request_kind, exclude,
                               cfg_.discovery_window);
  } catch (const RelayError& e) {
    throw AbortRun(std::string("reassignment found no replacement provider: ") +
                   e.what());
  }
  std::string old = slot.provider;
  slot.provider = fresh.front();
  if (slot.outer) {
    outer_provider_ = slot.provider;
  } else {
    std::replace(roster_.begin(), roster_.end(), old, slot.provider);
  }
  log(round, slot.provider, "Reassigned", "",
      "replaced " + old + " (attempt " + std::to_string(slot.attempts) + ")");
  publish_request(slot, round);  // identical request, updated p tag
}

void Orchestrator::handle_feedback(Slot& slot, const JobFeedback& fb, int round) {
  slot.deadline = Clock::now() + cfg_.job_timeout;  // liveness signal
  switch (fb.status) {
    case FeedbackStatus::kPaymentRequired: {
      if (slot.phase != Phase::kRequested) return;
      slot.phase = Phase::kPaymentRequested;
      log(round, slot.provider, "PaymentRequested", slot.request_event.id,
          fb.amount_msats ? std::to_string(*fb.amount_msats) + " msats demanded"
                          : "no amount given");
      std::uint64_t amount = fb.amount_msats.value_or(cfg_.init_msats);
      pay(slot.provider, amount, slot.request_event.id, "initialization payment",
          round);
      slot.phase = Phase::kPaid;
      log(round, slot.provider, "Paid", slot.request_event.id,
          "initialization payment sent");
      return;
    }
    case FeedbackStatus::kProcessing:
      if (slot.phase == Phase::kPaid || slot.phase == Phase::kPaymentRequested ||
          slot.phase == Phase::kRequested) {
        slot.phase = Phase::kProcessing;
        log(round, slot.provider, "Processing", slot.request_event.id, fb.extra_info);
      }
      return;
    case FeedbackStatus::kPartial:
      return;  // liveness only
    case FeedbackStatus::kSuccess:
      if (fb.amount_msats) slot.feedback_amount = fb.amount_msats;
      return;  // the result event completes the round
    case FeedbackStatus::kError:
      reassign(slot, round, "provider error: " + fb.extra_info);
      return;
  }
}

bool Orchestrator::fetch_result(Slot& slot, const nostr::Event& event, int round) {
  JobResult result;
  try {
    result = events::parse_job_result(event);
  } catch (const SchemaError& e) {
    reassign(slot, round, std::string("malformed result: ") + e.what());
    return false;
  }
  try {
    Bytes blob = storage_.get_model(result.output);
    report_.hash_verified_reads += 1;
    ml::ModelParams params = ml::deserialize_params(blob);
    if (!params.same_layout(theta_))
      throw FormatError("result layout does not match the model");

    if (result.file_metadata_event_id) {
      // NIP-94 companion: its x tag must agree with the advertised digest
      auto meta_event = fetch_event_by_id(*result.file_metadata_event_id);
      if (meta_event) {
        auto meta = events::parse_file_metadata(*meta_event);
        if (meta.sha256 != result.output.sha256)
          throw IntegrityError("nip-94 metadata digest disagrees with result output");
      }
    }

    slot.output = std::move(params);
    slot.output_ref = result.output;
    slot.reported_loss = result.reported_loss;
    slot.result_amount = result.amount_msats;
    slot.result_event_id = event.id;
    if (slot.result_amount && slot.feedback_amount &&
        *slot.result_amount != *slot.feedback_amount)
      log(round, slot.provider, "AmountConflict", event.id,
          "feedback says " + std::to_string(*slot.feedback_amount) +
              ", result says " + std::to_string(*slot.result_amount) +
              "; using the result (most recent)");
    slot.phase = Phase::kResultReady;
    log(round, slot.provider, "ResultReady", event.id,
        "output " + result.output.sha256.substr(0, 16) + "..., reported loss " +
            std::to_string(result.reported_loss));
    return true;
  } catch (const IntegrityError& e) {
    report_.integrity_errors += 1;
    auto round_it = std::find_if(report_.rounds.begin(), report_.rounds.end(),
                                 [&](const RoundRecord& r) { return r.round == round; });
    if (round_it != report_.rounds.end()) round_it->integrity_errors += 1;
    log(round, slot.provider, "IntegrityError", event.id, e.what());
    reassign(slot, round, std::string("integrity error: ") + e.what());
    return false;
  } catch (const std::exception& e) {
    reassign(slot, round, std::string("cannot fetch result: ") + e.what());
    return false;
  }
}

validation::Verdict Orchestrator::run_validation(Slot& slot,
                                                 const std::vector<Slot*>& peers) {
  auto vcfg = validation_cfg();
  if (slot.outer) {
    // outer results are judged on the theta_global series
    vcfg.test_type = validation::TestType::kB;
    history_.push(kGlobalSeries, *slot.output);
    auto verdict = validation::validate_test_b(kGlobalSeries, history_, vcfg);
    if (!verdict.pass) history_.pop(kGlobalSeries);
    return verdict;
  }
  if (vcfg.test_type == validation::TestType::kA) {
    std::map<std::string, ml::ModelParams> inner;
    for (const Slot* peer : peers)
      if (peer->output) inner.emplace(peer->provider, *peer->output);
    auto deltas = validation::compute_deltas(theta_, inner);
    return validation::validate_test_a(slot.provider, theta_, deltas, vcfg);
  }
  history_.push(slot.provider, *slot.output);
  auto verdict = validation::validate_test_b(slot.provider, history_, vcfg);
  if (!verdict.pass) history_.pop(slot.provider);
  return verdict;
}

void Orchestrator::validate_ready(std::vector<Slot*>& slots, int round) {
  for (Slot* slot : slots) {
    if (slot->phase != Phase::kResultReady) continue;
    auto verdict = run_validation(*slot, slots);
    auto round_it = std::find_if(report_.rounds.begin(), report_.rounds.end(),
                                 [&](const RoundRecord& r) { return r.round == round; });
    if (verdict.pass) {
      report_.validations_pass += 1;
      if (round_it != report_.rounds.end()) round_it->validations_pass += 1;
      slot->phase = Phase::kValidated;
      log(round, slot->provider, "Validated", slot->result_event_id,
          verdict.advisory ? "advisory: " + verdict.detail : verdict.detail);
      std::uint64_t amount = slot->result_amount.value_or(cfg_.round_msats);
      if (amount > 0)
        pay(slot->provider, amount, slot->request_event.id, "validated round payment",
            round);
    } else {
      report_.validations_fail += 1;
      if (round_it != report_.rounds.end()) round_it->validations_fail += 1;
      log(round, slot->provider, "ValidationFailed", slot->result_event_id,
          verdict.detail);
      reassign(*slot, round, "validation failed: " + verdict.detail);
    }
  }
}

void Orchestrator::drive(std::vector<Slot*> slots, int round) {
  auto all_validated = [&] {
    return std::all_of(slots.begin(), slots.end(),
                       [](const Slot* s) { return s->phase == Phase::kValidated; });
  };
  auto all_ready_or_validated = [&] {
    return std::all_of(slots.begin(), slots.end(), [](const Slot* s) {
      return s->phase == Phase::kResultReady || s->phase == Phase::kValidated;
    });
  };

  while (!all_validated()) {
    // timeouts first (Alg. 1 lines 13-14: replace delayed providers)
    for (Slot* slot : slots) {
      if (slot->phase == Phase::kValidated || slot->phase == Phase::kResultReady)
        continue;
      if (Clock::now() >= slot->deadline)
        reassign(*slot, round, "job timeout (" + std::string(phase_name(slot->phase)) +
                                   " for " +
                                   std::to_string(cfg_.job_timeout.count()) + " ms)");
    }

    auto poll = std::min<std::chrono::milliseconds>(cfg_.feedback_interval,
                                                    std::chrono::milliseconds(100));
    auto event = next_event(poll);
    if (event) {
      if (event->kind == kinds::kJobFeedback) {
        JobFeedback fb;
        try {
          fb = events::parse_feedback(*event);
        } catch (const SchemaError&) {
          continue;
        }
        for (Slot* slot : slots)
          if (slot->request_event.id == fb.job_request_id &&
              event->pubkey == slot->provider)
            handle_feedback(*slot, fb, round);
      } else if (event->kind == kinds::result_kind_for_request(cfg_.request_kind)) {
        auto request_id = event->tag_value("e");
        if (!request_id) continue;
        for (Slot* slot : slots)
          if (slot->request_event.id == *request_id &&
              event->pubkey == slot->provider && slot->phase != Phase::kValidated &&
              slot->phase != Phase::kResultReady)
            fetch_result(*slot, *event, round);
      }
    }

    if (all_ready_or_validated()) validate_ready(slots, round);
  }
}

ml::ModelParams Orchestrator::self_outer(const std::vector<ml::ModelParams>& outputs) {
  if (cfg_.run_option == RunOption::kFedAvg)
    return ml::outer_fedavg(outputs, cfg_.outer_weights);
  auto [updated, state] = ml::outer_diloco(theta_, outputs, outer_state_);
  outer_state_ = std::move(state);
  return std::move(updated);
}

ml::ModelParams Orchestrator::delegated_outer(const std::vector<Slot>& inner_slots,
                                              int round) {
  Slot slot;
  slot.outer = true;
  slot.provider = outer_provider_;
  slot.request.kind = cfg_.request_kind;
  slot.request.task = Task::kOuter;
  slot.request.run_option = cfg_.run_option;
  slot.request.relays = cfg_.relays;
  slot.request.data_set_url = train_url_;
  slot.request.model_spec = cfg_.model.to_string();
  slot.request.timeout_max = cfg_.job_timeout.count() / 1000;
  slot.request.inputs = {{theta_ref_.to_wire(), events::InputType::kText,
                          sessions_.front()->url(), "current-model-state"}};
  slot.request.extra_params.emplace_back(events::params::kRound, std::to_string(round));
  for (std::size_t k = 0; k < inner_slots.size(); ++k)
    slot.request.extra_params.emplace_back(
        events::params::kInnerOutputPrefix + std::to_string(k),
        inner_slots[k].output_ref.to_wire());
  if (!cfg_.outer_weights.empty()) {
    std::ostringstream w;
    for (std::size_t i = 0; i < cfg_.outer_weights.size(); ++i)
      w << (i ? "," : "") << cfg_.outer_weights[i];
    slot.request.extra_params.emplace_back(events::params::kOuterWeights, w.str());
  }
  if (cfg_.run_option == RunOption::kDiLoCo) {
    slot.request.extra_params.emplace_back(events::params::kOuterLr,
                                           std::to_string(cfg_.outer_lr));
    slot.request.extra_params.emplace_back(events::params::kOuterMomentum,
                                           std::to_string(cfg_.outer_momentum));
    ml::ModelParams velocity;
    velocity.layout = theta_.layout;
    velocity.values = outer_state_.velocity.empty()
                          ? std::vector<double>(theta_.size(), 0.0)
                          : outer_state_.velocity;
    slot.request.extra_params.emplace_back(events::params::kOuterVelocity,
                                           put_params(velocity).to_wire());
  }

  publish_request(slot, round);
  std::vector<Slot*> slots{&slot};
  drive(slots, round);

  // local recomputation keeps the velocity state and cross-checks the result
  std::vector<ml::ModelParams> outputs;
  for (const auto& s : inner_slots) outputs.push_back(*s.output);
  ml::ModelParams local = self_outer(outputs);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < local.values.size(); ++i)
    max_dev = std::max(max_dev, std::abs(local.values[i] - slot.output->values[i]));
  if (max_dev > 1e-9)
    log(round, slot.provider, "OuterDeviation", slot.result_event_id,
        "delegated outer deviates from local recomputation by " +
            std::to_string(max_dev));
  return *slot.output;
}

TrainingReport Orchestrator::run() {
  cfg_.validate();
  try {
    connect();
    start_subscription();

    // static shards for the whole run
    auto shards = ml::split_dataset(cfg_.train, static_cast<std::size_t>(cfg_.num_pr),
                                    mix_seed(cfg_.master_seed, 1));
    std::vector<std::string> shard_urls;
    for (std::size_t k = 0; k < shards.size(); ++k) {
      auto csv = ml::dataset_to_csv(shards[k]);
      Bytes bytes(csv.begin(), csv.end());
      std::string name = "shard_" + std::to_string(k) + "_" +
                         sha256_hex(bytes).substr(0, 16) + ".csv";
      shard_urls.push_back(storage_.put_blob(bytes, name));
    }
    {
      auto csv = ml::dataset_to_csv(cfg_.train);
      Bytes bytes(csv.begin(), csv.end());
      train_url_ = storage_.put_blob(
          bytes, "train_" + sha256_hex(bytes).substr(0, 16) + ".csv");
    }

    theta_ = ml::init_model(cfg_.model);
    theta_ref_ = put_params(theta_);
    outer_state_.weights = cfg_.outer_weights;
    outer_state_.outer_lr = cfg_.outer_lr;
    outer_state_.momentum = cfg_.outer_momentum;
    report_.initial_train_loss = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.train);
    log(0, "", "Initialized",
        "", "theta " + theta_ref_.sha256.substr(0, 16) + "..., initial train loss " +
                std::to_string(report_.initial_train_loss));

    std::size_t needed = static_cast<std::size_t>(cfg_.num_pr);
    roster_ = discover_providers(sessions_, needed, cfg_.request_kind, denylist_,
                                 cfg_.discovery_window);
    for (const auto& pk : roster_) log(0, pk, "Discovered", "", "engaged for inner jobs");
    if (cfg_.outer_mode == OuterMode::kDelegate) {
      std::vector<std::string> exclude = roster_;
      try {
        outer_provider_ = discover_providers(sessions_, 1, cfg_.request_kind, exclude,
                                             std::chrono::milliseconds(2000))
                              .front();
      } catch (const RelayError&) {
        outer_provider_ = roster_.front();  // reuse an inner provider
      }
      log(0, outer_provider_, "Discovered", "", "engaged for outer jobs");
    }

    std::vector<Slot> slots(static_cast<std::size_t>(cfg_.num_pr));
    for (int k = 0; k < cfg_.num_pr; ++k) {
      Slot& slot = slots[static_cast<std::size_t>(k)];
      slot.shard_index = k;
      slot.provider = roster_[static_cast<std::size_t>(k)];
      slot.shard_url = shard_urls[static_cast<std::size_t>(k)];
      slot.request.kind = cfg_.request_kind;
      slot.request.task = Task::kInner;
      slot.request.run_option = cfg_.run_option;
      slot.request.relays = cfg_.relays;
      slot.request.data_set_url = slot.shard_url;
      slot.request.model_spec = cfg_.model.to_string();
      slot.request.expected_execution_time = 60;
      slot.request.timeout_max = cfg_.job_timeout.count() / 1000;
      slot.request.bid_msats = cfg_.init_msats + cfg_.round_msats;
    }

    for (int round = 1; round <= cfg_.num_jobs; ++round) {
      report_.rounds.push_back(RoundRecord{round, 0, "", 0, 0, 0, 0});
      for (auto& slot : slots) {
        slot.phase = Phase::kRequested;
        slot.attempts = 0;
        // per-round deterministic hyperparameters ride in the request
        ml::InnerHyperparams hp = cfg_.hyper;
        hp.shuffle_seed = mix_seed(cfg_.master_seed,
                                   static_cast<std::uint64_t>(round) * 1000 +
                                       static_cast<std::uint64_t>(slot.shard_index));
        slot.request.extra_params.clear();
        slot.request.extra_params.emplace_back(events::params::kRound,
                                               std::to_string(round));
        slot.request.extra_params.emplace_back(events::params::kHyperparams,
                                               hp.to_param_string());
        publish_request(slot, round);
      }

      std::vector<Slot*> slot_ptrs;
      for (auto& slot : slots) slot_ptrs.push_back(&slot);
      drive(slot_ptrs, round);

      std::vector<ml::ModelParams> outputs;
      for (auto& slot : slots) outputs.push_back(*slot.output);
      if (cfg_.test_type == validation::TestType::kA) {
        // keep per-provider history for later test-b queries anyway
        for (auto& slot : slots) history_.push(slot.provider, *slot.output);
      }

      ml::ModelParams next_theta = cfg_.outer_mode == OuterMode::kSelf
                                       ? self_outer(outputs)
                                       : delegated_outer(slots, round);
      theta_ = std::move(next_theta);
      theta_ref_ = put_params(theta_);
      if (cfg_.outer_mode == OuterMode::kSelf) history_.push(kGlobalSeries, theta_);

      for (auto& slot : slots) slot.chain_result_id = slot.result_event_id;

      double train_loss = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.train);
      report_.rounds.back().train_loss_after = train_loss;
      report_.rounds.back().theta_sha256 = theta_ref_.sha256;
      report_.rounds_completed = round;
      log(round, "", "RoundComplete", "",
          "theta " + theta_ref_.sha256.substr(0, 16) + "..., train loss " +
              std::to_string(train_loss));

      if (cfg_.target_loss) {
        double test_loss = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.test);
        if (test_loss <= *cfg_.target_loss) {
          log(round, "", "TargetReached", "",
              "test loss " + std::to_string(test_loss) + " <= target " +
                  std::to_string(*cfg_.target_loss));
          break;
        }
      }
    }

    log(report_.rounds_completed, "", "FinalizePayments", "",
        "all validated work paid; " + std::to_string(report_.msats_paid) +
            " msats total");
    report_.final_params = theta_;
    report_.final_ref = theta_ref_;
    report_.final_train_loss = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.train);
    report_.final_test_loss = ml::loss(theta_, cfg_.model, cfg_.loss, cfg_.test);
    report_.completed = true;
  } catch (const AbortRun& e) {
    report_.completed = false;
    report_.abort_reason = e.what();
    log(report_.rounds_completed, "", "Aborted", "", e.what());
  }

  inbox_.close();
  for (auto& t : forwarders_)
    if (t.joinable()) t.join();
  for (auto& session : sessions_) session->close();
  return report_;
}

}  // namespace

std::vector<std::string> discover_providers(
    const std::vector<std::shared_ptr<relay::RelaySession>>& sessions,
    std::size_t needed, int kind, const std::vector<std::string>& exclude,
    std::chrono::milliseconds window) {
  if (sessions.empty()) throw RelayError("discovery needs a relay session");
  auto deadline = Clock::now() + window;
  std::size_t best_seen = 0;
  for (;;) {
    nostr::Filter f;
    f.kinds = {{kinds::kDiscoverability}};
    f.tag_queries["k"] = {std::to_string(kind)};
    auto stream = sessions.front()->subscribe({f});

    std::vector<std::string> found;  // newest first, relay handles replacement
    bool done = false;
    auto query_deadline = Clock::now() + std::chrono::seconds(3);
    while (!done && Clock::now() < query_deadline) {
      auto item = stream->pop(std::chrono::milliseconds(200));
      if (!item) continue;
      switch (item->type) {
        case relay::SubItem::Type::kEvent: {
          const auto& pk = item->event.pubkey;
          bool excluded =
              std::find(exclude.begin(), exclude.end(), pk) != exclude.end();
          bool duplicate = std::find(found.begin(), found.end(), pk) != found.end();
          bool usable = false;
          try {
            usable = events::parse_discoverability(item->event).usable();
          } catch (const SchemaError&) {
            usable = false;
          }
          if (!excluded && !duplicate && usable) found.push_back(pk);
          break;
        }
        case relay::SubItem::Type::kEndOfStored:
          done = true;
          break;
        case relay::SubItem::Type::kDisconnected:
          throw RelayError("relay disconnected during discovery");
      }
    }
    sessions.front()->unsubscribe(stream->sub_id());

    if (found.size() >= needed) {
      found.resize(needed);
      return found;
    }
    best_seen = std::max(best_seen, found.size());
    if (Clock::now() >= deadline)
      throw RelayError("insufficient providers: found " + std::to_string(best_seen) +
                       ", need " + std::to_string(needed));
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
}

TrainingReport run_training(const CustomerConfig& cfg) {
  Orchestrator orch(cfg);
  return orch.run();
}

}  // namespace fedstr::customer
