#include "fedstr/provider/provider.hpp"

#include <algorithm>
#include <sstream>

#include "fedstr/crypto/sha256.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/ml/optimize.hpp"
#include "fedstr/util/fs.hpp"
#include "fedstr/util/rng.hpp"

namespace fedstr::provider {

using events::FeedbackStatus;
using events::JobFeedback;
using events::JobRequest;
using events::JobResult;

Provider::Provider(ProviderConfig cfg) : cfg_(std::move(cfg)), wallet_(cfg_.key) {
  if (cfg_.relays.empty()) throw ConfigError("provider needs at least one relay");
  if (cfg_.supported_kinds.empty())
    throw ConfigError("provider must support at least one job kind");
  if (cfg_.max_concurrent_jobs < 1)
    throw ConfigError("max concurrent jobs must be >= 1");
  if (cfg_.storage_root.empty()) cfg_.storage_root = storage::default_storage_root();
  storage_ = std::make_unique<storage::Storage>(
      std::make_shared<storage::FileBackend>(cfg_.storage_root));
}

Provider::~Provider() { stop(); }

void Provider::start() {
  for (const auto& url : cfg_.relays) {
    try {
      sessions_.push_back(relay::RelaySession::connect(url));
    } catch (const RelayError&) {
      // tolerate individual relay outages as long as one connects
    }
  }
  if (sessions_.empty()) throw RelayError("provider could not reach any relay");

  // Live subscriptions first so nothing published after the announcement can
  // be missed; stored history is skipped in the dispatch loop.
  const std::string me = pubkey();
  std::vector<nostr::Filter> filters;
  {
    nostr::Filter jobs;
    jobs.kinds = cfg_.supported_kinds;
    jobs.tag_queries["p"] = {me};
    filters.push_back(jobs);
    nostr::Filter zaps;
    zaps.kinds = {{kinds::kZapRequest, kinds::kZapReceipt}};
    zaps.tag_queries["p"] = {me};
    filters.push_back(zaps);
  }
  for (auto& session : sessions_) {
    auto stream = session->subscribe(filters);
    streams_.push_back(stream);
    forwarders_.emplace_back([this, stream] { forward_stream(stream); });
  }

  events::Discoverability announce;
  announce.name = cfg_.name;
  announce.about = cfg_.about;
  announce.supported_kinds = cfg_.supported_kinds;
  announce.specs = {cfg_.capability};
  auto event = events::build_discoverability(announce, cfg_.key);
  relay::multi_relay_publish(sessions_, event);  // throws when all reject
  announce_id_ = event.id;

  dispatcher_ = std::thread([this] { dispatch_loop(); });
}

void Provider::stop() {
  bool expected = false;
  if (!stopping_.compare_exchange_strong(expected, true)) return;
  inbox_.close();
  for (auto& session : sessions_) session->close();
  for (auto& t : forwarders_)
    if (t.joinable()) t.join();
  if (dispatcher_.joinable()) dispatcher_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lk(mu_);
    workers.swap(session_threads_);
    for (auto& [id, waiter] : receipt_waiters_) waiter->close();
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
}

void Provider::forward_stream(std::shared_ptr<relay::SubscriptionStream> stream) {
  bool live = false;
  while (!stopping_.load()) {
    auto item = stream->pop(std::chrono::milliseconds(250));
    if (!item) continue;
    if (item->type == relay::SubItem::Type::kDisconnected) return;
    if (item->type == relay::SubItem::Type::kEndOfStored) {
      live = true;
      continue;
    }
    if (live) inbox_.push(std::move(item->event));
  }
}

void Provider::blacklist_customer(const std::string& pubkey) {
  std::lock_guard lk(mu_);
  blacklist_.insert(pubkey);
}

bool Provider::is_blacklisted(const std::string& pubkey) const {
  std::lock_guard lk(mu_);
  return blacklist_.count(pubkey) > 0;
}

void Provider::publish_all(const nostr::Event& e) {
  try {
    relay::multi_relay_publish(sessions_, e);
  } catch (const RelayError&) {
    // relay loss mid-run: sessions report disconnects, the loop winds down
  }
}

void Provider::publish_feedback(const JobFeedback& fb) {
  publish_all(events::build_feedback(fb, cfg_.key));
}

void Provider::check_nonpayment_deadlines() {
  std::lock_guard lk(mu_);
  auto now = std::chrono::steady_clock::now();
  for (auto it = pending_payment_.begin(); it != pending_payment_.end();) {
    if (now >= it->second) {
      blacklist_.insert(it->first);
      it = pending_payment_.erase(it);
    } else {
      ++it;
    }
  }
}

void Provider::dispatch_loop() {
  const std::string me = pubkey();
  while (!stopping_.load()) {
    auto event = inbox_.pop(cfg_.poll_interval);
    check_nonpayment_deadlines();
    if (!event) continue;
    {
      std::lock_guard lk(mu_);
      if (!seen_events_.insert(event->id).second) continue;  // multi-relay dedup
    }
    if (event->kind == kinds::kZapRequest) {
      if (event->tag_value("p").value_or("") == me && !silenced_.load())
        handle_zap_request(*event);
      continue;
    }
    if (event->kind == kinds::kZapReceipt) {
      route_receipt(*event);
      continue;
    }
    bool supported = std::find(cfg_.supported_kinds.begin(), cfg_.supported_kinds.end(),
                               event->kind) != cfg_.supported_kinds.end();
    if (!supported) continue;
    bool addressed_to_me = false;
    for (const auto* p : event->tags_named("p"))
      if (p->size() >= 2 && (*p)[1] == me) addressed_to_me = true;
    if (!addressed_to_me) continue;
    if (silenced_.load()) continue;
    if (is_blacklisted(event->pubkey)) continue;  // no feedback at all

    if (active_sessions_.load() >= cfg_.max_concurrent_jobs) {
      JobFeedback busy;
      busy.status = FeedbackStatus::kError;
      busy.extra_info = "busy";
      busy.job_request_id = event->id;
      busy.customer_pubkey = event->pubkey;
      publish_feedback(busy);
      continue;
    }
    active_sessions_.fetch_add(1);
    std::lock_guard lk(mu_);
    session_threads_.emplace_back([this, ev = *event]() mutable {
      try {
        run_session(std::move(ev));
      } catch (...) {
        // session errors were already reported as error feedback
      }
      active_sessions_.fetch_sub(1);
    });
  }
}

void Provider::handle_zap_request(const nostr::Event& e) {
  nostr::Event receipt;
  try {
    receipt = wallet_.pay(e);
  } catch (const SchemaError&) {
    return;  // malformed zap request: nothing to mint
  }
  // Publish to the relays the request listed; fall back to our own set.
  auto targets = payments::zap_request_relays(e);
  std::vector<std::shared_ptr<relay::RelaySession>> outs;
  for (const auto& session : sessions_)
    if (targets.empty() ||
        std::find(targets.begin(), targets.end(), session->url()) != targets.end())
      outs.push_back(session);
  if (outs.empty()) outs = sessions_;
  try {
    relay::multi_relay_publish(outs, receipt);
  } catch (const RelayError&) {
  }
  // a paying customer is in good standing again
  std::lock_guard lk(mu_);
  pending_payment_.erase(e.pubkey);
}

void Provider::route_receipt(const nostr::Event& e) {
  auto description = e.tag_value("description");
  if (!description) return;
  auto request = nostr::event_from_json(*description);
  if (!request) return;
  auto job_id = request->tag_value("e");
  if (!job_id) return;
  std::shared_ptr<BlockingQueue<nostr::Event>> waiter;
  {
    std::lock_guard lk(mu_);
    auto it = receipt_waiters_.find(*job_id);
    if (it != receipt_waiters_.end()) waiter = it->second;
  }
  if (waiter) waiter->push(e);
}

void Provider::run_session(nostr::Event request_event) {
  const std::string customer = request_event.pubkey;
  const std::string me = pubkey();

  JobFeedback error_fb;
  error_fb.status = FeedbackStatus::kError;
  error_fb.job_request_id = request_event.id;
  error_fb.customer_pubkey = customer;

  JobRequest request;
  try {
    request = events::parse_job_request(request_event);
  } catch (const SchemaError& e) {
    error_fb.extra_info = std::string("malformed request: ") + e.what();
    publish_feedback(error_fb);
    return;
  }

  int round = 0;
  if (auto r = events::find_extra_param(request, events::params::kRound))
    round = std::atoi(r->c_str());
  bool die_this_round = cfg_.die_at_round > 0 && round == cfg_.die_at_round;

  // Gate: demand the per-job initialization payment, wait for a receipt that
  // validates, only then start computing.
  if (cfg_.price_init_msats > 0) {
    auto waiter = std::make_shared<BlockingQueue<nostr::Event>>();
    {
      std::lock_guard lk(mu_);
      receipt_waiters_[request_event.id] = waiter;
    }
    JobFeedback payreq;
    payreq.status = FeedbackStatus::kPaymentRequired;
    payreq.extra_info = "initialization payment required";
    payreq.amount_msats = cfg_.price_init_msats;
    payreq.bolt11 = payments::make_bolt11_stub(
        cfg_.price_init_msats, sha256_hex("invoice:" + request_event.id).substr(0, 16));
    payreq.job_request_id = request_event.id;
    payreq.customer_pubkey = customer;
    publish_feedback(payreq);

    payments::ReceiptExpectation expected{me, cfg_.price_init_msats, payments::lnurl_for(me)};
    auto deadline = std::chrono::steady_clock::now() + cfg_.payment_timeout;
    bool paid = false;
    while (!paid && !stopping_.load()) {
      auto now = std::chrono::steady_clock::now();
      if (now >= deadline) break;
      auto receipt = waiter->pop(
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now));
      if (!receipt) continue;
      if (!nostr::verify_event(*receipt)) continue;
      paid = payments::validate_receipt(*receipt, expected).pass;
    }
    {
      std::lock_guard lk(mu_);
      receipt_waiters_.erase(request_event.id);
    }
    if (stopping_.load()) return;
    if (!paid) {
      error_fb.extra_info = "payment timeout";
      publish_feedback(error_fb);
      return;
    }
  }

  JobFeedback processing;
  processing.status = FeedbackStatus::kProcessing;
  processing.extra_info = "job started";
  processing.job_request_id = request_event.id;
  processing.customer_pubkey = customer;
  publish_feedback(processing);

  if (die_this_round) {
    // fault injection: a provider crashing mid-round is, on the wire,
    // a provider that stops emitting events
    silenced_.store(true);
    return;
  }

  try {
    ml::ModelSpec spec = ml::ModelSpec::parse(request.model_spec);
    // single-output models train on mse, multi-output on cross-entropy
    ml::LossSpec loss_spec{spec.output_dim == 1 ? ml::LossKind::kMse
                                                : ml::LossKind::kCrossEntropy};

    if (!request.model_state.is_ref())
      throw StorageError("model state must be a storage ref");
    ml::ModelParams theta =
        ml::deserialize_params(storage_->get_model(*request.model_state.ref));

    ml::Dataset data;
    if (!request.data_set_url.empty()) {
      auto raw = storage_->get_blob(request.data_set_url);
      data = ml::dataset_from_csv(std::string(raw.begin(), raw.end()));
    }

    auto last_progress = std::chrono::steady_clock::now();
    ml::ProgressFn progress = [&](int step, double l) {
      auto now = std::chrono::steady_clock::now();
      if (step > 1 && now - last_progress < std::chrono::milliseconds(500)) return;
      last_progress = now;
      JobFeedback tick;
      tick.status = FeedbackStatus::kProcessing;
      tick.extra_info = "step " + std::to_string(step) + " loss " + std::to_string(l);
      tick.job_request_id = request_event.id;
      tick.customer_pubkey = customer;
      publish_feedback(tick);
    };

    ml::ModelParams result_params;
    if (cfg_.malicious) {
      // noise instead of work: N(0, 10*I) over the global layout
      result_params = theta;
      Rng rng(mix_seed(0xbadf00d, std::hash<std::string>{}(me + request_event.id)));
      for (auto& v : result_params.values) v = std::sqrt(10.0) * rng.normal();
    } else if (request.task == Task::kInner) {
      if (data.rows() == 0) throw StorageError("inner job without a data shard");
      auto hp = ml::InnerHyperparams::parse(
          events::find_extra_param(request, events::params::kHyperparams)
              .value_or("E=1;bs=32;lr=0.01"));
      result_params = ml::inner_optimize(theta, spec, loss_spec, data,
                                         request.run_option, hp, progress);
    } else {
      // outer task: collect the inner outputs referenced by the request
      std::vector<ml::ModelParams> inner;
      for (int k = 0;; ++k) {
        auto ref_str = events::find_extra_param(
            request, events::params::kInnerOutputPrefix + std::to_string(k));
        if (!ref_str) break;
        auto ref = StorageRef::from_wire(*ref_str);
        if (!ref) throw StorageError("bad inner-output ref in outer request");
        inner.push_back(ml::deserialize_params(storage_->get_model(*ref)));
      }
      if (inner.empty()) throw StorageError("outer job without inner outputs");
      std::vector<double> weights;
      if (auto w = events::find_extra_param(request, events::params::kOuterWeights)) {
        std::istringstream in(*w);
        std::string cell;
        while (std::getline(in, cell, ',')) weights.push_back(std::atof(cell.c_str()));
      }
      if (request.run_option == RunOption::kFedAvg) {
        result_params = ml::outer_fedavg(inner, weights);
      } else {
        ml::OuterState state;
        state.weights = weights;
        if (auto lr = events::find_extra_param(request, events::params::kOuterLr))
          state.outer_lr = std::atof(lr->c_str());
        if (auto mu = events::find_extra_param(request, events::params::kOuterMomentum))
          state.momentum = std::atof(mu->c_str());
        if (auto vref_str =
                events::find_extra_param(request, events::params::kOuterVelocity)) {
          auto vref = StorageRef::from_wire(*vref_str);
          if (!vref) throw StorageError("bad outer-velocity ref");
          state.velocity = ml::deserialize_params(storage_->get_model(*vref)).values;
        }
        result_params = ml::outer_diloco(theta, inner, std::move(state)).first;
      }
      progress(1, 0.0);
    }

    Bytes blob = ml::serialize_params(result_params);
    StorageRef out_ref = storage_->put_model(blob);
    // re-verify the stored blob before advertising its digest
    (void)storage_->get_model(out_ref);

    if (cfg_.tamper_output) {
      // storage-adversary fault: flip one byte behind the hash
      std::string path = storage::FileBackend::path_from_url(out_ref.url);
      Bytes stored = read_file(path);
      stored[stored.size() / 2] ^= 0x01;
      write_file_atomic(path, stored);
    }

    double reported_loss = 0.0;
    if (data.rows() > 0)
      reported_loss = ml::loss(result_params, spec, loss_spec, data);

    JobResult result;
    result.kind = kinds::result_kind_for_request(request_event.kind);
    result.request_json = nostr::event_to_json(request_event);
    result.job_request_id = request_event.id;
    result.relay_hint = sessions_.front()->url();
    result.customer_pubkey = customer;
    result.amount_msats = cfg_.price_result_msats;
    if (cfg_.price_result_msats > 0)
      result.bolt11 = payments::make_bolt11_stub(
          cfg_.price_result_msats,
          sha256_hex("completion:" + request_event.id).substr(0, 16));
    result.info = {{"task", task_to_wire(request.task)},
                   {"train-loss", std::to_string(reported_loss)},
                   {"params", std::to_string(result_params.size())}};
    result.output = out_ref;
    result.reported_loss = reported_loss;

    if (cfg_.publish_nip94) {
      events::FileMetadata meta;
      meta.url = out_ref.url;
      meta.sha256 = out_ref.sha256;
      meta.size_bytes = blob.size();
      meta.alt = "trained model parameters, round " + std::to_string(round);
      meta.description = "model parameters for job " + request_event.id;
      auto meta_event = events::build_file_metadata(meta, cfg_.key);
      publish_all(meta_event);
      result.file_metadata_event_id = meta_event.id;
    }

    JobFeedback success;
    success.status = FeedbackStatus::kSuccess;
    success.extra_info = "job complete";
    success.job_request_id = request_event.id;
    success.customer_pubkey = customer;
    publish_feedback(success);

    publish_all(events::build_job_result(result, cfg_.key));
    jobs_completed_.fetch_add(1);

    if (cfg_.price_result_msats > 0) {
      std::lock_guard lk(mu_);
      pending_payment_.emplace(customer,
                               std::chrono::steady_clock::now() + cfg_.nonpayment_grace);
    }
  } catch (const ml::DivergenceError& e) {
    error_fb.extra_info = std::string("divergence: ") + e.what();
    publish_feedback(error_fb);
  } catch (const std::exception& e) {
    error_fb.extra_info = e.what();
    publish_feedback(error_fb);
  }
}

}  // namespace fedstr::provider
