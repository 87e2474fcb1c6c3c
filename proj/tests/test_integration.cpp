#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "fedstr/customer/customer.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/provider/provider.hpp"
#include "fedstr/relay/server.hpp"

using namespace fedstr;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

struct TestBed {
  relay::RelayServer relay_server;
  fs::path workdir;
  std::vector<std::unique_ptr<provider::Provider>> providers;

  TestBed() : relay_server(relay::RelayServerConfig{}) {
    relay_server.start();
    workdir = fs::temp_directory_path() /
              ("fedstr_it_" + std::to_string(::getpid()) + "_" +
               std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(workdir);
  }

  ~TestBed() {
    for (auto& p : providers) p->stop();
    relay_server.stop();
    std::error_code ec;
    fs::remove_all(workdir, ec);
  }

  provider::Provider& add_provider(
      const std::function<void(provider::ProviderConfig&)>& tweak = {}) {
    provider::ProviderConfig cfg;
    cfg.key = generate_keypair();
    cfg.relays = {relay_server.url()};
    cfg.storage_root = (workdir / "models").string();
    cfg.payment_timeout = 10000ms;
    cfg.max_concurrent_jobs = 4;
    if (tweak) tweak(cfg);
    providers.push_back(std::make_unique<provider::Provider>(cfg));
    providers.back()->start();
    return *providers.back();
  }

  // Discovery ranks announcements newest-first with 1 s timestamp
  // resolution; spacing the announcements pins which providers the customer
  // engages (later additions rank first).
  provider::Provider& add_provider_spaced(
      const std::function<void(provider::ProviderConfig&)>& tweak = {}) {
    std::this_thread::sleep_for(1100ms);
    return add_provider(tweak);
  }

  customer::CustomerConfig base_customer(int num_pr, int rounds) {
    customer::CustomerConfig cfg;
    cfg.key = generate_keypair();
    cfg.relays = {relay_server.url()};
    cfg.num_pr = num_pr;
    cfg.num_jobs = rounds;
    cfg.feedback_interval = 100ms;
    cfg.job_timeout = 8000ms;
    cfg.discovery_window = 8000ms;
    cfg.storage_root = (workdir / "models").string();
    cfg.log_path = (workdir / "round_log.jsonl").string();
    cfg.master_seed = 7;
    cfg.hyper.epochs = 2;
    cfg.hyper.batch_size = 16;
    cfg.hyper.learning_rate = 0.02;

    auto full = ml::make_synthetic_linear(400, 4, 0.05, 7);
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < 320; ++i) train_idx.push_back(i);
    for (std::size_t i = 320; i < 400; ++i) test_idx.push_back(i);
    cfg.train = ml::subset(full, train_idx);
    cfg.test = ml::subset(full, test_idx);
    cfg.model.family = ml::ModelFamily::kLinearRegression;
    cfg.model.input_dim = 4;
    cfg.loss.kind = ml::LossKind::kMse;
    return cfg;
  }
};

int count_phase(const customer::TrainingReport& report, const std::string& phase) {
  int n = 0;
  for (const auto& entry : report.log)
    if (entry.phase == phase) ++n;
  return n;
}

}  // namespace

TEST_CASE("discovery returns announced providers, newest first, honoring exclusions") {
  TestBed bed;
  auto& p1 = bed.add_provider();
  auto& p2 = bed.add_provider();
  auto session = relay::RelaySession::connect(bed.relay_server.url());

  auto found = customer::discover_providers({session}, 2, 8000, {}, 5000ms);
  CHECK(found.size() == 2);
  CHECK(std::set<std::string>(found.begin(), found.end()) ==
        std::set<std::string>{p1.pubkey(), p2.pubkey()});

  auto excluded = customer::discover_providers({session}, 1, 8000, {p1.pubkey()}, 5000ms);
  CHECK(excluded[0] == p2.pubkey());

  CHECK_THROWS_AS(customer::discover_providers({session}, 3, 8000, {}, 1000ms),
                  RelayError);
  session->close();
}

TEST_CASE("re-announcement supersedes the old one (replaceable semantics)") {
  TestBed bed;
  provider::ProviderConfig cfg;
  cfg.key = generate_keypair();
  cfg.relays = {bed.relay_server.url()};
  cfg.storage_root = (bed.workdir / "models").string();
  {
    provider::Provider early(cfg);
    early.start();
    early.stop();
  }
  std::this_thread::sleep_for(1100ms);  // created_at has 1s resolution
  provider::Provider late(cfg);
  late.start();

  auto session = relay::RelaySession::connect(bed.relay_server.url());
  auto found = customer::discover_providers({session}, 1, 8000, {}, 5000ms);
  CHECK(found[0] == late.pubkey());
  CHECK(found.size() == 1);  // the same pubkey appears once
  late.stop();
  session->close();
}

TEST_CASE("two providers, two fedavg rounds, self outer: full protocol flow") {
  TestBed bed;
  bed.add_provider();
  bed.add_provider();

  auto cfg = bed.base_customer(2, 2);
  auto report = customer::run_training(cfg);

  REQUIRE(report.completed);
  CHECK(report.rounds_completed == 2);
  CHECK(report.final_train_loss < report.initial_train_loss);
  CHECK(report.reassignments == 0);
  CHECK(report.integrity_errors == 0);
  CHECK(report.validations_pass == 4);  // 2 providers x 2 rounds
  CHECK(report.validations_fail == 0);
  CHECK(report.hash_verified_reads >= 4);
  // two payments per provider per round: init gate + validated completion
  CHECK(report.zaps_sent == 8);
  CHECK(report.msats_paid == 4 * (100 + 900));  // default prices

  CHECK(count_phase(report, "Requested") == 4);
  CHECK(count_phase(report, "Paid") == 4);
  CHECK(count_phase(report, "ResultReady") == 4);
  CHECK(count_phase(report, "Validated") == 4);
}

TEST_CASE("diloco run with delegated outer matches self outer bitwise") {
  TestBed bed;
  bed.add_provider();
  bed.add_provider();
  bed.add_provider();  // spare doubles as the outer provider

  auto self_cfg = bed.base_customer(2, 2);
  self_cfg.run_option = RunOption::kDiLoCo;
  self_cfg.hyper.epochs = 5;  // diloco steps
  self_cfg.outer_mode = customer::OuterMode::kSelf;
  auto self_report = customer::run_training(self_cfg);
  REQUIRE(self_report.completed);

  auto delegate_cfg = bed.base_customer(2, 2);
  delegate_cfg.run_option = RunOption::kDiLoCo;
  delegate_cfg.hyper.epochs = 5;
  delegate_cfg.outer_mode = customer::OuterMode::kDelegate;
  auto delegate_report = customer::run_training(delegate_cfg);
  REQUIRE(delegate_report.completed);

  REQUIRE(self_report.rounds.size() == delegate_report.rounds.size());
  for (std::size_t r = 0; r < self_report.rounds.size(); ++r)
    CHECK(self_report.rounds[r].theta_sha256 == delegate_report.rounds[r].theta_sha256);
  CHECK(self_report.final_params == delegate_report.final_params);
}

TEST_CASE("silent provider triggers timeout reassignment to a spare") {
  TestBed bed;
  bed.add_provider();  // spare, oldest announcement: engaged only on reassign
  bed.add_provider_spaced();
  bed.add_provider_spaced([](provider::ProviderConfig& cfg) { cfg.die_at_round = 1; });

  auto cfg = bed.base_customer(2, 2);
  cfg.job_timeout = 2500ms;
  auto report = customer::run_training(cfg);

  REQUIRE(report.completed);
  CHECK(report.reassignments == 1);
  CHECK(count_phase(report, "Reassigned") == 1);
  CHECK(report.final_train_loss < report.initial_train_loss);
}

TEST_CASE("tampered blob raises integrity error and reassigns") {
  TestBed bed;
  bed.add_provider();  // spare
  bed.add_provider_spaced();
  bed.add_provider_spaced([](provider::ProviderConfig& cfg) { cfg.tamper_output = true; });

  auto cfg = bed.base_customer(2, 2);
  auto report = customer::run_training(cfg);

  REQUIRE(report.completed);
  CHECK(report.integrity_errors >= 1);
  CHECK(report.reassignments >= 1);
  CHECK(count_phase(report, "IntegrityError") >= 1);
}

TEST_CASE("malicious provider fails test A and is replaced") {
  TestBed bed;
  bed.add_provider();  // spare
  bed.add_provider_spaced();
  bed.add_provider_spaced();
  bed.add_provider_spaced([](provider::ProviderConfig& cfg) { cfg.malicious = true; });

  auto cfg = bed.base_customer(3, 1);
  cfg.test_type = validation::TestType::kA;
  auto report = customer::run_training(cfg);

  CAPTURE(report.abort_reason);
  REQUIRE(report.completed);
  CHECK(report.validations_fail >= 1);
  CHECK(report.reassignments >= 1);
  CHECK(count_phase(report, "ValidationFailed") >= 1);
}

TEST_CASE("reassignment exhaustion aborts with a partial log") {
  TestBed bed;
  bed.add_provider();
  bed.add_provider_spaced([](provider::ProviderConfig& cfg) { cfg.die_at_round = 1; });
  // no spare: the replacement search must come up empty

  auto cfg = bed.base_customer(2, 1);
  cfg.job_timeout = 1500ms;
  cfg.discovery_window = 1500ms;
  auto report = customer::run_training(cfg);

  CHECK(!report.completed);
  CHECK(!report.abort_reason.empty());
  CHECK(count_phase(report, "Aborted") == 1);
}

TEST_CASE("config invariants are enforced up front") {
  customer::CustomerConfig cfg;
  cfg.key = generate_keypair();
  cfg.relays = {"ws://127.0.0.1:1"};
  cfg.train = ml::make_synthetic_linear(10, 2, 0.1, 1);
  cfg.test = cfg.train;
  cfg.model.input_dim = 2;

  auto bad_jobs = cfg;
  bad_jobs.num_jobs = 0;
  CHECK_THROWS_AS(customer::run_training(bad_jobs), ConfigError);

  auto bad_pr = cfg;
  bad_pr.num_pr = 0;
  CHECK_THROWS_AS(customer::run_training(bad_pr), ConfigError);

  auto bad_timeouts = cfg;
  bad_timeouts.job_timeout = 50ms;
  bad_timeouts.feedback_interval = 100ms;
  CHECK_THROWS_AS(customer::run_training(bad_timeouts), ConfigError);

  provider::ProviderConfig pcfg;
  pcfg.key = generate_keypair();
  pcfg.relays = {"ws://127.0.0.1:1"};
  pcfg.supported_kinds = {};
  CHECK_THROWS_AS(provider::Provider{pcfg}, ConfigError);
}

TEST_CASE("busy provider rejects overflow jobs with error feedback") {
  TestBed bed;
  bed.add_provider([](provider::ProviderConfig& cfg) {
    cfg.max_concurrent_jobs = 1;
    cfg.payment_timeout = 1500ms;  // holds the one slot busy long enough
    cfg.price_init_msats = 1;      // requires payment nobody sends
  });
  auto& target = *bed.providers.back();

  // two raw requests to the same provider; the second must get "busy"
  auto session = relay::RelaySession::connect(bed.relay_server.url());
  auto customer_kp = generate_keypair();
  nostr::Filter fb_filter;
  fb_filter.kinds = {{7000}};
  fb_filter.tag_queries["p"] = {customer_kp.public_key_hex()};
  auto stream = session->subscribe({fb_filter});

  events::JobRequest req;
  req.kind = 8000;
  req.inputs = {{"file:///dev/null", events::InputType::kUrl, "", ""}};
  req.providers = {target.pubkey()};
  req.task = Task::kInner;
  req.run_option = RunOption::kFedAvg;
  req.model_spec = "family=linear;in=2;out=1;seed=0";
  req.relays = {bed.relay_server.url()};

  session->publish(events::build_job_request(req, customer_kp, nostr::unix_now()));
  req.extra_params.emplace_back("nonce", "2");
  session->publish(events::build_job_request(req, customer_kp, nostr::unix_now()));

  bool saw_busy = false;
  bool saw_payment_timeout = false;
  auto deadline = std::chrono::steady_clock::now() + 6s;
  while ((!saw_busy || !saw_payment_timeout) &&
         std::chrono::steady_clock::now() < deadline) {
    auto item = stream->pop(200ms);
    if (!item || item->type != relay::SubItem::Type::kEvent) continue;
    if (item->event.kind != 7000) continue;
    auto fb = events::parse_feedback(item->event);
    if (fb.status != events::FeedbackStatus::kError) continue;
    if (fb.extra_info == "busy") saw_busy = true;
    // the occupying job is never paid: its session must end with this error
    if (fb.extra_info == "payment timeout") saw_payment_timeout = true;
  }
  CHECK(saw_busy);
  CHECK(saw_payment_timeout);
  session->close();
}

TEST_CASE("unpaid delivery blacklists the customer") {
  TestBed bed;
  auto& provider = *&bed.add_provider([](provider::ProviderConfig& cfg) {
    cfg.price_init_msats = 0;  // no gate: jobs run immediately
    cfg.price_result_msats = 10;
    cfg.nonpayment_grace = 300ms;
  });

  // storage with a real shard + model for the raw job
  auto storage = storage::Storage::local((bed.workdir / "models").string());
  auto data = ml::make_synthetic_linear(50, 2, 0.1, 3);
  auto csv = ml::dataset_to_csv(data);
  auto data_url = storage.put_blob(Bytes(csv.begin(), csv.end()), "shard.csv");
  ml::ModelSpec spec;
  spec.family = ml::ModelFamily::kLinearRegression;
  spec.input_dim = 2;
  auto theta_ref = storage.put_model(ml::serialize_params(ml::init_model(spec)));

  auto session = relay::RelaySession::connect(bed.relay_server.url());
  auto customer_kp = generate_keypair();
  nostr::Filter any;
  any.tag_queries["p"] = {customer_kp.public_key_hex()};
  auto stream = session->subscribe({any});

  events::JobRequest req;
  req.kind = 8000;
  req.inputs = {{data_url, events::InputType::kUrl, "", ""}};
  req.providers = {provider.pubkey()};
  req.task = Task::kInner;
  req.run_option = RunOption::kFedAvg;
  req.data_set_url = data_url;
  req.model_state.ref = theta_ref;
  req.model_spec = spec.to_string();
  req.relays = {bed.relay_server.url()};
  req.extra_params = {{"hyperparams", "E=1;bs=16;lr=0.01"}};
  session->publish(events::build_job_request(req, customer_kp, nostr::unix_now()));

  // the job completes (result arrives) but the customer never pays
  bool got_result = false;
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!got_result && std::chrono::steady_clock::now() < deadline) {
    auto item = stream->pop(200ms);
    if (item && item->type == relay::SubItem::Type::kEvent &&
        item->event.kind == 6000)
      got_result = true;
  }
  REQUIRE(got_result);

  std::this_thread::sleep_for(600ms);  // grace elapses
  CHECK(provider.is_blacklisted(customer_kp.public_key_hex()));

  // further requests draw no events at all
  req.extra_params.push_back({"nonce", "again"});
  session->publish(events::build_job_request(req, customer_kp, nostr::unix_now()));
  auto quiet = stream->pop(1200ms);
  bool silent = !quiet.has_value();
  CHECK(silent);
  session->close();
}

TEST_CASE("nip94 mode publishes metadata consistent with the result") {
  TestBed bed;
  bed.add_provider([](provider::ProviderConfig& cfg) { cfg.publish_nip94 = true; });
  bed.add_provider([](provider::ProviderConfig& cfg) { cfg.publish_nip94 = true; });

  auto cfg = bed.base_customer(2, 1);
  auto report = customer::run_training(cfg);
  REQUIRE(report.completed);

  // every 1063 on the relay agrees with some advertised output digest
  auto session = relay::RelaySession::connect(bed.relay_server.url());
  nostr::Filter meta_filter;
  meta_filter.kinds = {{1063}};
  auto stream = session->subscribe({meta_filter});
  int metadata_events = 0;
  for (;;) {
    auto item = stream->pop(2000ms);
    if (!item || item->type != relay::SubItem::Type::kEvent) break;
    auto meta = events::parse_file_metadata(item->event);
    CHECK(meta.sha256.size() == 64);
    CHECK(meta.size_bytes > 0);
    ++metadata_events;
  }
  CHECK(metadata_events >= 2);
  session->close();
}
