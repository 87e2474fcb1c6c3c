#include <signal.h>

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "fedstr/demo/harness.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/provider/provider.hpp"
#include "fedstr/relay/server.hpp"
#include "fedstr/storage/store.hpp"
#include "fedstr/util/fs.hpp"

using namespace fedstr;

namespace {

std::atomic<bool> g_stop{false};

void install_signal_handlers() {
  struct sigaction sa{};
  sa.sa_handler = [](int) { g_stop.store(true); };
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

void wait_for_stop() {
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

Keypair load_or_create_key(const std::string& key_path, bool ephemeral) {
  if (ephemeral || key_path.empty()) return generate_keypair();
  if (file_exists(key_path)) {
    auto hex_text = read_text_file(key_path);
    while (!hex_text.empty() && (hex_text.back() == '\n' || hex_text.back() == '\r'))
      hex_text.pop_back();
    auto sk = from_hex_array<32>(hex_text);
    if (!sk) throw ConfigError("key file is not 64 hex chars: " + key_path);
    return generate_keypair(*sk);
  }
  auto kp = generate_keypair();
  write_file_atomic(key_path, to_hex(kp.secret_key.data(), kp.secret_key.size()) + "\n");
  return kp;
}

RunOption parse_run_option(const std::string& s) {
  auto parsed = run_option_from_wire(s);
  if (!parsed) throw CLI::ValidationError("--run-option must be fedavg or diloco");
  return *parsed;
}

customer::OuterMode parse_outer_mode(const std::string& s) {
  if (s == "self") return customer::OuterMode::kSelf;
  if (s == "delegate") return customer::OuterMode::kDelegate;
  throw CLI::ValidationError("--outer must be self or delegate");
}

int cmd_keygen(const std::string& out_path) {
  auto kp = generate_keypair();
  std::string secret_hex = to_hex(kp.secret_key.data(), kp.secret_key.size());
  if (out_path.empty()) {
    std::cout << "secret " << secret_hex << "\n";
  } else {
    write_file_atomic(out_path, secret_hex + "\n");
    std::cout << "secret written to " << out_path << "\n";
  }
  std::cout << "pubkey " << kp.public_key_hex() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedstr: a decentralized marketplace for training AI models over NOSTR"};
  app.require_subcommand(1);
  install_signal_handlers();

  // keygen
  std::string keygen_out;
  auto* keygen = app.add_subcommand("keygen", "Generate a keypair");
  keygen->add_option("--out", keygen_out, "Write the secret key to this file");

  // relay serve
  auto* relay_cmd = app.add_subcommand("relay", "Relay operations");
  relay_cmd->require_subcommand(1);
  std::string relay_bind = "127.0.0.1:7777";
  std::string relay_log_file;
  std::size_t relay_max_bytes = 512 * 1024;
  auto* relay_serve = relay_cmd->add_subcommand("serve", "Run a relay");
  relay_serve->add_option("--bind", relay_bind, "host:port (port 0 = ephemeral)");
  relay_serve->add_option("--log-file", relay_log_file, "Append accepted events (JSONL)");
  relay_serve->add_option("--max-message-bytes", relay_max_bytes,
                          "Reject client messages above this size");

  // provider run
  auto* provider_cmd = app.add_subcommand("provider", "Service provider operations");
  provider_cmd->require_subcommand(1);
  auto* provider_run = provider_cmd->add_subcommand("run", "Run a provider daemon");
  std::string p_relays, p_key_path, p_storage_root, p_name = "fedstr-provider";
  bool p_ephemeral = false, p_nip94 = false, p_malicious = false, p_tamper = false;
  std::uint64_t p_price_init = 100, p_price_result = 900;
  int p_max_jobs = 2, p_die_at_round = 0;
  std::uint64_t p_payment_timeout_ms = 60000, p_progress_interval_ms = 5000;
  std::string p_kinds = "8000";
  provider_run->add_option("--relays", p_relays, "Comma-separated relay URLs")->required();
  provider_run->add_option("--key", p_key_path, "Persistent key file (created if absent)");
  provider_run->add_flag("--ephemeral", p_ephemeral, "Fresh keypair on start");
  provider_run->add_option("--price-init", p_price_init, "Initialization price (msats)");
  provider_run->add_option("--price-result", p_price_result, "Completion price (msats)");
  provider_run->add_option("--max-jobs", p_max_jobs, "Max concurrent jobs");
  provider_run->add_option("--storage-root", p_storage_root, "Model storage directory");
  provider_run->add_option("--name", p_name, "Announcement display name");
  provider_run->add_option("--kinds", p_kinds, "Supported job kinds, comma-separated");
  provider_run->add_option("--payment-timeout-ms", p_payment_timeout_ms,
                           "How long to wait for the initialization payment");
  provider_run->add_option("--progress-interval-ms", p_progress_interval_ms,
                           "Progress feedback interval");
  provider_run->add_flag("--nip94", p_nip94, "Publish NIP-94 file metadata with results");
  provider_run->add_option("--die-at-round", p_die_at_round,
                           "Fault injection: go silent at this round");
  provider_run->add_flag("--malicious", p_malicious,
                         "Fault injection: return noise instead of training");
  provider_run->add_flag("--tamper-output", p_tamper,
                         "Fault injection: corrupt the stored blob after hashing");

  // customer train
  auto* customer_cmd = app.add_subcommand("customer", "Customer operations");
  customer_cmd->require_subcommand(1);
  auto* customer_train = customer_cmd->add_subcommand("train", "Run a training campaign");
  std::string c_relays, c_key_path, c_dataset = "synthetic-linear", c_storage_root;
  std::string c_log_out, c_run_option = "fedavg", c_outer = "self", c_model_spec;
  std::string c_test_type = "A";
  int c_providers = 2, c_rounds = 3;
  std::uint64_t c_seed = 1;
  std::size_t c_n = 3000, c_d = 10;
  double c_noise = 0.1;
  int c_classes = 3;
  int c_epochs = 3, c_batch = 32;
  double c_lr = 0.02;
  std::uint64_t c_init_msats = 100, c_round_msats = 900;
  std::uint64_t c_job_timeout_ms = 30000, c_feedback_interval_ms = 1000;
  double c_gamma = -1, c_beta = 1e9, c_target_loss = -1;
  std::size_t c_tau = 1;
  customer_train->add_option("--relays", c_relays, "Comma-separated relay URLs")->required();
  customer_train->add_option("--key", c_key_path, "Key file (fresh key when omitted)");
  customer_train->add_option("--dataset", c_dataset,
                             "synthetic-linear | synthetic-classify | CSV path");
  customer_train->add_option("--providers", c_providers, "Number of inner providers");
  customer_train->add_option("--rounds", c_rounds, "Training rounds");
  customer_train->add_option("--run-option", c_run_option, "fedavg | diloco");
  customer_train->add_option("--outer", c_outer, "self | delegate");
  customer_train->add_option("--seed", c_seed, "Master seed");
  customer_train->add_option("--n", c_n, "Synthetic dataset rows");
  customer_train->add_option("--d", c_d, "Synthetic dataset features");
  customer_train->add_option("--noise", c_noise, "Synthetic label noise sigma");
  customer_train->add_option("--classes", c_classes, "Classes for synthetic-classify");
  customer_train->add_option("--epochs", c_epochs, "Inner epochs (fedavg) / steps (diloco)");
  customer_train->add_option("--batch-size", c_batch, "Inner batch size");
  customer_train->add_option("--lr", c_lr, "Inner learning rate");
  customer_train->add_option("--model", c_model_spec, "Model spec override");
  customer_train->add_option("--log-out", c_log_out, "Round log path (JSONL)");
  customer_train->add_option("--storage-root", c_storage_root, "Model storage directory");
  customer_train->add_option("--init-msats", c_init_msats, "Initialization payment");
  customer_train->add_option("--round-msats", c_round_msats, "Per-round payment");
  customer_train->add_option("--job-timeout-ms", c_job_timeout_ms, "Per-job timeout");
  customer_train->add_option("--feedback-interval-ms", c_feedback_interval_ms,
                             "Feedback poll interval");
  customer_train->add_option("--test-type", c_test_type, "Validation test: A | B");
  customer_train->add_option("--gamma", c_gamma, "Test A threshold (default 0.5*|test|)");
  customer_train->add_option("--beta", c_beta, "Test B threshold");
  customer_train->add_option("--tau", c_tau, "Test B window length");
  customer_train->add_option("--target-loss", c_target_loss,
                             "Stop when test loss reaches this (optional)");

  // demo e2e
  auto* demo_cmd = app.add_subcommand("demo", "Demo harness");
  demo_cmd->require_subcommand(1);
  auto* demo_e2e = demo_cmd->add_subcommand(
      "e2e", "Spawn relay + providers (separate processes) and train end to end");
  int d_providers = 2, d_rounds = 3;
  std::string d_run_option = "fedavg", d_outer = "self", d_dataset = "synthetic-linear";
  std::uint64_t d_seed = 1;
  std::size_t d_n = 3000, d_d = 10;
  double d_noise = 0.1;
  int d_classes = 3;
  std::string d_log_out, d_summary_out, d_workdir;
  int d_kill_at = 0, d_spares = -1;
  bool d_tamper = false, d_malicious = false, d_nip94 = false;
  std::uint64_t d_job_timeout_ms = 10000;
  int d_epochs = 3, d_batch = 32;
  double d_lr = 0.02, d_gamma = -1, d_target_loss = -1;
  std::string d_test_type = "A";
  demo_e2e->add_option("--providers", d_providers, "Inner providers");
  demo_e2e->add_option("--rounds", d_rounds, "Training rounds");
  demo_e2e->add_option("--run-option", d_run_option, "fedavg | diloco");
  demo_e2e->add_option("--outer", d_outer, "self | delegate");
  demo_e2e->add_option("--dataset", d_dataset, "synthetic-linear | synthetic-classify");
  demo_e2e->add_option("--seed", d_seed, "Master seed");
  demo_e2e->add_option("--n", d_n, "Dataset rows");
  demo_e2e->add_option("--d", d_d, "Dataset features");
  demo_e2e->add_option("--noise", d_noise, "Label noise sigma");
  demo_e2e->add_option("--classes", d_classes, "Classes for synthetic-classify");
  demo_e2e->add_option("--log-out", d_log_out, "Round log path");
  demo_e2e->add_option("--summary-out", d_summary_out, "Summary JSON path");
  demo_e2e->add_option("--workdir", d_workdir, "Working directory (default under root)");
  demo_e2e->add_option("--kill-provider-at", d_kill_at,
                       "Fault injection: kill one provider at this round");
  demo_e2e->add_flag("--tamper-blob", d_tamper,
                     "Fault injection: one provider corrupts its stored blob");
  demo_e2e->add_flag("--malicious-provider", d_malicious,
                     "Fault injection: one provider returns noise");
  demo_e2e->add_option("--spare-providers", d_spares,
                       "Extra announced providers (default: 1 when a fault is set)");
  demo_e2e->add_flag("--nip94", d_nip94, "Providers publish NIP-94 metadata");
  demo_e2e->add_option("--job-timeout-ms", d_job_timeout_ms, "Per-job timeout");
  demo_e2e->add_option("--epochs", d_epochs, "Inner epochs / steps");
  demo_e2e->add_option("--batch-size", d_batch, "Inner batch size");
  demo_e2e->add_option("--lr", d_lr, "Inner learning rate");
  demo_e2e->add_option("--gamma", d_gamma, "Test A threshold");
  demo_e2e->add_option("--test-type", d_test_type, "Validation test: A | B");
  demo_e2e->add_option("--target-loss", d_target_loss, "Early-stop test loss");

  CLI11_PARSE(app, argc, argv);

  try {
    if (keygen->parsed()) return cmd_keygen(keygen_out);

    if (relay_serve->parsed()) {
      relay::RelayServerConfig cfg;
      cfg.bind_address = relay_bind;
      cfg.log_file = relay_log_file;
      cfg.max_message_bytes = relay_max_bytes;
      relay::RelayServer server(cfg);
      server.start();
      std::cout << "listening on " << server.url() << std::endl;
      wait_for_stop();
      server.stop();
      return 0;
    }

    if (provider_run->parsed()) {
      provider::ProviderConfig cfg;
      cfg.key = load_or_create_key(p_key_path, p_ephemeral);
      cfg.relays = split_csv(p_relays);
      cfg.supported_kinds.clear();
      for (const auto& k : split_csv(p_kinds)) cfg.supported_kinds.push_back(std::atoi(k.c_str()));
      cfg.name = p_name;
      cfg.price_init_msats = p_price_init;
      cfg.price_result_msats = p_price_result;
      cfg.max_concurrent_jobs = p_max_jobs;
      cfg.storage_root = p_storage_root;
      cfg.payment_timeout = std::chrono::milliseconds(p_payment_timeout_ms);
      cfg.progress_interval = std::chrono::milliseconds(p_progress_interval_ms);
      cfg.publish_nip94 = p_nip94;
      cfg.die_at_round = p_die_at_round;
      cfg.malicious = p_malicious;
      cfg.tamper_output = p_tamper;
      provider::Provider provider(cfg);
      provider.start();
      std::cout << "announced " << provider.pubkey() << std::endl;
      wait_for_stop();
      provider.stop();
      return 0;
    }

    if (customer_train->parsed()) {
      customer::CustomerConfig cfg;
      cfg.key = c_key_path.empty() ? generate_keypair()
                                   : load_or_create_key(c_key_path, false);
      cfg.relays = split_csv(c_relays);
      cfg.num_pr = c_providers;
      cfg.num_jobs = c_rounds;
      cfg.run_option = parse_run_option(c_run_option);
      cfg.outer_mode = parse_outer_mode(c_outer);
      cfg.feedback_interval = std::chrono::milliseconds(c_feedback_interval_ms);
      cfg.job_timeout = std::chrono::milliseconds(c_job_timeout_ms);
      cfg.init_msats = c_init_msats;
      cfg.round_msats = c_round_msats;
      cfg.test_type = c_test_type == "B" ? validation::TestType::kB
                                         : validation::TestType::kA;
      if (c_gamma >= 0) cfg.gamma_t = c_gamma;
      cfg.beta_t = c_beta;
      cfg.tau_c = c_tau;
      if (c_target_loss >= 0) cfg.target_loss = c_target_loss;
      cfg.hyper.epochs = c_epochs;
      cfg.hyper.batch_size = c_batch;
      cfg.hyper.learning_rate = c_lr;
      cfg.storage_root = c_storage_root;
      cfg.log_path = c_log_out;
      cfg.master_seed = c_seed;

      ml::Dataset full;
      if (c_dataset == "synthetic-linear") {
        full = ml::make_synthetic_linear(c_n, c_d, c_noise, c_seed);
        cfg.model.family = ml::ModelFamily::kLinearRegression;
        cfg.model.input_dim = static_cast<int>(c_d);
        cfg.loss.kind = ml::LossKind::kMse;
      } else if (c_dataset == "synthetic-classify") {
        full = ml::make_synthetic_classify(c_n, c_d, c_classes, c_seed);
        cfg.model.family = ml::ModelFamily::kLogisticRegression;
        cfg.model.input_dim = static_cast<int>(c_d);
        cfg.model.output_dim = c_classes;
        cfg.loss.kind = ml::LossKind::kCrossEntropy;
      } else {
        full = ml::dataset_from_csv(read_text_file(c_dataset));
        cfg.model.family = ml::ModelFamily::kLinearRegression;
        cfg.model.input_dim = static_cast<int>(full.dim);
        cfg.loss.kind = ml::LossKind::kMse;
      }
      if (!c_model_spec.empty()) cfg.model = ml::ModelSpec::parse(c_model_spec);
      std::size_t test_rows = std::max<std::size_t>(1, full.rows() / 5);
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t i = 0; i < full.rows() - test_rows; ++i) train_idx.push_back(i);
      for (std::size_t i = full.rows() - test_rows; i < full.rows(); ++i)
        test_idx.push_back(i);
      cfg.train = ml::subset(full, train_idx);
      cfg.test = ml::subset(full, test_idx);

      auto report = customer::run_training(cfg);
      std::cout << "completed " << (report.completed ? "true" : "false") << "\n"
                << "rounds " << report.rounds_completed << "\n"
                << "initial train loss " << report.initial_train_loss << "\n"
                << "final train loss " << report.final_train_loss << "\n"
                << "final test loss " << report.final_test_loss << "\n"
                << "reassignments " << report.reassignments << "\n"
                << "msats paid " << report.msats_paid << "\n";
      if (!c_log_out.empty()) std::cout << "round log " << c_log_out << "\n";
      if (!report.completed) {
        std::cout << "abort reason " << report.abort_reason << "\n";
        return 1;
      }
      return 0;
    }

    if (demo_e2e->parsed()) {
      demo::DemoConfig cfg;
      cfg.exe_path = "/proc/self/exe";
      cfg.providers = d_providers;
      cfg.rounds = d_rounds;
      cfg.run_option = parse_run_option(d_run_option);
      cfg.outer_mode = parse_outer_mode(d_outer);
      cfg.dataset.kind = d_dataset == "synthetic-classify"
                             ? demo::DatasetSpec::Kind::kSyntheticClassify
                             : demo::DatasetSpec::Kind::kSyntheticLinear;
      cfg.dataset.n = d_n;
      cfg.dataset.d = d_d;
      cfg.dataset.noise = d_noise;
      cfg.dataset.classes = d_classes;
      cfg.seed = d_seed;
      if (d_kill_at > 0) cfg.kill_provider_at_round = d_kill_at;
      cfg.tamper_blob = d_tamper;
      cfg.malicious_provider = d_malicious;
      cfg.spare_providers = d_spares;
      cfg.nip94 = d_nip94;
      cfg.workdir = d_workdir;
      cfg.job_timeout = std::chrono::milliseconds(d_job_timeout_ms);
      cfg.hyper.epochs = d_epochs;
      cfg.hyper.batch_size = d_batch;
      cfg.hyper.learning_rate = d_lr;
      if (d_gamma >= 0) cfg.gamma_t = d_gamma;
      cfg.test_type = d_test_type == "B" ? validation::TestType::kB
                                         : validation::TestType::kA;
      if (d_target_loss >= 0) cfg.target_loss = d_target_loss;

      auto summary = demo::run_demo(cfg);
      std::string summary_json = summary.to_json();
      if (!d_summary_out.empty()) write_file_atomic(d_summary_out, summary_json);
      if (!d_log_out.empty() && file_exists(summary.round_log_path) &&
          d_log_out != summary.round_log_path) {
        write_file_atomic(d_log_out, read_file(summary.round_log_path));
      }
      std::cout << summary_json << std::endl;
      return summary.exit_code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
