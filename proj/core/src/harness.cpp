#include "fedstr/demo/harness.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <sstream>
#include <thread>
#include <sstream>

#include "fedstr/errors.hpp"
#include "fedstr/storage/store.hpp"
#include "fedstr/util/fs.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fedstr::demo {

namespace {

struct ChildProcess {
  pid_t pid = -1;
  int stdout_fd = -1;

  void terminate() {
    if (pid <= 0) return;
    ::kill(pid, SIGTERM);
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid, &status, WNOHANG) == pid) {
        pid = -1;
        break;
      }
      ::usleep(20000);
    }
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      pid = -1;
    }
    if (stdout_fd >= 0) {
      ::close(stdout_fd);
      stdout_fd = -1;
    }
  }
};

ChildProcess spawn(const std::string& exe, const std::vector<std::string>& args,
                   const std::string& stdout_path, bool pipe_stdout) {
  int pipe_fds[2] = {-1, -1};
  if (pipe_stdout && ::pipe(pipe_fds) != 0)
    throw StorageError("pipe() failed for child process");

  pid_t pid = ::fork();
  if (pid < 0) throw StorageError("fork() failed");
  if (pid == 0) {
    if (pipe_stdout) {
      ::dup2(pipe_fds[1], STDOUT_FILENO);
      ::close(pipe_fds[0]);
      ::close(pipe_fds[1]);
    } else if (!stdout_path.empty()) {
      int fd = ::open(stdout_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
      if (fd >= 0) {
        ::dup2(fd, STDOUT_FILENO);
        ::dup2(fd, STDERR_FILENO);
        ::close(fd);
      }
    }
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(exe.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(exe.c_str(), argv.data());
    ::_exit(127);
  }
  ChildProcess child;
  child.pid = pid;
  if (pipe_stdout) {
    ::close(pipe_fds[1]);
    child.stdout_fd = pipe_fds[0];
  }
  return child;
}

// Reads lines from the child's stdout until one matches `prefix`.
std::optional<std::string> wait_for_line(int fd, const std::string& prefix,
                                         std::chrono::milliseconds timeout) {
  std::string buffer;
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    fd_set set;
    FD_ZERO(&set);
    FD_SET(fd, &set);
    timeval tv{0, 100000};
    int ready = ::select(fd + 1, &set, nullptr, nullptr, &tv);
    if (ready <= 0) continue;
    char chunk[256];
    ssize_t n = ::read(fd, chunk, sizeof(chunk));
    if (n <= 0) return std::nullopt;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t pos;
    while ((pos = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, pos);
      buffer.erase(0, pos + 1);
      if (line.rfind(prefix, 0) == 0) return line;
    }
  }
  return std::nullopt;
}

}  // namespace

std::string DemoSummary::to_json() const {
  json rounds_json = json::array();
  for (const auto& r : rounds)
    rounds_json.push_back({{"round", r.round},
                           {"train_loss_after", r.train_loss_after},
                           {"theta_sha256", r.theta_sha256},
                           {"reassignments", r.reassignments},
                           {"integrity_errors", r.integrity_errors},
                           {"validations_pass", r.validations_pass},
                           {"validations_fail", r.validations_fail}});
  json j{{"completed", completed},
         {"exit_code", exit_code},
         {"abort_reason", abort_reason},
         {"workdir", workdir},
         {"relay_url", relay_url},
         {"relay_log", relay_log_path},
         {"round_log", round_log_path},
         {"final_blob", final_blob_path},
         {"final_theta_sha256", final_theta_sha256},
         {"initial_train_loss", initial_train_loss},
         {"final_train_loss", final_train_loss},
         {"rounds_completed", rounds_completed},
         {"reassignments", reassignments},
         {"integrity_errors", integrity_errors},
         {"validations", {{"pass", validations_pass}, {"fail", validations_fail}}},
         {"hash_verified_reads", hash_verified_reads},
         {"payments", {{"msats_paid", msats_paid}, {"zaps_sent", zaps_sent}}},
         {"hosts_contacted", hosts_contacted},
         {"rounds", rounds_json}};
  return j.dump(2);
}

DemoSummary run_demo(const DemoConfig& cfg) {
  if (cfg.providers < 1 || cfg.rounds < 1)
    throw ConfigError("demo needs providers >= 1 and rounds >= 1");
  if (cfg.exe_path.empty() || !file_exists(cfg.exe_path))
    throw ConfigError("demo needs the fedstr binary path, got: " + cfg.exe_path);

  DemoSummary summary;

  std::string workdir = cfg.workdir;
  if (workdir.empty()) {
    workdir = (fs::path(storage::default_storage_root()) /
               ("demo_" + std::to_string(::getpid()) + "_" +
                std::to_string(nostr::unix_now())))
                  .string();
  }
  ensure_dir(workdir);
  std::string model_root = (fs::path(workdir) / "models").string();
  ensure_dir(model_root);
  summary.workdir = workdir;
  summary.relay_log_path = (fs::path(workdir) / "relay_log.jsonl").string();
  summary.round_log_path = (fs::path(workdir) / "round_log.jsonl").string();

  std::vector<ChildProcess> children;
  auto cleanup = [&] {
    for (auto& child : children) child.terminate();
    children.clear();
  };

  try {
    // relay child: binds an ephemeral port and reports it on stdout
    ChildProcess relay = spawn(
        cfg.exe_path,
        {"relay", "serve", "--bind", "127.0.0.1:0", "--log-file", summary.relay_log_path},
        "", /*pipe_stdout=*/true);
    children.push_back(relay);
    auto line = wait_for_line(relay.stdout_fd, "listening on ",
                              std::chrono::milliseconds(10000));
    if (!line) {
      cleanup();
      summary.abort_reason = "relay child did not come up";
      return summary;
    }
    summary.relay_url = line->substr(std::strlen("listening on "));
    summary.hosts_contacted.push_back("127.0.0.1");

    // Provider children. Discovery takes the newest announcements first
    // (1 s timestamp resolution), so ordering matters when a fault is
    // configured: spares announce first (engaged only on reassignment) and
    // the faulty provider announces last so the customer certainly hires it.
    bool fault_configured = cfg.kill_provider_at_round.has_value() ||
                            cfg.tamper_blob || cfg.malicious_provider;
    int spares = cfg.spare_providers >= 0 ? cfg.spare_providers
                                          : (fault_configured ? 1 : 0);
    auto spawn_provider = [&](int index, bool faulty) {
      std::vector<std::string> args{
          "provider",       "run",
          "--relays",       summary.relay_url,
          "--ephemeral",
          "--storage-root", model_root,
          "--price-init",   std::to_string(cfg.init_msats),
          "--price-result", std::to_string(cfg.round_msats),
          "--max-jobs",     "4"};
      if (faulty && cfg.kill_provider_at_round)
        args.insert(args.end(),
                    {"--die-at-round", std::to_string(*cfg.kill_provider_at_round)});
      if (faulty && cfg.malicious_provider) args.push_back("--malicious");
      if (faulty && cfg.tamper_blob) args.push_back("--tamper-output");
      if (cfg.nip94) args.push_back("--nip94");
      std::string log_path =
          (fs::path(workdir) / ("provider_" + std::to_string(index) + ".log")).string();
      children.push_back(spawn(cfg.exe_path, args, log_path, /*pipe_stdout=*/false));
    };
    int index = 0;
    for (int s = 0; s < spares; ++s) spawn_provider(index++, false);
    int honest = cfg.providers - (fault_configured ? 1 : 0);
    if (fault_configured && spares > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(1100));
    for (int i = 0; i < honest; ++i) spawn_provider(index++, false);
    if (fault_configured) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1100));
      spawn_provider(index++, true);
    }

    // customer runs in-process
    customer::CustomerConfig ccfg;
    ccfg.key = generate_keypair();
    ccfg.relays = {summary.relay_url};
    ccfg.num_pr = cfg.providers;
    ccfg.num_jobs = cfg.rounds;
    ccfg.run_option = cfg.run_option;
    ccfg.outer_mode = cfg.outer_mode;
    ccfg.feedback_interval = cfg.feedback_interval;
    ccfg.job_timeout = cfg.job_timeout;
    ccfg.init_msats = cfg.init_msats;
    ccfg.round_msats = cfg.round_msats;
    ccfg.test_type = cfg.test_type;
    ccfg.gamma_t = cfg.gamma_t;
    ccfg.beta_t = cfg.beta_t;
    ccfg.tau_c = cfg.tau_c;
    ccfg.target_loss = cfg.target_loss;
    ccfg.hyper = cfg.hyper;
    ccfg.storage_root = model_root;
    ccfg.log_path = summary.round_log_path;
    ccfg.master_seed = cfg.seed;

    ml::Dataset full;
    if (cfg.dataset.kind == DatasetSpec::Kind::kSyntheticLinear) {
      full = ml::make_synthetic_linear(cfg.dataset.n, cfg.dataset.d, cfg.dataset.noise,
                                       cfg.seed);
      ccfg.model.family = ml::ModelFamily::kLinearRegression;
      ccfg.model.input_dim = static_cast<int>(cfg.dataset.d);
      ccfg.model.output_dim = 1;
      ccfg.loss.kind = ml::LossKind::kMse;
    } else {
      full = ml::make_synthetic_classify(cfg.dataset.n, cfg.dataset.d,
                                         cfg.dataset.classes, cfg.seed);
      ccfg.model.family = ml::ModelFamily::kLogisticRegression;
      ccfg.model.input_dim = static_cast<int>(cfg.dataset.d);
      ccfg.model.output_dim = cfg.dataset.classes;
      ccfg.loss.kind = ml::LossKind::kCrossEntropy;
    }
    std::size_t test_rows =
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     cfg.dataset.test_fraction *
                                     static_cast<double>(full.rows())));
    // deterministic holdout: synthetic rows are i.i.d., the tail works
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < full.rows() - test_rows; ++i) train_idx.push_back(i);
    for (std::size_t i = full.rows() - test_rows; i < full.rows(); ++i)
      test_idx.push_back(i);
    ccfg.train = ml::subset(full, train_idx);
    ccfg.test = ml::subset(full, test_idx);

    auto report = customer::run_training(ccfg);

    summary.completed = report.completed;
    summary.abort_reason = report.abort_reason;
    summary.initial_train_loss = report.initial_train_loss;
    summary.final_train_loss = report.final_train_loss;
    summary.rounds_completed = report.rounds_completed;
    summary.reassignments = report.reassignments;
    summary.integrity_errors = report.integrity_errors;
    summary.validations_pass = report.validations_pass;
    summary.validations_fail = report.validations_fail;
    summary.hash_verified_reads = report.hash_verified_reads;
    summary.msats_paid = report.msats_paid;
    summary.zaps_sent = report.zaps_sent;
    summary.rounds = report.rounds;
    summary.final_theta_sha256 = report.final_ref.sha256;
    if (!report.final_ref.url.empty())
      summary.final_blob_path = storage::FileBackend::path_from_url(report.final_ref.url);
    for (const auto& host : report.relay_hosts) summary.hosts_contacted.push_back(host);

    summary.exit_code = report.completed ? 0 : 1;
  } catch (const std::exception& e) {
    summary.abort_reason = e.what();
    summary.exit_code = 1;
  }

  cleanup();
  return summary;
}

}  // namespace fedstr::demo
