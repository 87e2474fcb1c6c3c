#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedstr/marketplace_types.hpp"
#include "fedstr/nostr/event.hpp"

// Typed construction and strict parsing of the marketplace event family.
// Parsers throw SchemaError naming the offending tag; build(parse(x)) == x
// field-wise for every record satisfying its invariants, and unknown "param"
// tags ride through untouched. The tag grammar is documented in
// docs/protocol.md.

namespace fedstr::events {

enum class InputType { kUrl, kEvent, kJob, kText };
std::string input_type_to_wire(InputType t);
std::optional<InputType> input_type_from_wire(const std::string& s);

struct JobInput {
  std::string data;
  InputType type = InputType::kUrl;
  std::string relay_hint;
  std::string marker;
  bool operator==(const JobInput&) const = default;
};

// Model state rides in a tag: a storage ref for anything real, or a small
// inline payload (rejected above 64 KiB on build).
struct ModelState {
  std::optional<StorageRef> ref;
  std::string inline_data;

  bool is_ref() const { return ref.has_value(); }
  std::string to_wire() const;
  static ModelState from_wire(const std::string& s);
  bool operator==(const ModelState&) const = default;

  static constexpr std::size_t kMaxInlineBytes = 64 * 1024;
};

struct JobRequest {
  int kind = kinds::kJobRequestMin;
  std::vector<JobInput> inputs;  // exactly one primary input
  std::string output_spec = "model-parameters";
  std::vector<std::string> relays;
  std::optional<std::uint64_t> bid_msats;
  std::vector<std::string> providers;  // p tags
  Task task = Task::kInner;
  RunOption run_option = RunOption::kFedAvg;
  std::string data_set_url;
  ModelState model_state;
  std::string model_spec;
  std::string source_code_url;
  std::int64_t expected_execution_time = 0;  // seconds
  std::string hardware_spec;
  std::string validation_rules_url;
  std::int64_t timeout_max = 0;  // seconds
  std::vector<std::pair<std::string, std::string>> extra_params;

  bool operator==(const JobRequest&) const = default;
};

enum class FeedbackStatus { kPaymentRequired, kProcessing, kError, kSuccess, kPartial };
std::string feedback_status_to_wire(FeedbackStatus s);  // hyphenated wire names
std::optional<FeedbackStatus> feedback_status_from_wire(const std::string& s);

struct JobFeedback {
  FeedbackStatus status = FeedbackStatus::kProcessing;
  std::string extra_info;
  std::optional<std::uint64_t> amount_msats;
  std::optional<std::string> bolt11;
  std::string job_request_id;
  std::string relay_hint;
  std::string customer_pubkey;
  std::string payload;  // content: partial/sample results

  bool operator==(const JobFeedback&) const = default;
};

struct JobResult {
  int kind = kinds::kJobResultMin;
  std::string request_json;  // stringified original job request event
  std::string job_request_id;
  std::string relay_hint;
  std::string customer_pubkey;
  std::optional<std::uint64_t> amount_msats;
  std::optional<std::string> bolt11;
  std::vector<std::pair<std::string, std::string>> info;
  StorageRef output;
  double reported_loss = 0.0;
  std::optional<std::string> file_metadata_event_id;  // NIP-94 companion event

  bool operator==(const JobResult&) const = default;
};

struct Discoverability {
  std::string name = "Federated Learning AI-VM";
  std::string about;
  std::vector<int> supported_kinds;  // k tags
  struct Spec {
    std::string hardware;
    std::string max_execution_time;
    std::string model_dimensions_range;
    bool operator==(const Spec&) const = default;
  };
  std::vector<Spec> specs;

  bool usable() const { return !supported_kinds.empty(); }
  bool operator==(const Discoverability&) const = default;
};

struct FileMetadata {
  std::string url;
  std::string sha256;
  std::string mime = "application/octet-stream";
  std::uint64_t size_bytes = 0;
  std::string alt;
  std::string description;  // content

  bool operator==(const FileMetadata&) const = default;
};

nostr::Event build_job_request(const JobRequest& req, const Keypair& signer,
                               std::int64_t created_at = 0);
JobRequest parse_job_request(const nostr::Event& e);

nostr::Event build_feedback(const JobFeedback& fb, const Keypair& signer,
                            std::int64_t created_at = 0);
JobFeedback parse_feedback(const nostr::Event& e);

nostr::Event build_job_result(const JobResult& result, const Keypair& signer,
                              std::int64_t created_at = 0);
JobResult parse_job_result(const nostr::Event& e);

nostr::Event build_discoverability(const Discoverability& d, const Keypair& signer,
                                   std::int64_t created_at = 0);
Discoverability parse_discoverability(const nostr::Event& e);

nostr::Event build_file_metadata(const FileMetadata& m, const Keypair& signer,
                                 std::int64_t created_at = 0);
FileMetadata parse_file_metadata(const nostr::Event& e);

// Well-known param names used by the customer/provider pair on top of the
// base schema; carried through extra_params.
namespace params {
constexpr char kRound[] = "round";
constexpr char kHyperparams[] = "hyperparams";
constexpr char kInnerOutputPrefix[] = "inner-output-";
constexpr char kOuterWeights[] = "outer-weights";
constexpr char kOuterLr[] = "outer-lr";
constexpr char kOuterMomentum[] = "outer-momentum";
constexpr char kOuterVelocity[] = "outer-velocity";
}  // namespace params

std::optional<std::string> find_extra_param(const JobRequest& req, const std::string& name);

}  // namespace fedstr::events
